#include "lorafuse/merge.hpp"

namespace lorafuse::merge {

const char* to_string(Strategy s) noexcept {
    switch (s) {
        case Strategy::linear: return "linear";
        case Strategy::cat: return "cat";
        case Strategy::ties: return "ties";
        case Strategy::magnitude_prune: return "magnitude_prune";
    }
    return "unknown";
}

Strategy parse_strategy(std::string_view name) {
    if (name == "linear") return Strategy::linear;
    if (name == "cat") return Strategy::cat;
    if (name == "ties") return Strategy::ties;
    if (name == "magnitude_prune") return Strategy::magnitude_prune;
    throw Error(ErrorKind::InvalidArgument, "unknown merge strategy '" + std::string(name) + "'");
}

double default_density(Strategy s) noexcept {
    switch (s) {
        case Strategy::ties: return 0.5;
        case Strategy::magnitude_prune: return 0.75;
        default: return 1.0;
    }
}

void check_density(double density) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw Error(ErrorKind::InvalidDensity, std::to_string(density));
    }
}

std::size_t keep_count(double density, std::size_t n) {
    check_density(density);
    const double exact = density * static_cast<double>(n);
    const double nearest = std::round(exact);
    const double k = std::abs(exact - nearest) <= 1e-9 ? nearest : std::ceil(exact);
    return std::min(n, static_cast<std::size_t>(k));
}

}  // namespace lorafuse::merge
