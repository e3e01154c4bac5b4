#include "lorafuse/weights.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "lorafuse/error.hpp"

namespace lorafuse::weights {

namespace {

// Cumulative-mass comparisons forgive this much rounding so that, e.g.,
// 0.5 + 0.3 + 0.15 reaches p = 0.95.
constexpr double kCumulativeSlack = 1e-12;

bool heavier(const TaskMass& a, const TaskMass& b) {
    if (a.mass != b.mass) {
        return a.mass > b.mass;
    }
    return a.task < b.task;
}

}  // namespace

std::vector<std::string> TaskWeightDistribution::nucleus_tasks() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        out.push_back(e.task);
    }
    return out;
}

double TaskWeightDistribution::weight(std::string_view task) const {
    for (const auto& e : entries) {
        if (e.task == task) {
            return e.weight;
        }
    }
    return 0.0;
}

bool TaskWeightDistribution::contains(std::string_view task) const {
    return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.task == task; });
}

double TaskWeightDistribution::total() const {
    double s = 0.0;
    for (const auto& e : entries) {
        s += e.weight;
    }
    return s;
}

double kernel(double distance) {
    if (!(distance >= 0.0)) {
        throw Error(ErrorKind::NegativeDistance, std::to_string(distance));
    }
    return std::exp(-distance);
}

std::vector<TaskMass> aggregate_similarities(std::span<const std::pair<std::string, double>> similarities) {
    if (similarities.empty()) {
        throw Error(ErrorKind::EmptyNeighbourList, "no neighbours to aggregate");
    }
    std::map<std::string, std::vector<double>> per_task;
    for (const auto& [task, s] : similarities) {
        if (!(s >= 0.0) || !std::isfinite(s)) {
            throw Error(ErrorKind::InvalidArgument, "similarity must be finite and >= 0");
        }
        per_task[task].push_back(s);
    }

    std::vector<TaskMass> out;
    out.reserve(per_task.size());
    double total = 0.0;
    for (auto& [task, sims] : per_task) {
        std::sort(sims.begin(), sims.end());
        double sum = 0.0;
        for (double s : sims) {
            sum += s;
        }
        out.push_back({task, sum});
        total += sum;
    }
    if (!(total > 0.0)) {
        throw Error(ErrorKind::UnnormalizedInput, "similarities sum to zero");
    }
    for (auto& m : out) {
        m.mass /= total;
    }
    return out;
}

std::vector<TaskMass> aggregate(std::span<const index::Neighbour> neighbours) {
    std::vector<std::pair<std::string, double>> sims;
    sims.reserve(neighbours.size());
    for (const auto& n : neighbours) {
        sims.emplace_back(n.task, kernel(n.distance));
    }
    return aggregate_similarities(sims);
}

TaskWeightDistribution nucleus(std::span<const TaskMass> masses, double p) {
    if (!(p > 0.0 && p <= 1.0)) {
        throw Error(ErrorKind::InvalidP, std::to_string(p));
    }
    std::vector<TaskMass> sorted(masses.begin(), masses.end());
    double total = 0.0;
    for (const auto& m : sorted) {
        if (!(m.mass >= 0.0) || !std::isfinite(m.mass)) {
            throw Error(ErrorKind::UnnormalizedInput, "mass of '" + m.task + "' is negative or not finite");
        }
        total += m.mass;
    }
    if (sorted.empty() || std::abs(total - 1.0) > 1e-9) {
        throw Error(ErrorKind::UnnormalizedInput, "masses sum to " + std::to_string(total));
    }
    std::set<std::string_view> names;
    for (const auto& m : sorted) {
        if (!names.insert(m.task).second) {
            throw Error(ErrorKind::InvalidArgument, "duplicate task '" + m.task + "'");
        }
    }
    std::sort(sorted.begin(), sorted.end(), heavier);

    std::size_t keep = 0;
    double cumulative = 0.0;
    for (const auto& m : sorted) {
        if (m.mass <= 0.0) {
            break;
        }
        cumulative += m.mass;
        ++keep;
        if (p < 1.0 && cumulative >= p - kCumulativeSlack) {
            break;
        }
    }

    TaskWeightDistribution dist;
    dist.p_used = p;
    dist.entries.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        dist.entries.push_back({sorted[i].task, sorted[i].mass / cumulative});
    }
    return dist;
}

TaskWeightDistribution task_weights(const embed::EmbeddingVector& q, const index::VectorIndex& index,
                                    std::size_t k, double p) {
    const auto neighbours = index.query(q, k);
    const auto masses = aggregate(neighbours);
    return nucleus(masses, p);
}

std::string to_json(const TaskWeightDistribution& dist, std::size_t k) {
    nlohmann::ordered_json j;
    j["weights"] = nlohmann::ordered_json::object();
    for (const auto& e : dist.entries) {
        j["weights"][e.task] = e.weight;
    }
    j["p"] = dist.p_used;
    j["k"] = k;
    return j.dump(2) + "\n";
}

TaskWeightDistribution parse_json(std::string_view text) {
    TaskWeightDistribution dist;
    try {
        const auto j = nlohmann::json::parse(text);
        const auto& w = j.at("weights");
        if (!w.is_object()) {
            throw Error(ErrorKind::FormatError, "\"weights\" must be an object");
        }
        for (const auto& [task, value] : w.items()) {
            if (!value.is_number()) {
                throw Error(ErrorKind::FormatError, "weight of '" + task + "' is not a number");
            }
            const double v = value.get<double>();
            if (!std::isfinite(v) || v < 0.0) {
                throw Error(ErrorKind::FormatError, "weight of '" + task + "' must be finite and >= 0");
            }
            if (v > 0.0) {
                dist.entries.push_back({task, v});
            }
        }
        dist.p_used = j.value("p", 1.0);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::FormatError, std::string("weights json: ") + e.what());
    }
    if (dist.entries.empty()) {
        throw Error(ErrorKind::FormatError, "weights json has no positive weights");
    }
    std::stable_sort(dist.entries.begin(), dist.entries.end(), [](const auto& a, const auto& b) {
        return a.weight != b.weight ? a.weight > b.weight : a.task < b.task;
    });
    return dist;
}

TaskWeightDistribution renormalized(TaskWeightDistribution dist) {
    const double total = dist.total();
    if (!(total > 0.0)) {
        throw Error(ErrorKind::UnnormalizedInput, "weights sum to " + std::to_string(total));
    }
    for (auto& e : dist.entries) {
        e.weight /= total;
    }
    return dist;
}

}  // namespace lorafuse::weights
