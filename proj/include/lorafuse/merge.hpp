#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "lorafuse/adapters.hpp"
#include "lorafuse/error.hpp"
#include "lorafuse/weights.hpp"

namespace lorafuse::merge {

enum class Strategy { linear, cat, ties, magnitude_prune };
enum class MajoritySignMethod { frequency };

const char* to_string(Strategy s) noexcept;
Strategy parse_strategy(std::string_view name);

/// TIES 0.5, magnitude_prune 0.75, 1.0 otherwise (unused).
double default_density(Strategy s) noexcept;

/// ceil(density * n), where products within 1e-9 of an integer count as that integer.
std::size_t keep_count(double density, std::size_t n);

void check_density(double density);

template <typename Scalar>
struct WeightedAdapter {
    const adapters::LoraAdapter<Scalar>* adapter = nullptr;
    double weight = 0.0;
};

template <typename Scalar>
struct MergeRequest {
    std::vector<WeightedAdapter<Scalar>> inputs;
    Strategy strategy = Strategy::linear;
    std::optional<double> density;
    MajoritySignMethod majority_sign_method = MajoritySignMethod::frequency;

    double effective_density() const { return density.value_or(default_density(strategy)); }

    void validate() const {
        if (inputs.empty()) {
            throw Error(ErrorKind::InvalidArgument, "merge request has no adapters");
        }
        double total = 0.0;
        for (const auto& in : inputs) {
            if (in.adapter == nullptr) {
                throw Error(ErrorKind::InvalidArgument, "null adapter in merge request");
            }
            if (!(in.weight >= 0.0) || !std::isfinite(in.weight)) {
                throw Error(ErrorKind::InvalidArgument, "weight of '" + in.adapter->name + "' must be >= 0");
            }
            total += in.weight;
        }
        if (std::abs(total - 1.0) > 1e-6) {
            throw Error(ErrorKind::UnnormalizedInput, "merge weights sum to " + std::to_string(total));
        }
        check_density(effective_density());
    }
};

/// Pairs each weighted task with the adapter trained on it and renormalizes
/// the selected weights to sum to 1. A weighted task without an adapter is a
/// MissingAdapter error unless `skip_missing` is set; adapters whose task
/// carries no weight are left out.
template <typename Scalar>
MergeRequest<Scalar> make_request(std::span<const adapters::LoraAdapter<Scalar>> pool,
                                  const weights::TaskWeightDistribution& dist, Strategy strategy,
                                  std::optional<double> density = std::nullopt, bool skip_missing = false) {
    MergeRequest<Scalar> req;
    req.strategy = strategy;
    req.density = density;
    double total = 0.0;
    for (const auto& e : dist.entries) {
        const adapters::LoraAdapter<Scalar>* found = nullptr;
        for (const auto& a : pool) {
            if (a.task == e.task) {
                if (found != nullptr) {
                    throw Error(ErrorKind::MissingAdapter, "more than one adapter for task '" + e.task + "'");
                }
                found = &a;
            }
        }
        if (found == nullptr) {
            if (skip_missing) {
                continue;
            }
            throw Error(ErrorKind::MissingAdapter, "no adapter for task '" + e.task + "'");
        }
        req.inputs.push_back({found, e.weight});
        total += e.weight;
    }
    if (req.inputs.empty() || !(total > 0.0)) {
        throw Error(ErrorKind::MissingAdapter, "no weighted task has an adapter");
    }
    for (auto& in : req.inputs) {
        in.weight /= total;
    }
    return req;
}

// ---------------------------------------------------------------------------
// Dense primitives. Flat indices are row-major.

/// Keeps the keep_count(density, n) entries of largest magnitude (ties go to
/// the lower flat index) and zeroes the rest.
template <typename Scalar>
RowMatrix<Scalar> trim_top_magnitude(const RowMatrix<Scalar>& m, double density) {
    check_density(density);
    const auto n = static_cast<std::size_t>(m.size());
    const std::size_t keep = keep_count(density, n);
    RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(m.rows(), m.cols());
    if (keep >= n) {
        out = m;
        return out;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const Scalar* v = m.data();
    auto larger = [v](std::size_t a, std::size_t b) {
        const Scalar ma = std::abs(v[a]);
        const Scalar mb = std::abs(v[b]);
        return ma != mb ? ma > mb : a < b;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), larger);
    for (std::size_t i = 0; i < keep; ++i) {
        out.data()[order[i]] = v[order[i]];
    }
    return out;
}

/// Per-element majority sign by frequency: each nonzero entry votes its sign,
/// zeros abstain. A tied vote goes to the side with the larger total
/// magnitude, and a tie there to +1. Elements nobody votes on get 0.
template <typename Scalar>
RowMatrix<Scalar> elect_sign(std::span<const RowMatrix<Scalar>> trimmed) {
    if (trimmed.empty()) {
        throw Error(ErrorKind::InvalidArgument, "sign election needs at least one matrix");
    }
    const auto rows = trimmed.front().rows();
    const auto cols = trimmed.front().cols();
    RowMatrix<Scalar> sign(rows, cols);
    for (Eigen::Index i = 0; i < rows * cols; ++i) {
        int pos = 0;
        int neg = 0;
        double pos_mass = 0.0;
        double neg_mass = 0.0;
        for (const auto& t : trimmed) {
            const Scalar x = t.data()[i];
            if (x > Scalar(0)) {
                ++pos;
                pos_mass += static_cast<double>(x);
            } else if (x < Scalar(0)) {
                ++neg;
                neg_mass -= static_cast<double>(x);
            }
        }
        Scalar s = Scalar(0);
        if (pos + neg > 0) {
            if (pos != neg) {
                s = pos > neg ? Scalar(1) : Scalar(-1);
            } else {
                s = neg_mass > pos_mass ? Scalar(-1) : Scalar(1);
            }
        }
        sign.data()[i] = s;
    }
    return sign;
}

/// sum_i w_i * (trimmed_i o 1[sign(trimmed_i) = M]), without rescaling by the
/// number of agreeing contributors.
template <typename Scalar>
RowMatrix<Scalar> disjoint_merge(std::span<const RowMatrix<Scalar>> trimmed, std::span<const double> weights,
                                 const RowMatrix<Scalar>& majority) {
    RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(majority.rows(), majority.cols());
    for (std::size_t k = 0; k < trimmed.size(); ++k) {
        const auto w = static_cast<Scalar>(weights[k]);
        const auto& t = trimmed[k];
        for (Eigen::Index i = 0; i < out.size(); ++i) {
            const Scalar x = t.data()[i];
            const Scalar s = x > Scalar(0) ? Scalar(1) : (x < Scalar(0) ? Scalar(-1) : Scalar(0));
            if (s != Scalar(0) && s == majority.data()[i]) {
                out.data()[i] += w * x;
            }
        }
    }
    return out;
}

namespace detail {

template <typename Scalar>
void check_same_shape(std::span<const RowMatrix<Scalar>> deltas, std::span<const double> weights) {
    if (deltas.empty()) {
        throw Error(ErrorKind::InvalidArgument, "no deltas to merge");
    }
    if (deltas.size() != weights.size()) {
        throw Error(ErrorKind::InvalidArgument, "one weight per delta required");
    }
    for (const auto& d : deltas) {
        if (d.rows() != deltas.front().rows() || d.cols() != deltas.front().cols()) {
            throw Error(ErrorKind::ShapeMismatch, "deltas differ in shape");
        }
    }
}

}  // namespace detail

/// TRIM each delta to `density`, ELECT the majority sign, MERGE the agreeing entries.
template <typename Scalar>
RowMatrix<Scalar> ties_dense(std::span<const RowMatrix<Scalar>> deltas, std::span<const double> weights,
                             double density) {
    detail::check_same_shape(deltas, weights);
    std::vector<RowMatrix<Scalar>> trimmed;
    trimmed.reserve(deltas.size());
    for (const auto& d : deltas) {
        trimmed.push_back(trim_top_magnitude(d, density));
    }
    const auto majority = elect_sign<Scalar>(trimmed);
    return disjoint_merge<Scalar>(trimmed, weights, majority);
}

/// Weighted sum of the deltas, masked to its keep_count(density, n) largest magnitudes.
template <typename Scalar>
RowMatrix<Scalar> magnitude_prune_dense(std::span<const RowMatrix<Scalar>> deltas,
                                        std::span<const double> weights, double density) {
    detail::check_same_shape(deltas, weights);
    RowMatrix<Scalar> raw = RowMatrix<Scalar>::Zero(deltas.front().rows(), deltas.front().cols());
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        raw += static_cast<Scalar>(weights[i]) * deltas[i];
    }
    return trim_top_magnitude(raw, density);
}

// ---------------------------------------------------------------------------
// Adapter-level strategies.

namespace detail {

/// Inputs sorted by (task, name) so weighted sums do not depend on request order.
template <typename Scalar>
std::vector<WeightedAdapter<Scalar>> canonical(const MergeRequest<Scalar>& req) {
    auto out = req.inputs;
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.adapter->task != b.adapter->task) return a.adapter->task < b.adapter->task;
        return a.adapter->name < b.adapter->name;
    });
    return out;
}

template <typename Scalar>
void check_modules(const MergeRequest<Scalar>& req, bool same_rank) {
    const auto& first = *req.inputs.front().adapter;
    for (const auto& in : req.inputs) {
        const auto& a = *in.adapter;
        a.validate();
        if (a.pairs.size() != first.pairs.size()) {
            throw Error(ErrorKind::ShapeMismatch, "adapter '" + a.name + "' targets a different module set");
        }
        for (const auto& [module, pair] : a.pairs) {
            auto it = first.pairs.find(module);
            if (it == first.pairs.end()) {
                throw Error(ErrorKind::ShapeMismatch, "adapter '" + a.name + "' has extra module " + module);
            }
            if (pair.in_features() != it->second.in_features() ||
                pair.out_features() != it->second.out_features()) {
                throw Error(ErrorKind::ShapeMismatch, module + ": adapter '" + a.name +
                                                          "' has a different shape than '" + first.name + "'");
            }
            if (same_rank && pair.rank() != it->second.rank()) {
                throw Error(ErrorKind::RankMismatch, module + ": adapter '" + a.name + "' has rank " +
                                                         std::to_string(pair.rank()) + ", expected " +
                                                         std::to_string(it->second.rank()));
            }
        }
    }
}

template <typename Scalar>
adapters::MergedDelta<Scalar> start(const MergeRequest<Scalar>& req,
                                    typename adapters::MergedDelta<Scalar>::Kind kind) {
    adapters::MergedDelta<Scalar> out;
    out.kind = kind;
    out.provenance.strategy = to_string(req.strategy);
    for (const auto& in : req.inputs) {
        out.provenance.inputs.push_back({in.adapter->name, in.adapter->task, in.weight});
    }
    if (req.strategy == Strategy::ties || req.strategy == Strategy::magnitude_prune) {
        out.provenance.density = req.effective_density();
    }
    if (req.strategy == Strategy::ties) {
        out.provenance.majority_sign_method = "frequency";
    }
    return out;
}

template <typename Scalar>
std::vector<RowMatrix<Scalar>> module_deltas(const std::vector<WeightedAdapter<Scalar>>& inputs,
                                             const std::string& module) {
    std::vector<RowMatrix<Scalar>> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) {
        out.push_back(adapters::delta(in.adapter->pairs.at(module), in.adapter->alpha));
    }
    return out;
}

template <typename Scalar>
std::vector<double> weights_of(const std::vector<WeightedAdapter<Scalar>>& inputs) {
    std::vector<double> w;
    w.reserve(inputs.size());
    for (const auto& in : inputs) {
        w.push_back(in.weight);
    }
    return w;
}

}  // namespace detail

/// A = sum sqrt(w_i alpha_i) A_i and B = sum sqrt(w_i alpha_i) B_i per module. Ranks must agree.
template <typename Scalar>
adapters::MergedDelta<Scalar> merge_linear(const MergeRequest<Scalar>& req) {
    req.validate();
    detail::check_modules(req, /*same_rank=*/true);
    auto out = detail::start(req, adapters::MergedDelta<Scalar>::Kind::low_rank);
    const auto inputs = detail::canonical(req);
    for (const auto& [module, first] : inputs.front().adapter->pairs) {
        adapters::LoraMatrixPair<Scalar> merged{module, RowMatrix<Scalar>::Zero(first.A.rows(), first.A.cols()),
                                                RowMatrix<Scalar>::Zero(first.B.rows(), first.B.cols())};
        for (const auto& in : inputs) {
            const auto c = static_cast<Scalar>(std::sqrt(in.weight * static_cast<double>(in.adapter->alpha)));
            const auto& p = in.adapter->pairs.at(module);
            merged.A += c * p.A;
            merged.B += c * p.B;
        }
        out.low_rank.emplace(module, std::move(merged));
    }
    return out;
}

/// Stacks w_i alpha_i A_i along the rank axis and B_i alongside, in request
/// order, so B_merged A_merged = sum w_i alpha_i B_i A_i. Ranks may differ.
template <typename Scalar>
adapters::MergedDelta<Scalar> merge_cat(const MergeRequest<Scalar>& req) {
    req.validate();
    detail::check_modules(req, /*same_rank=*/false);
    auto out = detail::start(req, adapters::MergedDelta<Scalar>::Kind::low_rank);
    for (const auto& [module, first] : req.inputs.front().adapter->pairs) {
        Eigen::Index total_rank = 0;
        for (const auto& in : req.inputs) {
            total_rank += in.adapter->pairs.at(module).rank();
        }
        adapters::LoraMatrixPair<Scalar> merged{module, RowMatrix<Scalar>(total_rank, first.in_features()),
                                                RowMatrix<Scalar>(first.out_features(), total_rank)};
        Eigen::Index offset = 0;
        for (const auto& in : req.inputs) {
            const auto& p = in.adapter->pairs.at(module);
            const auto scale = static_cast<Scalar>(in.weight * static_cast<double>(in.adapter->alpha));
            merged.A.middleRows(offset, p.rank()) = scale * p.A;
            merged.B.middleCols(offset, p.rank()) = p.B;
            offset += p.rank();
        }
        out.low_rank.emplace(module, std::move(merged));
    }
    return out;
}

/// TIES on the dense per-module deltas alpha_i B_i A_i.
template <typename Scalar>
adapters::MergedDelta<Scalar> merge_ties(const MergeRequest<Scalar>& req) {
    req.validate();
    detail::check_modules(req, /*same_rank=*/false);
    auto out = detail::start(req, adapters::MergedDelta<Scalar>::Kind::dense);
    const auto inputs = detail::canonical(req);
    const auto w = detail::weights_of(inputs);
    for (const auto& [module, _] : inputs.front().adapter->pairs) {
        const auto deltas = detail::module_deltas(inputs, module);
        out.dense.emplace(module, ties_dense<Scalar>(deltas, w, req.effective_density()));
    }
    return out;
}

template <typename Scalar>
adapters::MergedDelta<Scalar> merge_magnitude_prune(const MergeRequest<Scalar>& req) {
    req.validate();
    detail::check_modules(req, /*same_rank=*/false);
    auto out = detail::start(req, adapters::MergedDelta<Scalar>::Kind::dense);
    const auto inputs = detail::canonical(req);
    const auto w = detail::weights_of(inputs);
    for (const auto& [module, _] : inputs.front().adapter->pairs) {
        const auto deltas = detail::module_deltas(inputs, module);
        out.dense.emplace(module, magnitude_prune_dense<Scalar>(deltas, w, req.effective_density()));
    }
    return out;
}

template <typename Scalar>
adapters::MergedDelta<Scalar> merge(const MergeRequest<Scalar>& req) {
    switch (req.strategy) {
        case Strategy::linear: return merge_linear(req);
        case Strategy::cat: return merge_cat(req);
        case Strategy::ties: return merge_ties(req);
        case Strategy::magnitude_prune: return merge_magnitude_prune(req);
    }
    throw Error(ErrorKind::InvalidArgument, "unknown strategy");
}

}  // namespace lorafuse::merge
