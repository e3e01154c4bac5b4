#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "lorafuse/index.hpp"
#include "lorafuse/rng.hpp"

namespace lorafuse::index {

/// Hierarchical navigable small world graph over row-major unit vectors
/// owned elsewhere. Rows are added in order and referenced by row number.
/// Neighbour selection uses the diversity heuristic; all ordering ties are
/// broken by row number so builds are deterministic for a given seed.
class HnswGraph {
public:
    HnswGraph(std::size_t dim, const HnswParams& params);

    /// `data` must hold at least (row + 1) * dim floats and stay valid.
    void add(std::span<const float> data, std::size_t row);

    /// Up to `k` (distance, row) pairs, nearest first.
    std::vector<std::pair<double, std::size_t>> search(std::span<const float> data,
                                                       std::span<const float> q, std::size_t k) const;

    std::size_t size() const noexcept { return links_.size(); }

private:
    using Candidate = std::pair<double, std::uint32_t>;

    std::span<const float> row(std::span<const float> data, std::uint32_t r) const {
        return data.subspan(static_cast<std::size_t>(r) * dim_, dim_);
    }
    std::vector<Candidate> search_layer(std::span<const float> data, std::span<const float> q,
                                        std::vector<Candidate> entry, std::size_t ef, int layer) const;
    std::vector<std::uint32_t> select_neighbours(std::span<const float> data,
                                                 std::vector<Candidate> candidates,
                                                 std::size_t m) const;
    std::size_t max_links(int layer) const { return layer == 0 ? 2 * params_.m : params_.m; }

    std::size_t dim_;
    HnswParams params_;
    double level_mult_;
    SplitMix64 rng_;
    std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // [row][layer] -> neighbours
    std::uint32_t entry_ = 0;
    int top_layer_ = -1;
};

}  // namespace lorafuse::index
