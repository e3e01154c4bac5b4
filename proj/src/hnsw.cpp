#include "hnsw.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <unordered_set>

#include "lorafuse/error.hpp"

namespace lorafuse::index {

HnswGraph::HnswGraph(std::size_t dim, const HnswParams& params)
    : dim_(dim), params_(params), level_mult_(0.0), rng_(params.seed) {
    if (params.m < 2 || params.ef_construction == 0 || params.ef_search == 0) {
        throw Error(ErrorKind::InvalidArgument, "HNSW needs m >= 2 and positive ef values");
    }
    level_mult_ = 1.0 / std::log(static_cast<double>(params.m));
}

std::vector<HnswGraph::Candidate> HnswGraph::search_layer(std::span<const float> data,
                                                          std::span<const float> q,
                                                          std::vector<Candidate> entry, std::size_t ef,
                                                          int layer) const {
    std::unordered_set<std::uint32_t> visited;
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> frontier;
    std::priority_queue<Candidate> best;  // max-heap, worst on top

    for (const auto& c : entry) {
        if (visited.insert(c.second).second) {
            frontier.push(c);
            best.push(c);
        }
    }
    while (best.size() > ef) {
        best.pop();
    }

    while (!frontier.empty()) {
        const Candidate c = frontier.top();
        frontier.pop();
        if (best.size() >= ef && c > best.top()) {
            break;
        }
        for (std::uint32_t nb : links_[c.second][static_cast<std::size_t>(layer)]) {
            if (!visited.insert(nb).second) {
                continue;
            }
            const Candidate cand{cosine_distance(q, row(data, nb)), nb};
            if (best.size() < ef || cand < best.top()) {
                frontier.push(cand);
                best.push(cand);
                if (best.size() > ef) {
                    best.pop();
                }
            }
        }
    }

    std::vector<Candidate> out;
    out.reserve(best.size());
    while (!best.empty()) {
        out.push_back(best.top());
        best.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::vector<std::uint32_t> HnswGraph::select_neighbours(std::span<const float> data,
                                                        std::vector<Candidate> candidates,
                                                        std::size_t m) const {
    std::sort(candidates.begin(), candidates.end());
    std::vector<std::uint32_t> chosen;
    std::vector<std::uint32_t> pruned;
    for (const auto& [dist, r] : candidates) {
        if (chosen.size() >= m) {
            break;
        }
        bool diverse = true;
        for (std::uint32_t s : chosen) {
            if (cosine_distance(row(data, r), row(data, s)) < dist) {
                diverse = false;
                break;
            }
        }
        (diverse ? chosen : pruned).push_back(r);
    }
    // Top up with the closest pruned candidates so low-degree nodes stay reachable.
    for (std::size_t i = 0; i < pruned.size() && chosen.size() < m; ++i) {
        chosen.push_back(pruned[i]);
    }
    return chosen;
}

void HnswGraph::add(std::span<const float> data, std::size_t row_index) {
    if (row_index != links_.size()) {
        throw Error(ErrorKind::InvalidArgument, "HNSW rows must be added in order");
    }
    const auto node = static_cast<std::uint32_t>(row_index);
    double u = rng_.uniform();
    while (u <= 0.0) {
        u = rng_.uniform();
    }
    const int level = static_cast<int>(std::floor(-std::log(u) * level_mult_));
    links_.emplace_back(static_cast<std::size_t>(level) + 1);

    if (top_layer_ < 0) {
        entry_ = node;
        top_layer_ = level;
        return;
    }

    const auto q = row(data, node);
    std::vector<Candidate> eps{{cosine_distance(q, row(data, entry_)), entry_}};
    for (int lc = top_layer_; lc > level; --lc) {
        eps = search_layer(data, q, eps, 1, lc);
    }
    for (int lc = std::min(level, top_layer_); lc >= 0; --lc) {
        auto found = search_layer(data, q, eps, params_.ef_construction, lc);
        const auto layer = static_cast<std::size_t>(lc);
        links_[node][layer] = select_neighbours(data, found, params_.m);
        for (std::uint32_t nb : links_[node][layer]) {
            auto& back = links_[nb][layer];
            back.push_back(node);
            if (back.size() > max_links(lc)) {
                std::vector<Candidate> cands;
                cands.reserve(back.size());
                for (std::uint32_t x : back) {
                    cands.emplace_back(cosine_distance(row(data, nb), row(data, x)), x);
                }
                back = select_neighbours(data, std::move(cands), max_links(lc));
            }
        }
        eps = std::move(found);
    }
    if (level > top_layer_) {
        top_layer_ = level;
        entry_ = node;
    }
}

std::vector<std::pair<double, std::size_t>> HnswGraph::search(std::span<const float> data,
                                                              std::span<const float> q,
                                                              std::size_t k) const {
    std::vector<std::pair<double, std::size_t>> out;
    if (top_layer_ < 0) {
        return out;
    }
    std::vector<Candidate> eps{{cosine_distance(q, row(data, entry_)), entry_}};
    for (int lc = top_layer_; lc > 0; --lc) {
        eps = search_layer(data, q, eps, 1, lc);
    }
    // A beam of only ef_search loses recall once k approaches it.
    const auto found = search_layer(data, q, eps, std::max(params_.ef_search, 2 * k), 0);
    for (std::size_t i = 0; i < found.size() && i < k; ++i) {
        out.emplace_back(found[i].first, found[i].second);
    }
    return out;
}

}  // namespace lorafuse::index
