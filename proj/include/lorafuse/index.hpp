#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lorafuse/embed.hpp"

namespace lorafuse::index {

struct IndexedExample {
    std::string id;
    std::string task;
    embed::EmbeddingVector vector;
    std::string text;
};

struct Neighbour {
    std::string id;
    std::string task;
    double distance = 0.0;  // 1 - <q, v>, clamped to [0, 2]

    friend bool operator==(const Neighbour&, const Neighbour&) = default;
};

struct InsertStats {
    std::size_t inserted = 0;
    std::vector<std::size_t> batch_sizes;
};

struct HnswParams {
    std::size_t m = 16;
    std::size_t ef_construction = 200;
    std::size_t ef_search = 128;
    std::uint64_t seed = 42;
};

class HnswGraph;

/// Cosine distance between unit vectors, accumulated in double and clamped to [0, 2].
double cosine_distance(std::span<const float> a, std::span<const float> b);

/// Cosine index over unit vectors with task metadata. The exact scan is
/// always available and is the reference; an HNSW graph can be attached to
/// accelerate `query`.
class VectorIndex {
public:
    explicit VectorIndex(std::size_t dim);
    ~VectorIndex();
    VectorIndex(VectorIndex&&) noexcept;
    VectorIndex& operator=(VectorIndex&&) noexcept;

    /// Validates every item up front (DimensionMismatch, DuplicateId, also
    /// within the batch) so a failed call inserts nothing, then appends in
    /// chunks of `chunk` items.
    InsertStats insert_batch(std::span<const IndexedExample> items, std::size_t chunk = 4000);

    /// Builds an HNSW graph over the current rows; later inserts extend it.
    void enable_hnsw(const HnswParams& params = {});
    bool has_hnsw() const noexcept { return graph_ != nullptr; }

    /// Rejects further inserts. Queries on a frozen index are safe to run concurrently.
    void freeze() noexcept { frozen_ = true; }
    bool frozen() const noexcept { return frozen_; }

    /// min(k, size) neighbours ordered by (distance, id). Uses HNSW when enabled.
    std::vector<Neighbour> query(const embed::EmbeddingVector& q, std::size_t k) const;
    std::vector<Neighbour> query_exact(const embed::EmbeddingVector& q, std::size_t k) const;
    std::vector<Neighbour> query_approx(const embed::EmbeddingVector& q, std::size_t k) const;

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }

    const std::string& id(std::size_t row) const { return ids_.at(row); }
    const std::string& task(std::size_t row) const { return tasks_.at(row); }
    const std::string& text(std::size_t row) const { return texts_.at(row); }
    std::span<const float> vector(std::size_t row) const;

    /// Sorted distinct task labels.
    std::vector<std::string> tasks() const;

private:
    void check_query(const embed::EmbeddingVector& q, std::size_t k) const;
    std::vector<Neighbour> finish(std::vector<std::pair<double, std::size_t>> hits, std::size_t k) const;

    std::size_t dim_;
    std::vector<float> data_;
    std::vector<std::string> ids_;
    std::vector<std::string> tasks_;
    std::vector<std::string> texts_;
    std::unordered_map<std::string, std::size_t> row_of_;
    std::unique_ptr<HnswGraph> graph_;
    bool frozen_ = false;
};

/// LFIX snapshot, little-endian: "LFIX", u32 version (1), u32 dim, u64
/// count, then per record the EMB1 layout (u16 id, u16 task, dim x f32)
/// followed by u32 text length and the text bytes.
std::vector<char> encode_snapshot(const VectorIndex& index);
VectorIndex decode_snapshot(std::span<const char> bytes);

void save(const VectorIndex& index, const std::filesystem::path& path);
VectorIndex load(const std::filesystem::path& path);

}  // namespace lorafuse::index
