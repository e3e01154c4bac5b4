#include "lorafuse/index.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include "hnsw.hpp"
#include "lorafuse/error.hpp"
#include "lorafuse/io.hpp"

namespace lorafuse::index {

double cosine_distance(std::span<const float> a, std::span<const float> b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return std::clamp(1.0 - dot, 0.0, 2.0);
}

VectorIndex::VectorIndex(std::size_t dim) : dim_(dim) {
    if (dim == 0) {
        throw Error(ErrorKind::InvalidArgument, "index dim must be >= 1");
    }
}

VectorIndex::~VectorIndex() = default;
VectorIndex::VectorIndex(VectorIndex&&) noexcept = default;
VectorIndex& VectorIndex::operator=(VectorIndex&&) noexcept = default;

InsertStats VectorIndex::insert_batch(std::span<const IndexedExample> items, std::size_t chunk) {
    if (chunk == 0) {
        throw Error(ErrorKind::InvalidArgument, "chunk must be >= 1");
    }
    if (frozen_) {
        throw Error(ErrorKind::InvalidArgument, "index is frozen");
    }
    std::unordered_set<std::string_view> batch_ids;
    for (const auto& item : items) {
        if (item.vector.dim() != dim_) {
            throw Error(ErrorKind::DimensionMismatch, "item '" + item.id + "' has dim " +
                                                          std::to_string(item.vector.dim()) +
                                                          ", index dim " + std::to_string(dim_));
        }
        if (item.task.empty()) {
            throw Error(ErrorKind::InvalidArgument, "item '" + item.id + "' has an empty task label");
        }
        if (row_of_.contains(item.id) || !batch_ids.insert(item.id).second) {
            throw Error(ErrorKind::DuplicateId, item.id);
        }
    }

    InsertStats stats;
    for (std::size_t begin = 0; begin < items.size(); begin += chunk) {
        const std::size_t end = std::min(items.size(), begin + chunk);
        data_.reserve(data_.size() + (end - begin) * dim_);
        for (std::size_t i = begin; i < end; ++i) {
            const auto& item = items[i];
            const std::size_t row = ids_.size();
            auto v = item.vector.span();
            data_.insert(data_.end(), v.begin(), v.end());
            ids_.push_back(item.id);
            tasks_.push_back(item.task);
            texts_.push_back(item.text);
            row_of_.emplace(item.id, row);
            if (graph_) {
                graph_->add(data_, row);
            }
        }
        stats.batch_sizes.push_back(end - begin);
        stats.inserted += end - begin;
    }
    return stats;
}

void VectorIndex::enable_hnsw(const HnswParams& params) {
    auto graph = std::make_unique<HnswGraph>(dim_, params);
    for (std::size_t row = 0; row < size(); ++row) {
        graph->add(data_, row);
    }
    graph_ = std::move(graph);
}

std::span<const float> VectorIndex::vector(std::size_t row) const {
    if (row >= size()) {
        throw Error(ErrorKind::InvalidArgument, "row out of range");
    }
    return std::span<const float>(data_).subspan(row * dim_, dim_);
}

std::vector<std::string> VectorIndex::tasks() const {
    std::set<std::string> uniq(tasks_.begin(), tasks_.end());
    return {uniq.begin(), uniq.end()};
}

void VectorIndex::check_query(const embed::EmbeddingVector& q, std::size_t k) const {
    if (empty()) {
        throw Error(ErrorKind::EmptyIndex, "query on an empty index");
    }
    if (k == 0) {
        throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
    }
    if (q.dim() != dim_) {
        throw Error(ErrorKind::DimensionMismatch, "query dim " + std::to_string(q.dim()) +
                                                      ", index dim " + std::to_string(dim_));
    }
}

std::vector<Neighbour> VectorIndex::finish(std::vector<std::pair<double, std::size_t>> hits,
                                           std::size_t k) const {
    auto before = [this](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return a.first < b.first;
        }
        return ids_[a.second] < ids_[b.second];
    };
    k = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), before);
    std::vector<Neighbour> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const auto row = hits[i].second;
        out.push_back({ids_[row], tasks_[row], hits[i].first});
    }
    return out;
}

std::vector<Neighbour> VectorIndex::query_exact(const embed::EmbeddingVector& q, std::size_t k) const {
    check_query(q, k);
    std::vector<std::pair<double, std::size_t>> hits(size());
    const auto qs = q.span();
    for (std::size_t row = 0; row < size(); ++row) {
        hits[row] = {cosine_distance(qs, vector(row)), row};
    }
    return finish(std::move(hits), k);
}

std::vector<Neighbour> VectorIndex::query_approx(const embed::EmbeddingVector& q, std::size_t k) const {
    check_query(q, k);
    if (!graph_) {
        throw Error(ErrorKind::InvalidArgument, "HNSW backend not enabled");
    }
    return finish(graph_->search(data_, q.span(), k), k);
}

std::vector<Neighbour> VectorIndex::query(const embed::EmbeddingVector& q, std::size_t k) const {
    return graph_ ? query_approx(q, k) : query_exact(q, k);
}

namespace {
constexpr std::uint32_t kSnapshotVersion = 1;
}

std::vector<char> encode_snapshot(const VectorIndex& index) {
    io::ByteWriter w;
    w.bytes("LFIX");
    w.u32(kSnapshotVersion);
    w.u32(static_cast<std::uint32_t>(index.dim()));
    w.u64(index.size());
    for (std::size_t row = 0; row < index.size(); ++row) {
        w.short_string(index.id(row));
        w.short_string(index.task(row));
        w.f32s(index.vector(row));
        const auto& text = index.text(row);
        w.u32(static_cast<std::uint32_t>(text.size()));
        w.bytes(text);
    }
    return w.take();
}

VectorIndex decode_snapshot(std::span<const char> bytes) {
    io::ByteReader r(bytes);
    if (r.remaining() < 4 || r.bytes(4) != "LFIX") {
        throw Error(ErrorKind::FormatError, "bad LFIX magic at offset 0");
    }
    if (const auto version = r.u32(); version != kSnapshotVersion) {
        r.fail("unsupported LFIX version " + std::to_string(version));
    }
    const std::uint32_t dim = r.u32();
    const std::uint64_t count = r.u64();
    if (dim == 0) {
        r.fail("LFIX dim is zero");
    }
    VectorIndex index(dim);
    std::vector<IndexedExample> items;
    items.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, r.remaining() / (4 + 4ULL * dim) + 1)));
    Eigen::VectorXf buf(static_cast<Eigen::Index>(dim));
    for (std::uint64_t i = 0; i < count; ++i) {
        IndexedExample item;
        item.id = r.short_string();
        item.task = r.short_string();
        r.f32s(std::span<float>(buf.data(), dim));
        item.vector = embed::EmbeddingVector::from_unit(buf, item.id);
        item.text = r.bytes(r.u32());
        items.push_back(std::move(item));
    }
    if (!r.at_end()) {
        r.fail("trailing bytes after " + std::to_string(count) + " records");
    }
    try {
        index.insert_batch(items, items.empty() ? 1 : items.size());
    } catch (const Error& e) {
        throw Error(ErrorKind::FormatError, std::string("invalid snapshot record: ") + e.what());
    }
    return index;
}

void save(const VectorIndex& index, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_snapshot(index));
}

VectorIndex load(const std::filesystem::path& path) {
    const auto data = io::read_file(path);
    return decode_snapshot(data);
}

}  // namespace lorafuse::index
