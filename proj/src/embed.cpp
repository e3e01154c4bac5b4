#include "lorafuse/embed.hpp"

#include <cctype>
#include <cmath>

#include "lorafuse/error.hpp"
#include "lorafuse/io.hpp"
#include "lorafuse/rng.hpp"

namespace lorafuse::embed {

namespace {

double norm_of(const Eigen::Ref<const Eigen::VectorXf>& v) {
    return std::sqrt(v.cast<double>().squaredNorm());
}

std::string label(std::string_view what) { return what.empty() ? std::string("<vector>") : std::string(what); }

}  // namespace

EmbeddingVector EmbeddingVector::normalized(const Eigen::Ref<const Eigen::VectorXf>& values,
                                            std::string_view what) {
    const double n = norm_of(values);
    if (!std::isfinite(n) || n < 1e-8) {
        throw Error(ErrorKind::NormError, label(what) + " has norm " + std::to_string(n));
    }
    return EmbeddingVector((values.cast<double>() / n).cast<float>());
}

EmbeddingVector EmbeddingVector::from_unit(const Eigen::Ref<const Eigen::VectorXf>& values,
                                           std::string_view what) {
    const double n = norm_of(values);
    if (std::isfinite(n) && std::abs(n - 1.0) <= 1e-6) {
        return EmbeddingVector(values);
    }
    return normalized(values, what);
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorKind::DimensionMismatch,
                    std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
    return a.values().cast<double>().dot(b.values().cast<double>());
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c >= 0x80 || std::isalnum(c)) {
            cur += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) {
        tokens.push_back(std::move(cur));
    }
    return tokens;
}

HashingEmbedder::HashingEmbedder(std::size_t dim, bool bag_of_words)
    : dim_(dim), bag_of_words_(bag_of_words) {
    if (dim == 0) {
        throw Error(ErrorKind::InvalidArgument, "hashing embedder dim must be >= 1");
    }
}

std::string HashingEmbedder::name() const {
    return std::string(bag_of_words_ ? "hashing-bow" : "hashing-bigram") + "/" + std::to_string(dim_);
}

EmbeddingVector HashingEmbedder::embed(std::string_view, std::string_view text) const {
    Eigen::VectorXf acc = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(dim_));
    auto scatter = [&](std::string_view feature) {
        const std::uint64_t h = SplitMix64::mix(fnv1a64(feature.data(), feature.size()));
        const auto bucket = static_cast<Eigen::Index>(h % dim_);
        acc[bucket] += (h >> 63) ? -1.0f : 1.0f;
    };

    const auto tokens = tokenize(text);
    for (const auto& t : tokens) {
        scatter(t);
    }
    if (!bag_of_words_) {
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            scatter(tokens[i - 1] + '\x1f' + tokens[i]);
        }
    }
    return EmbeddingVector::normalized(acc, "hashed text '" + std::string(text.substr(0, 40)) + "'");
}

void EmbeddingStore::add(std::string id, std::string task, EmbeddingVector vector) {
    if (vector.dim() != dim_) {
        throw Error(ErrorKind::DimensionMismatch, "record '" + id + "' has dim " +
                                                      std::to_string(vector.dim()) + ", store dim " +
                                                      std::to_string(dim_));
    }
    if (by_id_.contains(id)) {
        throw Error(ErrorKind::DuplicateId, id);
    }
    by_id_.emplace(id, entries_.size());
    entries_.push_back({std::move(id), std::move(task), std::move(vector)});
}

const StoredEmbedding* EmbeddingStore::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &entries_[it->second];
}

std::vector<char> encode_emb1(const EmbeddingStore& store) {
    io::ByteWriter w;
    w.bytes("EMB1");
    w.u32(static_cast<std::uint32_t>(store.dim()));
    w.u64(store.size());
    for (const auto& e : store.entries()) {
        w.short_string(e.id);
        w.short_string(e.task);
        w.f32s(e.vector.span());
    }
    return w.take();
}

EmbeddingStore decode_emb1(std::span<const char> bytes, std::string provenance) {
    io::ByteReader r(bytes);
    if (r.remaining() < 4 || r.bytes(4) != "EMB1") {
        throw Error(ErrorKind::FormatError, "bad EMB1 magic at offset 0");
    }
    const std::uint32_t dim = r.u32();
    const std::uint64_t count = r.u64();
    if (dim == 0) {
        r.fail("EMB1 dim is zero");
    }
    EmbeddingStore store(dim, std::move(provenance));
    Eigen::VectorXf buf(static_cast<Eigen::Index>(dim));
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t record_at = r.offset();
        std::string id = r.short_string();
        std::string task = r.short_string();
        r.f32s(std::span<float>(buf.data(), dim));
        if (store.find(id) != nullptr) {
            throw Error(ErrorKind::FormatError,
                        "duplicate id '" + id + "' at offset " + std::to_string(record_at));
        }
        auto v = EmbeddingVector::from_unit(buf, id);
        store.add(std::move(id), std::move(task), std::move(v));
    }
    if (!r.at_end()) {
        r.fail("trailing bytes after " + std::to_string(count) + " records");
    }
    return store;
}

EmbeddingStore load_embedding_store(const std::filesystem::path& path) {
    const auto data = io::read_file(path);
    return decode_emb1(data, path.filename().string());
}

void save_embedding_store(const EmbeddingStore& store, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_emb1(store));
}

EmbeddingVector StoreEmbedder::embed(std::string_view id, std::string_view) const {
    const auto* e = store_.find(id);
    if (e == nullptr) {
        throw Error(ErrorKind::UnknownText, std::string(id));
    }
    return e->vector;
}

EmbeddingVector embed_text(const EmbeddingProvider& provider, std::string_view text,
                           std::size_t expected_dim, std::string_view id) {
    if (text.empty() && id.empty()) {
        throw Error(ErrorKind::InvalidArgument, "cannot embed empty text");
    }
    if (expected_dim != 0 && provider.dim() != expected_dim) {
        throw Error(ErrorKind::DimensionMismatch, "provider " + provider.name() + " has dim " +
                                                      std::to_string(provider.dim()) + ", expected " +
                                                      std::to_string(expected_dim));
    }
    return provider.embed(id, text);
}

}  // namespace lorafuse::embed
