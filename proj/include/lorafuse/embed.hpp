#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace lorafuse::embed {

/// Unit-norm f32 vector. The only way to build one is through `normalized`
/// (or `from_unit` for values already known to be unit length), so every
/// instance satisfies | ||v|| - 1 | <= 1e-5.
class EmbeddingVector {
public:
    EmbeddingVector() = default;

    /// Scales `values` to unit length (norm computed in double). Throws
    /// NormError when the norm is below 1e-8 or not finite.
    static EmbeddingVector normalized(const Eigen::Ref<const Eigen::VectorXf>& values,
                                      std::string_view what = {});

    /// Keeps the bits of `values` if already within 1e-6 of unit norm, otherwise
    /// renormalizes. This makes load-save cycles a fixed point.
    static EmbeddingVector from_unit(const Eigen::Ref<const Eigen::VectorXf>& values,
                                     std::string_view what = {});

    std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.size()); }
    const Eigen::VectorXf& values() const noexcept { return values_; }
    std::span<const float> span() const noexcept { return {values_.data(), dim()}; }

    friend bool operator==(const EmbeddingVector& a, const EmbeddingVector& b) {
        return a.values_.size() == b.values_.size() && a.values_ == b.values_;
    }

private:
    explicit EmbeddingVector(Eigen::VectorXf v) : values_(std::move(v)) {}

    Eigen::VectorXf values_;
};

/// Cosine similarity of two unit vectors with double accumulation.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual std::size_t dim() const = 0;
    virtual std::string name() const = 0;

    /// `id` identifies the text for providers backed by precomputed vectors;
    /// content-based providers ignore it.
    virtual EmbeddingVector embed(std::string_view id, std::string_view text) const = 0;
};

/// Lowercased ASCII alphanumeric runs; bytes >= 0x80 are kept as token characters.
std::vector<std::string> tokenize(std::string_view text);

/// Feature hashing: each token's FNV-1a hash (finalized with SplitMix) picks a
/// bucket (hash mod dim) and a sign (top bit). In bag-of-words mode (default)
/// the result ignores token order; otherwise adjacent-token bigrams are hashed too.
class HashingEmbedder final : public EmbeddingProvider {
public:
    explicit HashingEmbedder(std::size_t dim, bool bag_of_words = true);

    std::size_t dim() const override { return dim_; }
    std::string name() const override;
    EmbeddingVector embed(std::string_view id, std::string_view text) const override;

private:
    std::size_t dim_;
    bool bag_of_words_;
};

struct StoredEmbedding {
    std::string id;
    std::string task;
    EmbeddingVector vector;
};

/// In-memory image of an EMB1 file. Record order is preserved so a
/// load-save round trip is byte-stable.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    explicit EmbeddingStore(std::size_t dim, std::string provenance = {})
        : dim_(dim), provenance_(std::move(provenance)) {}

    /// Throws DuplicateId or DimensionMismatch.
    void add(std::string id, std::string task, EmbeddingVector vector);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const std::string& provenance() const noexcept { return provenance_; }
    const std::vector<StoredEmbedding>& entries() const noexcept { return entries_; }

    /// nullptr when absent.
    const StoredEmbedding* find(std::string_view id) const;

private:
    std::size_t dim_ = 0;
    std::string provenance_;
    std::vector<StoredEmbedding> entries_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// EMB1, little-endian: "EMB1", u32 dim, u64 count, then per record u16 id
/// length, id, u16 task length, task, dim x f32.
std::vector<char> encode_emb1(const EmbeddingStore& store);
EmbeddingStore decode_emb1(std::span<const char> bytes, std::string provenance = "EMB1");

EmbeddingStore load_embedding_store(const std::filesystem::path& path);
void save_embedding_store(const EmbeddingStore& store, const std::filesystem::path& path);

/// Looks texts up by id in a store; unknown ids raise UnknownText.
class StoreEmbedder final : public EmbeddingProvider {
public:
    explicit StoreEmbedder(EmbeddingStore store) : store_(std::move(store)) {}

    std::size_t dim() const override { return store_.dim(); }
    std::string name() const override { return "store:" + store_.provenance(); }
    EmbeddingVector embed(std::string_view id, std::string_view text) const override;

    const EmbeddingStore& store() const noexcept { return store_; }

private:
    EmbeddingStore store_;
};

/// Embeds `text` and checks the result against `expected_dim` (0 = no check).
/// Throws InvalidArgument for empty text, DimensionMismatch on a dim disagreement.
EmbeddingVector embed_text(const EmbeddingProvider& provider, std::string_view text,
                           std::size_t expected_dim = 0, std::string_view id = {});

}  // namespace lorafuse::embed
