#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lorafuse/error.hpp"

namespace lorafuse {

/// Row-major dense matrix; flat index i maps to (i / cols, i % cols).
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace lorafuse

namespace lorafuse::adapters {

/// Index of the first non-finite entry, if any.
template <typename Derived>
std::optional<Eigen::Index> first_non_finite(const Eigen::DenseBase<Derived>& m) {
    const auto& d = m.derived();
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
        for (Eigen::Index c = 0; c < d.cols(); ++c) {
            if (!std::isfinite(d(r, c))) {
                return r * d.cols() + c;
            }
        }
    }
    return std::nullopt;
}

/// One target module's low-rank factors: delta W = B * A with A (r x d_in)
/// and B (d_out x r).
template <typename Scalar>
struct LoraMatrixPair {
    std::string target_module;
    RowMatrix<Scalar> A;
    RowMatrix<Scalar> B;

    Eigen::Index rank() const noexcept { return A.rows(); }
    Eigen::Index in_features() const noexcept { return A.cols(); }
    Eigen::Index out_features() const noexcept { return B.rows(); }

    void validate() const {
        if (A.rows() != B.cols()) {
            throw Error(ErrorKind::ShapeMismatch,
                        target_module + ": A has " + std::to_string(A.rows()) + " rows but B has " +
                            std::to_string(B.cols()) + " columns");
        }
        if (auto i = first_non_finite(A)) {
            throw Error(ErrorKind::NonFinite, target_module + ".A[" + std::to_string(*i) + "]");
        }
        if (auto i = first_non_finite(B)) {
            throw Error(ErrorKind::NonFinite, target_module + ".B[" + std::to_string(*i) + "]");
        }
    }

    template <typename To>
    LoraMatrixPair<To> cast() const {
        return {target_module, A.template cast<To>(), B.template cast<To>()};
    }
};

template <typename Scalar>
struct LoraAdapter {
    std::string name;
    std::string task;
    Scalar alpha = Scalar(1);
    std::map<std::string, LoraMatrixPair<Scalar>> pairs;  // keyed by target module

    /// Rank shared by every pair. Call validate() first.
    Eigen::Index rank() const { return pairs.empty() ? 0 : pairs.begin()->second.rank(); }

    void validate() const {
        if (!(alpha > Scalar(0)) || !std::isfinite(alpha)) {
            throw Error(ErrorKind::InvalidArgument, "adapter '" + name + "': alpha must be positive");
        }
        if (pairs.empty()) {
            throw Error(ErrorKind::InvalidArgument, "adapter '" + name + "' has no target modules");
        }
        for (const auto& [module, pair] : pairs) {
            if (module != pair.target_module) {
                throw Error(ErrorKind::InvalidArgument, "adapter '" + name + "': pair key '" + module +
                                                            "' differs from its target_module");
            }
            pair.validate();
            if (pair.rank() != rank()) {
                throw Error(ErrorKind::RankMismatch, "adapter '" + name + "': module " + module +
                                                         " has rank " + std::to_string(pair.rank()) +
                                                         ", expected " + std::to_string(rank()));
            }
        }
    }

    template <typename To>
    LoraAdapter<To> cast() const {
        LoraAdapter<To> out{name, task, static_cast<To>(alpha), {}};
        for (const auto& [module, pair] : pairs) {
            out.pairs.emplace(module, pair.template cast<To>());
        }
        return out;
    }
};

/// alpha * B * A.
template <typename Scalar>
RowMatrix<Scalar> delta(const LoraMatrixPair<Scalar>& pair, Scalar alpha) {
    if (pair.A.rows() != pair.B.cols()) {
        throw Error(ErrorKind::ShapeMismatch, pair.target_module + ": B cols != A rows");
    }
    RowMatrix<Scalar> out = pair.B * pair.A;
    out *= alpha;
    return out;
}

/// Output of a merge. Low-rank merges fill `low_rank`, dense merges fill
/// `dense`; exactly one map is non-empty.
template <typename Scalar>
struct MergedDelta {
    enum class Kind { low_rank, dense };

    struct Input {
        std::string adapter;
        std::string task;
        double weight = 0.0;
    };

    struct Provenance {
        std::string strategy;
        std::vector<Input> inputs;
        std::optional<double> density;
        std::string majority_sign_method;
    };

    Kind kind = Kind::low_rank;
    std::map<std::string, LoraMatrixPair<Scalar>> low_rank;
    std::map<std::string, RowMatrix<Scalar>> dense;
    Provenance provenance;

    std::vector<std::string> modules() const {
        std::vector<std::string> out;
        if (kind == Kind::low_rank) {
            for (const auto& [m, _] : low_rank) out.push_back(m);
        } else {
            for (const auto& [m, _] : dense) out.push_back(m);
        }
        return out;
    }

    Eigen::Index effective_rank(const std::string& module) const {
        return kind == Kind::low_rank ? low_rank.at(module).rank() : 0;
    }

    /// The dense delta W for one module (B_merged * A_merged for low-rank kinds).
    RowMatrix<Scalar> materialize(const std::string& module) const {
        if (kind == Kind::dense) {
            return dense.at(module);
        }
        const auto& p = low_rank.at(module);
        return p.B * p.A;
    }
};

using Adapter = LoraAdapter<float>;
using MatrixPair = LoraMatrixPair<float>;

/// Adapter directory: manifest.json plus raw little-endian row-major f32
/// tensors `{module}.A.bin` (rank x in_features) and `{module}.B.bin`
/// (out_features x rank).
void save_adapter(const Adapter& adapter, const std::filesystem::path& dir);

/// Throws FormatError (manifest), ShapeMismatch (file size vs manifest),
/// NonFinite (tensor, flat index).
Adapter load_adapter(const std::filesystem::path& dir);

/// FNV-1a over the manifest, then each tensor file name and bytes, in file-name order.
std::uint64_t fingerprint(const std::filesystem::path& dir);

/// Writes a merge result. Low-rank kinds use the adapter format with
/// alpha = 1 (scaling is already folded into the factors); dense kinds write
/// `{module}.delta.bin` (out_features x in_features). `input_hashes` is
/// recorded in the provenance block, keyed by adapter name.
void save_merged(const MergedDelta<float>& merged, const std::filesystem::path& dir,
                 const std::map<std::string, std::string>& input_hashes = {});
MergedDelta<float> load_merged(const std::filesystem::path& dir);

/// Subdirectories of `root` containing a manifest.json, loaded and sorted by directory name.
std::vector<Adapter> load_adapter_collection(const std::filesystem::path& root);

/// Module names become file names, so only [A-Za-z0-9_.-] is allowed.
bool is_valid_module_name(const std::string& name);

}  // namespace lorafuse::adapters
