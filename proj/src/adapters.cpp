#include "lorafuse/adapters.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "lorafuse/io.hpp"
#include "lorafuse/rng.hpp"

namespace lorafuse::adapters {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kAdapterFormat = "lorafuse-adapter";
constexpr const char* kDenseFormat = "lorafuse-dense-delta";
constexpr int kFormatVersion = 1;

void write_tensor(const fs::path& path, const RowMatrix<float>& m) {
    io::ByteWriter w;
    w.f32s(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
    io::write_file_atomic(path, w.buffer());
}

RowMatrix<float> read_tensor(const fs::path& path, Eigen::Index rows, Eigen::Index cols,
                             const std::string& tensor) {
    const auto bytes = io::read_file(path);
    const auto expected = static_cast<std::size_t>(rows * cols) * 4;
    if (bytes.size() != expected) {
        throw Error(ErrorKind::ShapeMismatch, tensor + ": manifest shape " + std::to_string(rows) + "x" +
                                                  std::to_string(cols) + " needs " +
                                                  std::to_string(expected) + " bytes, file has " +
                                                  std::to_string(bytes.size()));
    }
    RowMatrix<float> m(rows, cols);
    io::ByteReader r(bytes);
    r.f32s(std::span<float>(m.data(), static_cast<std::size_t>(m.size())));
    if (auto i = first_non_finite(m)) {
        throw Error(ErrorKind::NonFinite, tensor + "[" + std::to_string(*i) + "]");
    }
    return m;
}

ordered_json read_manifest(const fs::path& dir) {
    const auto path = dir / "manifest.json";
    if (!fs::exists(path)) {
        throw Error(ErrorKind::FormatError, "missing " + path.string());
    }
    const auto bytes = io::read_file(path);
    try {
        return ordered_json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::FormatError, path.string() + ": " + e.what());
    }
}

void write_manifest(const fs::path& dir, const ordered_json& j) {
    io::write_text_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

void check_module_name(const std::string& name) {
    if (!is_valid_module_name(name)) {
        throw Error(ErrorKind::FormatError, "invalid target module name '" + name + "'");
    }
}

ordered_json provenance_json(const MergedDelta<float>::Provenance& p,
                             const std::map<std::string, std::string>& hashes) {
    ordered_json j;
    j["strategy"] = p.strategy;
    if (p.density) {
        j["density"] = *p.density;
    }
    if (!p.majority_sign_method.empty()) {
        j["majority_sign_method"] = p.majority_sign_method;
    }
    j["inputs"] = ordered_json::array();
    for (const auto& in : p.inputs) {
        ordered_json e;
        e["adapter"] = in.adapter;
        e["task"] = in.task;
        e["weight"] = in.weight;
        if (auto it = hashes.find(in.adapter); it != hashes.end()) {
            e["hash"] = it->second;
        }
        j["inputs"].push_back(std::move(e));
    }
    return j;
}

MergedDelta<float>::Provenance parse_provenance(const ordered_json& j) {
    MergedDelta<float>::Provenance p;
    p.strategy = j.value("strategy", std::string());
    if (j.contains("density")) {
        p.density = j.at("density").get<double>();
    }
    p.majority_sign_method = j.value("majority_sign_method", std::string());
    if (j.contains("inputs")) {
        for (const auto& e : j.at("inputs")) {
            p.inputs.push_back({e.at("adapter").get<std::string>(), e.at("task").get<std::string>(),
                                e.at("weight").get<double>()});
        }
    }
    return p;
}

ordered_json adapter_manifest(const std::string& name, const std::string& task, float alpha,
                              const std::map<std::string, LoraMatrixPair<float>>& pairs) {
    ordered_json j;
    j["format"] = kAdapterFormat;
    j["version"] = kFormatVersion;
    j["name"] = name;
    j["task"] = task;
    j["alpha"] = alpha;
    j["rank"] = pairs.empty() ? 0 : pairs.begin()->second.rank();
    j["scaling_convention"] = "alpha";
    j["modules"] = ordered_json::array();
    for (const auto& [module, pair] : pairs) {
        check_module_name(module);
        ordered_json m;
        m["name"] = module;
        m["rank"] = pair.rank();
        m["in_features"] = pair.in_features();
        m["out_features"] = pair.out_features();
        j["modules"].push_back(std::move(m));
    }
    return j;
}

void write_pairs(const fs::path& dir, const std::map<std::string, LoraMatrixPair<float>>& pairs) {
    for (const auto& [module, pair] : pairs) {
        write_tensor(dir / (module + ".A.bin"), pair.A);
        write_tensor(dir / (module + ".B.bin"), pair.B);
    }
}

}  // namespace

bool is_valid_module_name(const std::string& name) {
    if (name.empty() || name == "." || name == ".." || name == "manifest") {
        return false;
    }
    return std::all_of(name.begin(), name.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
               c == '-' || c == '.';
    });
}

void save_adapter(const Adapter& adapter, const fs::path& dir) {
    adapter.validate();
    fs::create_directories(dir);
    write_pairs(dir, adapter.pairs);
    write_manifest(dir, adapter_manifest(adapter.name, adapter.task, adapter.alpha, adapter.pairs));
}

Adapter load_adapter(const fs::path& dir) {
    const auto j = read_manifest(dir);
    Adapter adapter;
    try {
        if (j.value("format", std::string()) != kAdapterFormat) {
            throw Error(ErrorKind::FormatError, dir.string() + ": not a lorafuse adapter manifest");
        }
        if (j.value("scaling_convention", std::string("alpha")) != "alpha") {
            throw Error(ErrorKind::FormatError, dir.string() + ": unsupported scaling_convention");
        }
        adapter.name = j.at("name").get<std::string>();
        adapter.task = j.at("task").get<std::string>();
        adapter.alpha = j.at("alpha").get<float>();
        const auto rank = j.at("rank").get<Eigen::Index>();
        for (const auto& m : j.at("modules")) {
            const auto module = m.at("name").get<std::string>();
            check_module_name(module);
            const auto r = m.value("rank", rank);
            if (r != rank) {
                throw Error(ErrorKind::RankMismatch, module + ": rank " + std::to_string(r) +
                                                         " differs from adapter rank " + std::to_string(rank));
            }
            const auto in = m.at("in_features").get<Eigen::Index>();
            const auto out = m.at("out_features").get<Eigen::Index>();
            if (r <= 0 || in <= 0 || out <= 0) {
                throw Error(ErrorKind::FormatError, module + ": non-positive dimension in manifest");
            }
            LoraMatrixPair<float> pair{module, read_tensor(dir / (module + ".A.bin"), r, in, module + ".A"),
                                       read_tensor(dir / (module + ".B.bin"), out, r, module + ".B")};
            if (!adapter.pairs.emplace(module, std::move(pair)).second) {
                throw Error(ErrorKind::FormatError, "duplicate module '" + module + "' in manifest");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::FormatError, dir.string() + "/manifest.json: " + e.what());
    }
    adapter.validate();
    return adapter;
}

std::uint64_t fingerprint(const fs::path& dir) {
    const auto manifest = io::read_file(dir / "manifest.json");
    std::uint64_t h = fnv1a64(manifest.data(), manifest.size());
    std::vector<fs::path> tensors;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".bin") {
            tensors.push_back(entry.path());
        }
    }
    std::sort(tensors.begin(), tensors.end());
    for (const auto& t : tensors) {
        const auto name = t.filename().string();
        h = fnv1a64(name.data(), name.size(), h);
        const auto bytes = io::read_file(t);
        h = fnv1a64(bytes.data(), bytes.size(), h);
    }
    return h;
}

void save_merged(const MergedDelta<float>& merged, const fs::path& dir,
                 const std::map<std::string, std::string>& input_hashes) {
    fs::create_directories(dir);
    if (merged.kind == MergedDelta<float>::Kind::low_rank) {
        auto j = adapter_manifest("merged-" + merged.provenance.strategy, "merged", 1.0f, merged.low_rank);
        j["kind"] = "low_rank";
        j["provenance"] = provenance_json(merged.provenance, input_hashes);
        write_pairs(dir, merged.low_rank);
        write_manifest(dir, j);
        return;
    }

    ordered_json j;
    j["format"] = kDenseFormat;
    j["version"] = kFormatVersion;
    j["kind"] = "dense";
    j["modules"] = ordered_json::array();
    for (const auto& [module, m] : merged.dense) {
        check_module_name(module);
        write_tensor(dir / (module + ".delta.bin"), m);
        ordered_json e;
        e["name"] = module;
        e["out_features"] = m.rows();
        e["in_features"] = m.cols();
        e["nonzero"] = static_cast<std::int64_t>((m.array() != 0.0f).count());
        j["modules"].push_back(std::move(e));
    }
    j["provenance"] = provenance_json(merged.provenance, input_hashes);
    write_manifest(dir, j);
}

MergedDelta<float> load_merged(const fs::path& dir) {
    const auto j = read_manifest(dir);
    MergedDelta<float> merged;
    try {
        const auto format = j.value("format", std::string());
        if (format == kAdapterFormat) {
            auto adapter = load_adapter(dir);
            merged.kind = MergedDelta<float>::Kind::low_rank;
            // Scaling is folded in only for merge outputs; plain adapters keep alpha.
            for (auto& [module, pair] : adapter.pairs) {
                if (adapter.alpha != 1.0f) {
                    pair.A *= adapter.alpha;
                }
                merged.low_rank.emplace(module, std::move(pair));
            }
        } else if (format == kDenseFormat) {
            merged.kind = MergedDelta<float>::Kind::dense;
            for (const auto& m : j.at("modules")) {
                const auto module = m.at("name").get<std::string>();
                check_module_name(module);
                merged.dense.emplace(module, read_tensor(dir / (module + ".delta.bin"),
                                                         m.at("out_features").get<Eigen::Index>(),
                                                         m.at("in_features").get<Eigen::Index>(),
                                                         module + ".delta"));
            }
        } else {
            throw Error(ErrorKind::FormatError, dir.string() + ": unknown manifest format '" + format + "'");
        }
        if (j.contains("provenance")) {
            merged.provenance = parse_provenance(j.at("provenance"));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::FormatError, dir.string() + "/manifest.json: " + e.what());
    }
    return merged;
}

std::vector<Adapter> load_adapter_collection(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw Error(ErrorKind::IoError, "adapter root " + root.string() + " is not a directory");
    }
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    std::vector<Adapter> out;
    out.reserve(dirs.size());
    for (const auto& d : dirs) {
        out.push_back(load_adapter(d));
    }
    return out;
}

}  // namespace lorafuse::adapters
