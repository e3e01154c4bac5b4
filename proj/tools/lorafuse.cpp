// lorafuse: retrieval-weighted LoRA adapter fusion.
//
//   lorafuse ingest  --config ingest.json --db tasks.lfix
//   lorafuse weights --db tasks.lfix --query "text" --out weights.json
//   lorafuse merge   --strategy linear --weights weights.json --adapters adapters/ --out merged/
//   lorafuse bench   --config bench.json --out report.json
//   lorafuse inspect <snapshot | emb1 file | adapter dir>
//
// Exit codes: 0 ok, 1 usage/parse, 2 index, 3 embedding, 4 adapter resolution, 5 merge math.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "lorafuse/adapters.hpp"
#include "lorafuse/bench.hpp"
#include "lorafuse/embed.hpp"
#include "lorafuse/error.hpp"
#include "lorafuse/index.hpp"
#include "lorafuse/io.hpp"
#include "lorafuse/merge.hpp"
#include "lorafuse/textprep.hpp"
#include "lorafuse/weights.hpp"

namespace fs = std::filesystem;
using namespace lorafuse;
using ordered_json = nlohmann::ordered_json;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kIndex = 2, kEmbedding = 3, kAdapter = 4, kMerge = 5 };

struct Failure {
    int code;
    std::string message;
};

/// Runs `fn`, turning any library error into a Failure with `code`. A few
/// kinds keep their own code regardless of where they surface.
template <typename F>
auto phase(int code, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        int c = code;
        switch (e.kind()) {
            case ErrorKind::EmptyIndex: c = kIndex; break;
            case ErrorKind::NormError:
            case ErrorKind::UnknownText: c = kEmbedding; break;
            case ErrorKind::MissingAdapter: c = kAdapter; break;
            default: break;
        }
        throw Failure{c, e.what()};
    } catch (const fs::filesystem_error& e) {
        throw Failure{code, e.what()};
    }
}

std::string read_text(const fs::path& path) {
    const auto bytes = io::read_file(path);
    return {bytes.begin(), bytes.end()};
}

void write_output(const std::string& out, const std::string& text) {
    if (out.empty() || out == "-") {
        std::cout << text;
    } else {
        io::write_text_atomic(out, text);
    }
}

/// Writes a directory next to `out`, then swaps it in. An existing `out`
/// is replaced only if it holds a manifest.json (i.e. a previous output).
template <typename F>
void write_dir_atomic(const fs::path& out, F&& fill) {
    if (fs::exists(out) && !fs::is_empty(out) && !fs::exists(out / "manifest.json")) {
        throw Error(ErrorKind::IoError, out.string() + " exists and is not an adapter/delta directory");
    }
    fs::path tmp = out;
    tmp += ".tmp-" + std::to_string(::getpid());
    fs::remove_all(tmp);
    fill(tmp);
    fs::remove_all(out);
    fs::rename(tmp, out);
}

void configure_logging(const std::string& level_flag) {
    auto logger = spdlog::stderr_color_mt("lorafuse");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    std::string level = level_flag;
    if (level.empty()) {
        if (const char* env = std::getenv("LORAFUSE_LOG")) level = env;
    }
    spdlog::set_level(level.empty() ? spdlog::level::info : spdlog::level::from_str(level));
}

// ---------------------------------------------------------------------------

struct IngestArgs {
    std::string config;
    std::string db;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> cap;
    std::optional<std::size_t> chunk;
    std::optional<std::size_t> dim;
    std::string provider;
    std::string embeddings;
    bool hnsw_check = false;
};

int cmd_ingest(const IngestArgs& a) {
    auto cfg = phase(kUsage, [&] { return textprep::load_ingest_config(a.config); });
    if (a.seed) cfg.seed = *a.seed;
    if (a.cap) cfg.cap = *a.cap;
    if (a.chunk) cfg.chunk = *a.chunk;
    if (a.dim) cfg.embedding.dim = *a.dim;
    if (!a.provider.empty()) cfg.embedding.provider = a.provider;
    if (!a.embeddings.empty()) cfg.embedding.store_path = a.embeddings;
    if (cfg.cap == 0 || cfg.chunk == 0 || cfg.embedding.dim == 0) {
        throw Failure{kUsage, "cap, chunk and dim must be >= 1"};
    }

    std::unique_ptr<embed::EmbeddingProvider> provider;
    phase(kEmbedding, [&] {
        if (cfg.embedding.provider == "file") {
            provider = std::make_unique<embed::StoreEmbedder>(embed::load_embedding_store(cfg.embedding.store_path));
        } else if (cfg.embedding.provider == "hashing") {
            provider = std::make_unique<embed::HashingEmbedder>(cfg.embedding.dim);
        } else {
            throw Error(ErrorKind::ConfigError, "unknown provider '" + cfg.embedding.provider + "'");
        }
    });
    spdlog::info("embedding provider {} (dim {})", provider->name(), provider->dim());

    std::vector<index::IndexedExample> items;
    ordered_json summary;
    summary["tasks"] = ordered_json::object();
    for (const auto& task : cfg.tasks) {
        auto rows = phase(kUsage, [&] {
            const auto text = read_text(task.csv_path);
            if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
                return std::vector<textprep::FlatExample>{};
            }
            return textprep::flatten_table(textprep::parse_csv(text), task.spec);
        });
        if (rows.empty()) {
            spdlog::warn("task '{}' has no rows in {}", task.spec.task_name, task.csv_path.string());
        }
        const std::size_t available = rows.size();
        rows = textprep::sample_per_task(std::move(rows), cfg.cap, cfg.seed);
        spdlog::debug("task '{}': {} rows, {} sampled", task.spec.task_name, available, rows.size());
        for (auto& row : rows) {
            auto v = phase(kEmbedding, [&] { return embed::embed_text(*provider, row.text, 0, row.id); });
            items.push_back({std::move(row.id), std::move(row.task), std::move(v), std::move(row.text)});
        }
        summary["tasks"][task.spec.task_name] = rows.size();
    }

    index::VectorIndex idx(provider->dim());
    const auto stats = phase(kIndex, [&] { return idx.insert_batch(items, cfg.chunk); });
    if (a.hnsw_check) {
        phase(kIndex, [&] { idx.enable_hnsw(); });
    }
    phase(kIndex, [&] { index::save(idx, a.db); });

    summary["vectors"] = stats.inserted;
    summary["batches"] = stats.batch_sizes.size();
    summary["dim"] = idx.dim();
    summary["provider"] = provider->name();
    summary["snapshot"] = a.db;
    std::cout << summary.dump(2) << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct WeightsArgs {
    std::string db;
    std::string query;
    std::string query_embedding;
    std::size_t k = 100;
    double p = 0.9;
    std::string out;
    bool hnsw = false;
};

int cmd_weights(const WeightsArgs& a) {
    if (a.k == 0) throw Failure{kUsage, "--k must be >= 1"};
    if (!(a.p > 0.0 && a.p <= 1.0)) throw Failure{kUsage, "--p must be in (0, 1]"};
    if (a.query.empty() == a.query_embedding.empty()) {
        throw Failure{kUsage, "give exactly one of --query or --query-embedding"};
    }

    auto idx = phase(kIndex, [&] {
        if (!fs::exists(a.db)) throw Error(ErrorKind::IoError, "snapshot " + a.db + " not found");
        return index::load(a.db);
    });
    if (idx.empty()) throw Failure{kIndex, "snapshot " + a.db + " has no records"};
    if (a.hnsw) phase(kIndex, [&] { idx.enable_hnsw(); });
    idx.freeze();

    const auto q = phase(kEmbedding, [&] {
        if (!a.query_embedding.empty()) {
            const auto store = embed::load_embedding_store(a.query_embedding);
            if (store.size() == 0) throw Error(ErrorKind::UnknownText, "query embedding file is empty");
            if (store.dim() != idx.dim()) {
                throw Error(ErrorKind::DimensionMismatch, "query dim " + std::to_string(store.dim()) +
                                                              ", snapshot dim " + std::to_string(idx.dim()));
            }
            return store.entries().front().vector;
        }
        std::string text = a.query;
        if (text.starts_with('@')) {
            text = read_text(text.substr(1));
            while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        }
        const embed::HashingEmbedder hashing(idx.dim());
        return embed::embed_text(hashing, text, idx.dim());
    });

    const auto dist = phase(kIndex, [&] { return weights::task_weights(q, idx, a.k, a.p); });
    for (const auto& e : dist.entries) spdlog::debug("{} -> {}", e.task, e.weight);
    write_output(a.out, weights::to_json(dist, a.k));
    return kOk;
}

// ---------------------------------------------------------------------------

struct MergeArgs {
    std::string strategy;
    std::string weights;
    std::string adapters;
    std::optional<double> density;
    std::string out;
    bool renormalize_missing = false;
};

int cmd_merge(const MergeArgs& a) {
    const auto strategy = phase(kUsage, [&] { return merge::parse_strategy(a.strategy); });
    if (a.density) phase(kUsage, [&] { merge::check_density(*a.density); });

    const auto dist = phase(kUsage, [&] {
        auto d = weights::parse_json(read_text(a.weights));
        // Published weights are often rounded to a few decimals.
        if (std::abs(d.total() - 1.0) > 1e-3) {
            throw Error(ErrorKind::FormatError, "weights sum to " + std::to_string(d.total()) + ", expected 1");
        }
        return d;
    });

    std::vector<adapters::Adapter> pool;
    std::map<std::string, std::string> hashes;
    phase(kAdapter, [&] {
        if (!fs::is_directory(a.adapters)) {
            throw Error(ErrorKind::MissingAdapter, "adapter root " + a.adapters + " is not a directory");
        }
        std::vector<fs::path> dirs;
        for (const auto& entry : fs::directory_iterator(a.adapters)) {
            if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
        }
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) {
            pool.push_back(adapters::load_adapter(d));
            hashes[pool.back().name] = io::to_hex(adapters::fingerprint(d));
        }
    });
    spdlog::info("loaded {} adapters from {}", pool.size(), a.adapters);

    const auto req = phase(kAdapter, [&] {
        for (const auto& e : dist.entries) {
            const bool present = std::any_of(pool.begin(), pool.end(), [&](const auto& ad) { return ad.task == e.task; });
            if (!present && a.renormalize_missing) {
                spdlog::warn("no adapter for task '{}'; renormalizing without it", e.task);
            }
        }
        return merge::make_request<float>(pool, dist, strategy, a.density, a.renormalize_missing);
    });

    const auto merged = phase(kMerge, [&] { return merge::merge(req); });
    phase(kUsage, [&] {
        write_dir_atomic(a.out, [&](const fs::path& dir) { adapters::save_merged(merged, dir, hashes); });
    });

    ordered_json summary;
    summary["strategy"] = merge::to_string(strategy);
    summary["kind"] = merged.kind == adapters::MergedDelta<float>::Kind::low_rank ? "low_rank" : "dense";
    summary["inputs"] = req.inputs.size();
    summary["out"] = a.out;
    std::cout << summary.dump(2) << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string config;
    std::string out;
    std::string csv;
    std::optional<std::uint64_t> seed;
    bool timings = false;
};

int cmd_bench(const BenchArgs& a) {
    auto cfg = phase(kUsage, [&] {
        return a.config.empty() ? bench::BenchConfig{} : bench::parse_bench_config(read_text(a.config));
    });
    if (a.seed) cfg.suite.seed = *a.seed;
    const auto suite = phase(kUsage, [&] { return bench::generate_suite(cfg.suite); });
    const auto report = phase(kMerge, [&] { return bench::run_bench(suite, cfg); });
    spdlog::info("bench: median in-family mass {:.4f}, {} queries, {:.0f} ms",
                 report.summary.median_in_family_mass, report.queries.size(), report.timings.total_ms);
    phase(kUsage, [&] {
        write_output(a.out, bench::report_json(report, a.timings));
        if (!a.csv.empty()) io::write_text_atomic(a.csv, bench::summary_csv(report));
    });
    return kOk;
}

// ---------------------------------------------------------------------------

int cmd_inspect(const std::string& path) {
    ordered_json j;
    if (fs::is_directory(path)) {
        const auto text = phase(kAdapter, [&] { return read_text(fs::path(path) / "manifest.json"); });
        j = phase(kAdapter, [&] {
            try {
                return ordered_json::parse(text);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::FormatError, e.what());
            }
        });
        phase(kAdapter, [&] { (void)adapters::load_merged(path); });
    } else {
        const auto bytes = phase(kUsage, [&] { return io::read_file(path); });
        const std::string magic(bytes.begin(), bytes.begin() + std::min<std::size_t>(4, bytes.size()));
        std::map<std::string, std::size_t> per_task;
        if (magic == "LFIX") {
            const auto idx = phase(kIndex, [&] { return index::decode_snapshot(bytes); });
            for (std::size_t r = 0; r < idx.size(); ++r) ++per_task[idx.task(r)];
            j["format"] = "LFIX";
            j["dim"] = idx.dim();
            j["count"] = idx.size();
        } else if (magic == "EMB1") {
            const auto store = phase(kEmbedding, [&] { return embed::decode_emb1(bytes, fs::path(path).filename().string()); });
            for (const auto& e : store.entries()) ++per_task[e.task];
            j["format"] = "EMB1";
            j["dim"] = store.dim();
            j["count"] = store.size();
        } else {
            throw Failure{kUsage, path + ": not an LFIX snapshot, EMB1 file or adapter directory"};
        }
        j["tasks"] = ordered_json::object();
        for (const auto& [t, n] : per_task) j["tasks"][t] = n;
    }
    std::cout << j.dump(2) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retrieval-weighted LoRA adapter fusion"};
    app.require_subcommand(1);
    std::string log_level;
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off (default: $LORAFUSE_LOG or info)");

    IngestArgs ingest;
    auto* ing = app.add_subcommand("ingest", "Build a task-labelled vector snapshot from CSV corpora");
    ing->add_option("--config", ingest.config, "Ingest config JSON")->required()->check(CLI::ExistingFile);
    ing->add_option("--db", ingest.db, "Output snapshot path")->required();
    ing->add_option("--seed", ingest.seed, "Shuffle seed (default 42)");
    ing->add_option("--cap", ingest.cap, "Rows kept per task (default 2000)");
    ing->add_option("--chunk", ingest.chunk, "Insert batch size (default 4000)");
    ing->add_option("--dim", ingest.dim, "Hashing embedder dim");
    ing->add_option("--provider", ingest.provider, "hashing|file")->check(CLI::IsMember({"hashing", "file"}));
    ing->add_option("--embeddings", ingest.embeddings, "EMB1 store for the file provider");
    ing->add_flag("--hnsw-check", ingest.hnsw_check, "Also build the HNSW graph to validate the corpus");

    WeightsArgs wa;
    auto* wts = app.add_subcommand("weights", "Compute the task weight distribution for a query");
    wts->add_option("--db", wa.db, "Snapshot path")->required();
    wts->add_option("--query", wa.query, "Query text, or @file");
    wts->add_option("--query-embedding", wa.query_embedding, "EMB1 file whose first record is the query");
    wts->add_option("--k", wa.k, "Neighbours to retrieve")->capture_default_str();
    wts->add_option("--p", wa.p, "Nucleus mass")->capture_default_str();
    wts->add_option("--out", wa.out, "Output JSON (default stdout)");
    wts->add_flag("--hnsw", wa.hnsw, "Use the HNSW backend instead of the exact scan");

    MergeArgs ma;
    auto* mrg = app.add_subcommand("merge", "Merge adapters with retrieved weights");
    mrg->add_option("--strategy", ma.strategy, "linear|cat|ties|magnitude_prune")->required();
    mrg->add_option("--weights", ma.weights, "weights.json")->required();
    mrg->add_option("--adapters", ma.adapters, "Directory with one adapter subdirectory per task")->required();
    mrg->add_option("--density", ma.density, "Kept fraction for ties (0.5) / magnitude_prune (0.75)");
    mrg->add_option("--out", ma.out, "Output directory")->required();
    mrg->add_flag("--renormalize-missing", ma.renormalize_missing,
                  "Drop weighted tasks without an adapter and renormalize");

    BenchArgs ba;
    auto* bch = app.add_subcommand("bench", "Run the synthetic end-to-end benchmark");
    bch->add_option("--config", ba.config, "Bench config JSON")->check(CLI::ExistingFile);
    bch->add_option("--out", ba.out, "Report JSON (default stdout)");
    bch->add_option("--csv", ba.csv, "Per-query CSV summary");
    bch->add_option("--seed", ba.seed, "Suite seed");
    bch->add_flag("--timings", ba.timings, "Include wall-clock timings in the report");

    std::string inspect_path;
    auto* ins = app.add_subcommand("inspect", "Print a snapshot, EMB1 file or adapter manifest");
    ins->add_option("path", inspect_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        configure_logging(log_level);
    } catch (const std::exception& e) {
        std::cerr << "bad log level: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (ing->parsed()) return cmd_ingest(ingest);
        if (wts->parsed()) return cmd_weights(wa);
        if (mrg->parsed()) return cmd_merge(ma);
        if (bch->parsed()) return cmd_bench(ba);
        if (ins->parsed()) return cmd_inspect(inspect_path);
    } catch (const Failure& f) {
        spdlog::error("{}", f.message);
        return f.code;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kUsage;
    }
    return kUsage;
}
