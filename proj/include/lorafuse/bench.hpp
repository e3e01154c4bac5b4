#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lorafuse/adapters.hpp"
#include "lorafuse/merge.hpp"
#include "lorafuse/textprep.hpp"
#include "lorafuse/weights.hpp"

namespace lorafuse::bench {

struct SuiteConfig {
    std::size_t n_tasks = 6;
    std::size_t n_families = 3;
    std::size_t examples_per_task = 200;
    std::size_t dim = 32;   // adapter in/out features
    std::size_t rank = 4;
    std::uint64_t seed = 42;

    std::size_t vocab_size = 100;      // tokens per task vocabulary
    double family_share = 0.6;         // fraction of a task's vocab shared within its family
    double global_share = 0.1;         // fraction shared by every task
    std::size_t tokens_per_example = 12;
    std::size_t embed_dim = 256;       // hashing embedder width
    float alpha = 16.0f;
    double delta_noise = 0.3;          // per-task deviation from the family subspace

    /// Throws InvalidConfig.
    void validate() const;
};

/// One synthetic task: its vocabulary and ground-truth adapter (the true delta).
struct SyntheticTask {
    std::string name;
    std::string family;
    std::vector<std::string> vocab;
    adapters::Adapter adapter;
    textprep::TaskSpec spec;
};

struct Suite {
    SuiteConfig config;
    std::vector<SyntheticTask> tasks;
    std::vector<textprep::FlatExample> corpus;  // task-major, examples_per_task per task

    const SyntheticTask& task(std::string_view name) const;
};

/// Deterministic for a given config.
Suite generate_suite(const SuiteConfig& config);

/// |a n b| / |a u b| over token sets.
double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct BenchConfig {
    SuiteConfig suite;
    std::size_t k = 100;
    double p = 0.9;
    std::size_t queries = 50;
    std::vector<merge::Strategy> strategies{merge::Strategy::linear, merge::Strategy::cat,
                                            merge::Strategy::ties, merge::Strategy::magnitude_prune};
    std::map<merge::Strategy, double> densities{{merge::Strategy::ties, 0.5},
                                                {merge::Strategy::magnitude_prune, 0.75}};
};

BenchConfig parse_bench_config(std::string_view json_text);

struct QueryResult {
    std::size_t index = 0;
    std::string held_out_task;
    std::string family;
    std::string text;
    weights::TaskWeightDistribution weights;
    std::vector<std::string> retrieved_tasks;  // tasks with >= 1 neighbour, sorted
    double in_family_mass = 0.0;
    double oracle_norm = 0.0;
    std::map<std::string, double> errors;  // strategy -> ||merged - oracle||_F
    double uniform_linear_error = 0.0;
};

struct BenchSummary {
    double median_in_family_mass = 0.0;
    double min_in_family_mass = 0.0;
    std::map<std::string, double> median_errors;
    double median_uniform_linear_error = 0.0;
    bool all_finite = true;
};

struct BenchTimings {
    double embed_ms = 0.0;
    double index_ms = 0.0;
    double weights_ms = 0.0;
    double merge_ms = 0.0;
    double total_ms = 0.0;
};

struct BenchReport {
    BenchConfig config;
    std::vector<QueryResult> queries;
    BenchSummary summary;
    BenchTimings timings;
};

/// Held-out protocol: query i comes from task i mod n_tasks; that task's corpus
/// is left out of the index and its adapter out of the pool. The oracle delta
/// is the mean of the remaining in-family true deltas. Inputs are not modified.
BenchReport run_bench(const Suite& suite, const BenchConfig& config);

double median(std::vector<double> values);

/// Timings vary between runs and are written only when requested.
std::string report_json(const BenchReport& report, bool include_timings = false);
std::string summary_csv(const BenchReport& report);

}  // namespace lorafuse::bench
