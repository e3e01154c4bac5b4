#include "lorafuse/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lorafuse/embed.hpp"
#include "lorafuse/error.hpp"
#include "lorafuse/index.hpp"
#include "lorafuse/rng.hpp"

namespace lorafuse::bench {

namespace {

using Clock = std::chrono::steady_clock;
using ordered_json = nlohmann::ordered_json;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

const char* const kFamilyNames[] = {"commonsense", "nli", "sentiment", "paraphrase", "qa", "topic"};

std::string family_name(std::size_t f) {
    constexpr std::size_t known = sizeof(kFamilyNames) / sizeof(kFamilyNames[0]);
    return f < known ? kFamilyNames[f] : "family" + std::to_string(f);
}

RowMatrix<float> gaussian(Eigen::Index rows, Eigen::Index cols, double scale, SplitMix64& rng) {
    RowMatrix<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<float>(scale * rng.normal());
    }
    return m;
}

const char* const kModules[] = {"q_proj", "v_proj"};

}  // namespace

void SuiteConfig::validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
    if (n_tasks == 0 || n_families == 0) bad("n_tasks and n_families must be >= 1");
    if (n_families > n_tasks) bad("n_families must not exceed n_tasks");
    if (examples_per_task == 0 || dim == 0 || rank == 0 || embed_dim == 0) {
        bad("examples_per_task, dim, rank and embed_dim must be >= 1");
    }
    if (vocab_size == 0 || tokens_per_example == 0) bad("vocab_size and tokens_per_example must be >= 1");
    if (!(global_share >= 0.0 && global_share <= family_share && family_share <= 1.0)) {
        bad("need 0 <= global_share <= family_share <= 1");
    }
    if (!(alpha > 0.0f) || !(delta_noise >= 0.0)) bad("alpha must be > 0 and delta_noise >= 0");
}

const SyntheticTask& Suite::task(std::string_view name) const {
    for (const auto& t : tasks) {
        if (t.name == name) {
            return t;
        }
    }
    throw Error(ErrorKind::InvalidArgument, "no task '" + std::string(name) + "' in suite");
}

Suite generate_suite(const SuiteConfig& config) {
    config.validate();
    SplitMix64 rng(config.seed);
    Suite suite;
    suite.config = config;

    const auto n_global = static_cast<std::size_t>(std::llround(config.global_share * config.vocab_size));
    const auto n_family =
        static_cast<std::size_t>(std::llround(config.family_share * config.vocab_size)) - n_global;
    const std::size_t n_own = config.vocab_size - n_global - n_family;

    const auto d = static_cast<Eigen::Index>(config.dim);
    const auto r = static_cast<Eigen::Index>(config.rank);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.dim));

    // Family subspaces: one (B, A) basis per family and module.
    std::vector<std::map<std::string, std::pair<RowMatrix<float>, RowMatrix<float>>>> bases(config.n_families);
    for (auto& basis : bases) {
        for (const char* module : kModules) {
            auto B = gaussian(d, r, scale, rng);
            auto A = gaussian(r, d, scale, rng);
            basis.emplace(module, std::make_pair(std::move(B), std::move(A)));
        }
    }

    std::vector<std::string> global_vocab;
    for (std::size_t i = 0; i < n_global; ++i) {
        global_vocab.push_back("g" + std::to_string(i));
    }

    std::vector<std::size_t> per_family(config.n_families, 0);
    for (std::size_t t = 0; t < config.n_tasks; ++t) {
        const std::size_t f = t % config.n_families;
        SyntheticTask task;
        task.family = family_name(f);
        task.name = task.family + "_" + std::to_string(per_family[f]++);

        task.vocab = global_vocab;
        for (std::size_t i = 0; i < n_family; ++i) {
            task.vocab.push_back("f" + std::to_string(f) + "w" + std::to_string(i));
        }
        for (std::size_t i = 0; i < n_own; ++i) {
            task.vocab.push_back("t" + std::to_string(t) + "w" + std::to_string(i));
        }

        task.adapter.name = task.name + "-" + std::to_string(config.rank);
        task.adapter.task = task.name;
        task.adapter.alpha = config.alpha;
        for (const char* module : kModules) {
            const auto& [B0, A0] = bases[f].at(module);
            RowMatrix<float> B = B0 + gaussian(d, r, config.delta_noise * scale, rng);
            RowMatrix<float> A = A0 + gaussian(r, d, config.delta_noise * scale, rng);
            task.adapter.pairs.emplace(module, adapters::MatrixPair{module, std::move(A), std::move(B)});
        }

        task.spec.task_name = task.name;
        task.spec.hint = "Solve the " + task.family + " problem.";
        task.spec.text_columns = {"text"};
        task.spec.separator_labels = {"[T]"};
        suite.tasks.push_back(std::move(task));
    }

    for (const auto& task : suite.tasks) {
        for (std::size_t e = 0; e < config.examples_per_task; ++e) {
            std::string sentence;
            for (std::size_t w = 0; w < config.tokens_per_example; ++w) {
                if (w > 0) sentence += ' ';
                sentence += task.vocab[rng.below(task.vocab.size())];
            }
            suite.corpus.push_back(textprep::unify_row({{"text", sentence}}, task.spec, e));
        }
    }
    return suite;
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::set<std::string> sa(a.begin(), a.end());
    const std::set<std::string> sb(b.begin(), b.end());
    std::size_t inter = 0;
    for (const auto& x : sa) {
        inter += sb.count(x);
    }
    const std::size_t uni = sa.size() + sb.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double median(std::vector<double> values) {
    if (values.empty()) {
        return 0.0;
    }
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

BenchConfig parse_bench_config(std::string_view json_text) {
    BenchConfig cfg;
    try {
        const auto j = nlohmann::json::parse(json_text);
        if (j.contains("suite")) {
            const auto& s = j.at("suite");
            auto& c = cfg.suite;
            c.n_tasks = s.value("n_tasks", c.n_tasks);
            c.n_families = s.value("n_families", c.n_families);
            c.examples_per_task = s.value("examples_per_task", c.examples_per_task);
            c.dim = s.value("dim", c.dim);
            c.rank = s.value("rank", c.rank);
            c.seed = s.value("seed", c.seed);
            c.vocab_size = s.value("vocab_size", c.vocab_size);
            c.family_share = s.value("family_share", c.family_share);
            c.global_share = s.value("global_share", c.global_share);
            c.tokens_per_example = s.value("tokens_per_example", c.tokens_per_example);
            c.embed_dim = s.value("embed_dim", c.embed_dim);
            c.alpha = s.value("alpha", c.alpha);
            c.delta_noise = s.value("delta_noise", c.delta_noise);
        }
        cfg.k = j.value("k", cfg.k);
        cfg.p = j.value("p", cfg.p);
        cfg.queries = j.value("queries", cfg.queries);
        if (j.contains("strategies")) {
            cfg.strategies.clear();
            for (const auto& s : j.at("strategies")) {
                cfg.strategies.push_back(merge::parse_strategy(s.get<std::string>()));
            }
        }
        if (j.contains("densities")) {
            for (const auto& [name, v] : j.at("densities").items()) {
                cfg.densities[merge::parse_strategy(name)] = v.get<double>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("bench config: ") + e.what());
    } catch (const Error& e) {
        throw Error(ErrorKind::InvalidConfig, e.what());
    }
    cfg.suite.validate();
    if (cfg.k == 0 || !(cfg.p > 0.0 && cfg.p <= 1.0) || cfg.queries == 0) {
        throw Error(ErrorKind::InvalidConfig, "need k >= 1, 0 < p <= 1, queries >= 1");
    }
    for (const auto& [s, d] : cfg.densities) {
        merge::check_density(d);
    }
    return cfg;
}

namespace {

double frobenius_error(const adapters::MergedDelta<float>& merged,
                       const std::map<std::string, RowMatrix<double>>& oracle) {
    double sq = 0.0;
    for (const auto& [module, target] : oracle) {
        sq += (merged.materialize(module).cast<double>() - target).squaredNorm();
    }
    return std::sqrt(sq);
}

}  // namespace

BenchReport run_bench(const Suite& suite, const BenchConfig& config) {
    const auto t_total = Clock::now();
    BenchReport report;
    report.config = config;
    report.config.suite = suite.config;

    const std::size_t n_tasks = suite.tasks.size();
    const std::size_t per_task = suite.config.examples_per_task;
    const embed::HashingEmbedder embedder(suite.config.embed_dim);

    auto t0 = Clock::now();
    std::vector<embed::EmbeddingVector> corpus_vectors;
    corpus_vectors.reserve(suite.corpus.size());
    for (const auto& row : suite.corpus) {
        corpus_vectors.push_back(embed::embed_text(embedder, row.text, suite.config.embed_dim, row.id));
    }
    report.timings.embed_ms += ms_since(t0);

    // One index and adapter pool per held-out task, built on first use.
    std::map<std::size_t, index::VectorIndex> indices;
    auto index_for = [&](std::size_t held_out) -> const index::VectorIndex& {
        auto it = indices.find(held_out);
        if (it != indices.end()) {
            return it->second;
        }
        const auto t = Clock::now();
        std::vector<index::IndexedExample> items;
        for (std::size_t i = 0; i < suite.corpus.size(); ++i) {
            if (i / per_task == held_out) continue;
            const auto& row = suite.corpus[i];
            items.push_back({row.id, row.task, corpus_vectors[i], row.text});
        }
        index::VectorIndex idx(suite.config.embed_dim);
        idx.insert_batch(items);
        idx.freeze();
        report.timings.index_ms += ms_since(t);
        return indices.emplace(held_out, std::move(idx)).first->second;
    };

    for (std::size_t qi = 0; qi < config.queries; ++qi) {
        const std::size_t held_out = qi % n_tasks;
        const auto& hidden = suite.tasks[held_out];
        const auto& row = suite.corpus[held_out * per_task + (qi / n_tasks) % per_task];
        const auto& idx = index_for(held_out);

        QueryResult q;
        q.index = qi;
        q.held_out_task = hidden.name;
        q.family = hidden.family;
        q.text = row.text;

        t0 = Clock::now();
        const auto qv = embed::embed_text(embedder, row.text, idx.dim());
        const auto neighbours = idx.query(qv, config.k);
        q.weights = weights::nucleus(weights::aggregate(neighbours), config.p);
        std::set<std::string> seen;
        for (const auto& n : neighbours) seen.insert(n.task);
        q.retrieved_tasks.assign(seen.begin(), seen.end());
        for (const auto& e : q.weights.entries) {
            if (suite.task(e.task).family == hidden.family) {
                q.in_family_mass += e.weight;
            }
        }
        report.timings.weights_ms += ms_since(t0);

        t0 = Clock::now();
        std::vector<adapters::Adapter> pool;
        std::vector<const SyntheticTask*> mates;
        for (const auto& t : suite.tasks) {
            if (t.name == hidden.name) continue;
            pool.push_back(t.adapter);
            if (t.family == hidden.family) mates.push_back(&t);
        }

        std::map<std::string, RowMatrix<double>> oracle;
        for (const char* module : kModules) {
            RowMatrix<double> sum = RowMatrix<double>::Zero(static_cast<Eigen::Index>(suite.config.dim),
                                                            static_cast<Eigen::Index>(suite.config.dim));
            for (const auto* m : mates) {
                const auto pair = m->adapter.pairs.at(module).cast<double>();
                sum += adapters::delta(pair, static_cast<double>(m->adapter.alpha));
            }
            if (!mates.empty()) sum /= static_cast<double>(mates.size());
            q.oracle_norm += sum.squaredNorm();
            oracle.emplace(module, std::move(sum));
        }
        q.oracle_norm = std::sqrt(q.oracle_norm);

        for (auto strategy : config.strategies) {
            std::optional<double> density;
            if (auto it = config.densities.find(strategy); it != config.densities.end()) density = it->second;
            const auto req = merge::make_request<float>(pool, q.weights, strategy, density);
            q.errors[merge::to_string(strategy)] = frobenius_error(merge::merge(req), oracle);
        }

        weights::TaskWeightDistribution uniform;
        for (const auto& a : pool) uniform.entries.push_back({a.task, 1.0 / static_cast<double>(pool.size())});
        const auto ureq = merge::make_request<float>(pool, uniform, merge::Strategy::linear);
        q.uniform_linear_error = frobenius_error(merge::merge(ureq), oracle);
        report.timings.merge_ms += ms_since(t0);

        report.queries.push_back(std::move(q));
    }

    std::vector<double> masses;
    std::vector<double> uniform_errors;
    std::map<std::string, std::vector<double>> errors;
    for (const auto& q : report.queries) {
        masses.push_back(q.in_family_mass);
        uniform_errors.push_back(q.uniform_linear_error);
        report.summary.all_finite = report.summary.all_finite && std::isfinite(q.uniform_linear_error);
        for (const auto& [s, e] : q.errors) {
            errors[s].push_back(e);
            report.summary.all_finite = report.summary.all_finite && std::isfinite(e);
        }
    }
    report.summary.median_in_family_mass = median(masses);
    report.summary.min_in_family_mass = masses.empty() ? 0.0 : *std::min_element(masses.begin(), masses.end());
    for (auto& [s, e] : errors) report.summary.median_errors[s] = median(e);
    report.summary.median_uniform_linear_error = median(uniform_errors);
    report.timings.total_ms = ms_since(t_total);
    return report;
}

std::string report_json(const BenchReport& report, bool include_timings) {
    ordered_json j;
    const auto& s = report.config.suite;
    j["config"]["suite"] = {{"n_tasks", s.n_tasks},
                            {"n_families", s.n_families},
                            {"examples_per_task", s.examples_per_task},
                            {"dim", s.dim},
                            {"rank", s.rank},
                            {"seed", s.seed},
                            {"vocab_size", s.vocab_size},
                            {"family_share", s.family_share},
                            {"global_share", s.global_share},
                            {"tokens_per_example", s.tokens_per_example},
                            {"embed_dim", s.embed_dim},
                            {"alpha", s.alpha},
                            {"delta_noise", s.delta_noise}};
    j["config"]["k"] = report.config.k;
    j["config"]["p"] = report.config.p;
    j["config"]["queries"] = report.config.queries;
    j["config"]["strategies"] = ordered_json::array();
    for (auto st : report.config.strategies) j["config"]["strategies"].push_back(merge::to_string(st));
    j["config"]["densities"] = ordered_json::object();
    for (const auto& [st, d] : report.config.densities) j["config"]["densities"][merge::to_string(st)] = d;

    const auto& sum = report.summary;
    j["summary"]["median_in_family_mass"] = sum.median_in_family_mass;
    j["summary"]["min_in_family_mass"] = sum.min_in_family_mass;
    j["summary"]["median_errors"] = ordered_json::object();
    for (const auto& [st, e] : sum.median_errors) j["summary"]["median_errors"][st] = e;
    j["summary"]["median_uniform_linear_error"] = sum.median_uniform_linear_error;
    j["summary"]["all_finite"] = sum.all_finite;

    j["queries"] = ordered_json::array();
    for (const auto& q : report.queries) {
        ordered_json e;
        e["index"] = q.index;
        e["held_out_task"] = q.held_out_task;
        e["family"] = q.family;
        e["text"] = q.text;
        e["weights"] = ordered_json::object();
        for (const auto& w : q.weights.entries) e["weights"][w.task] = w.weight;
        e["retrieved_tasks"] = q.retrieved_tasks;
        e["in_family_mass"] = q.in_family_mass;
        e["oracle_norm"] = q.oracle_norm;
        e["errors"] = ordered_json::object();
        for (const auto& [st, err] : q.errors) e["errors"][st] = err;
        e["uniform_linear_error"] = q.uniform_linear_error;
        j["queries"].push_back(std::move(e));
    }
    if (include_timings) {
        const auto& t = report.timings;
        j["timings_ms"] = {{"embed", t.embed_ms}, {"index", t.index_ms}, {"weights", t.weights_ms},
                           {"merge", t.merge_ms}, {"total", t.total_ms}};
    }
    return j.dump(2) + "\n";
}

std::string summary_csv(const BenchReport& report) {
    std::ostringstream out;
    out.precision(17);
    std::vector<std::string> strategies;
    for (auto st : report.config.strategies) strategies.emplace_back(merge::to_string(st));
    out << "query,held_out_task,family,in_family_mass";
    for (const auto& s : strategies) out << ",error_" << s;
    out << ",error_uniform_linear\n";
    for (const auto& q : report.queries) {
        out << q.index << ',' << q.held_out_task << ',' << q.family << ',' << q.in_family_mass;
        for (const auto& s : strategies) out << ',' << q.errors.at(s);
        out << ',' << q.uniform_linear_error << '\n';
    }
    return out.str();
}

}  // namespace lorafuse::bench
