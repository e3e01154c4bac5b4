// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "lorafuse/bench.hpp"
#include "lorafuse/index.hpp"
#include "lorafuse/merge.hpp"
#include "lorafuse/rng.hpp"
#include "lorafuse/weights.hpp"
#include "oracles.hpp"

#ifndef LORAFUSE_CLI
#error "LORAFUSE_CLI must point at the lorafuse binary"
#endif

using namespace lorafuse;
using adapters::LoraAdapter;
using adapters::LoraMatrixPair;
using merge::Strategy;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename S>
RowMatrix<S> random_matrix(SplitMix64& rng, Eigen::Index rows, Eigen::Index cols) {
    RowMatrix<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal());
    return m;
}

template <typename S>
oracle::Dense to_dense(const RowMatrix<S>& m) {
    auto d = oracle::zeros(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) d.v[static_cast<std::size_t>(i)] = static_cast<double>(m.data()[i]);
    return d;
}

template <typename S>
merge::MergeRequest<S> request(const std::vector<LoraAdapter<S>>& pool, const std::vector<double>& w, Strategy s,
                               std::optional<double> density = std::nullopt) {
    merge::MergeRequest<S> req;
    req.strategy = s;
    req.density = density;
    for (std::size_t i = 0; i < pool.size(); ++i) req.inputs.push_back({&pool[i], w[i]});
    return req;
}

template <typename S>
LoraAdapter<S> from_delta(const std::string& name, const RowMatrix<S>& delta) {
    LoraAdapter<S> a{name, name, S(1), {}};
    a.pairs.emplace("q_proj", LoraMatrixPair<S>{"q_proj", RowMatrix<S>::Identity(delta.cols(), delta.cols()), delta});
    return a;
}

std::vector<double> random_weights(SplitMix64& rng, std::size_t n) {
    std::vector<double> w(n);
    double t = 0;
    for (auto& x : w) t += (x = 0.05 + rng.uniform());
    for (auto& x : w) x /= t;
    return w;
}

struct Outcome {
    bool pass;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " -- " << o.detail << std::endl;
    if (!o.pass) ++failures;
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(3);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------

Outcome cat_identity() {
    const auto t0 = Clock::now();
    SplitMix64 rng(101);
    double worst = 0.0;
    for (int c = 0; c < 200; ++c) {
        const auto n = 2 + rng.below(3);
        const auto d_in = static_cast<Eigen::Index>(1 + rng.below(64));
        const auto d_out = static_cast<Eigen::Index>(1 + rng.below(64));
        std::vector<LoraAdapter<float>> pool;
        for (std::size_t i = 0; i < n; ++i) {
            LoraAdapter<float> a{"a" + std::to_string(i), "t" + std::to_string(i),
                                 static_cast<float>(1 + rng.below(64)), {}};
            const auto r = static_cast<Eigen::Index>(1 + rng.below(8));
            a.pairs.emplace("q_proj", LoraMatrixPair<float>{"q_proj", random_matrix<float>(rng, r, d_in),
                                                            random_matrix<float>(rng, d_out, r)});
            pool.push_back(std::move(a));
        }
        const auto w = random_weights(rng, n);
        const auto m = merge::merge_cat(request(pool, w, Strategy::cat));
        const auto& p = m.low_rank.at("q_proj");
        const auto got = oracle::matmul(to_dense(p.B), to_dense(p.A));
        auto expect = oracle::zeros(static_cast<std::size_t>(d_out), static_cast<std::size_t>(d_in));
        for (std::size_t i = 0; i < n; ++i) {
            const auto& q = pool[i].pairs.at("q_proj");
            const auto ba = oracle::matmul(to_dense(q.B), to_dense(q.A));
            for (std::size_t e = 0; e < expect.v.size(); ++e) expect.v[e] += w[i] * pool[i].alpha * ba.v[e];
        }
        worst = std::max(worst, oracle::frobenius_diff(got, expect) / oracle::frobenius(expect));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-5 && secs < 10.0, "200 cases, max rel err " + fmt(worst) + ", " + fmt(secs) + " s"};
}

Outcome linear_recovery() {
    SplitMix64 rng(102);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
        const auto d_in = static_cast<Eigen::Index>(1 + rng.below(64));
        const auto d_out = static_cast<Eigen::Index>(1 + rng.below(64));
        const auto r = static_cast<Eigen::Index>(1 + rng.below(8));
        std::vector<LoraAdapter<float>> pool(1);
        pool[0] = {"a", "t", static_cast<float>(1 + rng.below(64)), {}};
        pool[0].pairs.emplace("q_proj", LoraMatrixPair<float>{"q_proj", random_matrix<float>(rng, r, d_in),
                                                              random_matrix<float>(rng, d_out, r)});
        const auto m = merge::merge_linear(request(pool, {1.0}, Strategy::linear));
        const auto& p = m.low_rank.at("q_proj");
        const auto got = oracle::matmul(to_dense(p.B), to_dense(p.A));
        auto expect = oracle::matmul(to_dense(pool[0].pairs.at("q_proj").B), to_dense(pool[0].pairs.at("q_proj").A));
        for (auto& x : expect.v) x *= pool[0].alpha;
        worst = std::max(worst, oracle::frobenius_diff(got, expect) / oracle::frobenius(expect));
    }
    return {worst <= 1e-6, "100 cases, max rel err " + fmt(worst)};
}

Outcome ties_check() {
    auto mat = [](std::initializer_list<double> v) {
        RowMatrix<double> m(2, 2);
        Eigen::Index i = 0;
        for (double x : v) m.data()[i++] = x;
        return m;
    };
    const std::vector<LoraAdapter<double>> fixture{from_delta("x1", mat({4, -1, 0, 2})),
                                                   from_delta("x2", mat({2, 3, 0, 4}))};
    const auto f = merge::merge_ties(request(fixture, {0.5, 0.5}, Strategy::ties, 0.5));
    const bool fixture_ok = f.dense.at("q_proj") == mat({2, 1.5, 0, 3});

    SplitMix64 rng(103);
    double worst = 0.0;
    int mismatched_support = 0;
    for (int c = 0; c < 100; ++c) {
        const auto n = 2 + rng.below(4);
        const auto rows = static_cast<Eigen::Index>(1 + rng.below(32));
        const auto cols = static_cast<Eigen::Index>(1 + rng.below(32));
        std::vector<LoraAdapter<double>> pool;
        std::vector<oracle::Dense> deltas;
        for (std::size_t i = 0; i < n; ++i) {
            const auto d = random_matrix<double>(rng, rows, cols);
            pool.push_back(from_delta("x" + std::to_string(i), d));
            deltas.push_back(to_dense(d));
        }
        const auto w = random_weights(rng, n);
        const double density = 0.1 + 0.9 * rng.uniform();
        const auto got = to_dense(merge::merge_ties(request(pool, w, Strategy::ties, density)).dense.at("q_proj"));
        const auto expect = oracle::ties(deltas, w, density);
        for (std::size_t e = 0; e < got.v.size(); ++e) {
            if ((got.v[e] == 0.0) != (expect.v[e] == 0.0)) ++mismatched_support;
        }
        worst = std::max(worst, oracle::frobenius_diff(got, expect) / std::max(1e-300, oracle::frobenius(expect)));
    }
    const bool ok = fixture_ok && worst <= 1e-12 && mismatched_support == 0;
    return {ok, std::string("fixture ") + (fixture_ok ? "exact" : "MISMATCH") + ", 100 random cases max rel err " +
                    fmt(worst) + ", support mismatches " + std::to_string(mismatched_support)};
}

Outcome magnitude_prune_check() {
    SplitMix64 rng(104);
    std::vector<RowMatrix<double>> deltas;
    for (int i = 0; i < 3; ++i) deltas.push_back(random_matrix<double>(rng, 64, 64));
    const std::vector<double> w{0.5, 0.3, 0.2};
    std::vector<LoraAdapter<double>> pool;
    for (int i = 0; i < 3; ++i) pool.push_back(from_delta("x" + std::to_string(i), deltas[i]));

    std::string detail;
    bool ok = true;
    for (double kappa : {0.25, 0.5, 0.75, 1.0}) {
        const auto m = merge::merge_magnitude_prune(request(pool, w, Strategy::magnitude_prune, kappa));
        const auto nnz = static_cast<std::size_t>((m.dense.at("q_proj").array() != 0.0).count());
        const auto want = static_cast<std::size_t>(std::ceil(kappa * 4096));
        ok = ok && nnz == want;
        detail += "k=" + fmt(kappa) + ":" + std::to_string(nnz) + "/" + std::to_string(want) + " ";
    }

    // kappa = 1 against a plain sum in the same (task, name) order
    const auto full = merge::merge_magnitude_prune(request(pool, w, Strategy::magnitude_prune, 1.0)).dense.at("q_proj");
    bool bit_exact = true;
    for (Eigen::Index e = 0; e < full.size(); ++e) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += w[static_cast<std::size_t>(i)] * deltas[static_cast<std::size_t>(i)].data()[e];
        bit_exact = bit_exact && s == full.data()[e];
    }

    std::vector<LoraAdapter<float>> pool32;
    for (const auto& a : pool) pool32.push_back(a.cast<float>());
    const auto f32 = merge::merge_magnitude_prune(request(pool32, w, Strategy::magnitude_prune, 1.0)).dense.at("q_proj");
    oracle::Dense raw = oracle::zeros(64, 64);
    for (int i = 0; i < 3; ++i) {
        const auto d = to_dense(deltas[static_cast<std::size_t>(i)]);
        for (std::size_t e = 0; e < raw.v.size(); ++e) raw.v[e] += w[static_cast<std::size_t>(i)] * d.v[e];
    }
    const double err32 = oracle::frobenius_diff(to_dense(f32), raw) / oracle::frobenius(raw);
    ok = ok && bit_exact && err32 <= 1e-6;
    return {ok, detail + "| k=1 f64 " + (bit_exact ? "bit-exact" : "DIFFERS") + ", f32 rel err " + fmt(err32)};
}

Outcome nucleus_check() {
    SplitMix64 rng(105);
    double worst_sum = 0.0;
    int subset_violations = 0;
    for (int c = 0; c < 1000; ++c) {
        const auto n = 1 + rng.below(30);
        std::vector<weights::TaskMass> masses;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double m = rng.uniform() < 0.1 ? 0.0 : -std::log(1.0 - rng.uniform());
            masses.push_back({"t" + std::to_string(i), m});
            total += m;
        }
        if (total == 0.0) {
            masses[0].mass = total = 1.0;
        }
        for (auto& m : masses) m.mass /= total;
        double p1 = 0.01 + 0.99 * rng.uniform();
        double p2 = 0.01 + 0.99 * rng.uniform();
        if (p1 > p2) std::swap(p1, p2);
        const auto d1 = weights::nucleus(masses, p1);
        const auto d2 = weights::nucleus(masses, p2);
        worst_sum = std::max({worst_sum, std::abs(d1.total() - 1.0), std::abs(d2.total() - 1.0)});
        const auto t1 = d1.nucleus_tasks();
        const auto t2 = d2.nucleus_tasks();
        const std::set<std::string> s2(t2.begin(), t2.end());
        for (const auto& t : t1) {
            if (!s2.count(t)) ++subset_violations;
        }
    }
    const double reference_sum = 0.5952 + 0.1646 + 0.1459 + 0.0940;
    const bool ok = worst_sum <= 1e-9 && subset_violations == 0 && std::abs(reference_sum - 1.0) <= 5e-4;
    return {ok, "1000 vectors, max |sum-1| " + fmt(worst_sum) + ", subset violations " +
                    std::to_string(subset_violations) + ", reference weights sum " + std::to_string(reference_sum)};
}

Outcome retrieval_check() {
    constexpr std::size_t n = 5000, dim = 64, queries = 100;
    SplitMix64 rng(106);
    auto random_unit = [&] {
        Eigen::VectorXf v(dim);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        return embed::EmbeddingVector::normalized(v);
    };
    std::vector<index::IndexedExample> items;
    for (std::size_t i = 0; i < n; ++i) {
        const auto task = "t" + std::to_string(i % 10);
        items.push_back({task + ":" + std::to_string(i), task, random_unit(), ""});
    }
    index::VectorIndex idx(dim);
    idx.insert_batch(items);
    idx.enable_hnsw();

    int exact_mismatch = 0;
    std::size_t hits = 0, total = 0;
    for (std::size_t qi = 0; qi < queries; ++qi) {
        const auto q = random_unit();
        std::vector<std::pair<long double, std::string>> all;
        for (const auto& it : items) {
            long double dot = 0;
            for (std::size_t j = 0; j < dim; ++j) dot += static_cast<long double>(q.values()[j]) * it.vector.values()[j];
            all.emplace_back(std::clamp(1.0L - dot, 0.0L, 2.0L), it.id);
        }
        std::sort(all.begin(), all.end());
        for (std::size_t k : {1, 10, 100}) {
            const auto exact = idx.query_exact(q, k);
            for (std::size_t i = 0; i < k; ++i) {
                if (exact[i].id != all[i].second) {
                    ++exact_mismatch;
                    break;
                }
            }
            std::set<std::string> truth;
            for (std::size_t i = 0; i < k; ++i) truth.insert(all[i].second);
            for (const auto& nb : idx.query_approx(q, k)) hits += truth.count(nb.id);
            total += k;
        }
    }
    const double recall = static_cast<double>(hits) / static_cast<double>(total);
    return {exact_mismatch == 0 && recall >= 0.95,
            "5000 x 64d, " + std::to_string(queries) + " queries, k in {1,10,100}: exact mismatches " +
                std::to_string(exact_mismatch) + ", hnsw recall " + fmt(recall)};
}

Outcome bench_check() {
    const auto t0 = Clock::now();
    const bench::BenchConfig cfg;
    const auto r = bench::run_bench(bench::generate_suite(cfg.suite), cfg);
    const double secs = seconds_since(t0);
    const double lin = r.summary.median_errors.at("linear");
    const double uni = r.summary.median_uniform_linear_error;
    const bool ok = r.queries.size() == 50 && r.summary.median_in_family_mass >= 0.8 && lin < uni && secs < 60.0;
    return {ok, "median in-family mass " + fmt(r.summary.median_in_family_mass) + ", linear err " + fmt(lin) +
                    " vs uniform " + fmt(uni) + ", " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Every regular file under `root`, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    if (fs::is_regular_file(root)) {
        out[""] = slurp(root);
        return out;
    }
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
}

int sh(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_determinism() {
    const auto root = fs::temp_directory_path() / ("lorafuse_accept_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string cli = std::string("'") + LORAFUSE_CLI + "'";
    const std::string dir = "'" + root.string() + "'";

    {
        std::ofstream(root / "a.csv") << "q,label\n";
        std::ofstream(root / "b.csv") << "q,label\n";
        std::ofstream a(root / "a.csv", std::ios::app), b(root / "b.csv", std::ios::app);
        for (int i = 0; i < 300; ++i) {
            a << "where can I buy a tennis ball number " << i << ",x\n";
            b << "the stock market fell " << i << " points,y\n";
        }
    }
    std::ofstream(root / "ingest.json") << R"({"cap": 200, "chunk": 64, "embedding": {"dim": 64}, "tasks": [
        {"task_name": "sports", "text_columns": ["q"], "separator_labels": ["[Q]"], "label_columns": ["label"], "csv": "a.csv"},
        {"task_name": "finance", "text_columns": ["q"], "separator_labels": ["[Q]"], "label_columns": ["label"], "csv": "b.csv"}]})";
    {
        SplitMix64 rng(107);
        for (const char* t : {"sports", "finance"}) {
            LoraAdapter<float> a{t, t, 16.0f, {}};
            for (const char* m : {"q_proj", "v_proj"}) {
                a.pairs.emplace(m, LoraMatrixPair<float>{m, random_matrix<float>(rng, 4, 24), random_matrix<float>(rng, 24, 4)});
            }
            adapters::save_adapter(a, root / "adapters" / t);
        }
    }
    std::ofstream(root / "bench.json") << R"({"queries": 10, "suite": {"examples_per_task": 80}})";

    struct Cmd {
        std::string name;
        std::string args;
        std::string output;  // file or directory the command writes, relative to root
    };
    const std::vector<Cmd> cmds{
        {"ingest", "ingest --config " + dir + "/ingest.json --seed 42 --db " + dir + "/OUT", "OUT"},
        {"weights", "weights --db " + dir + "/db.lfix --query 'buy a tennis ball' --p 1.0 --out " + dir + "/OUT", "OUT"},
        {"weights --hnsw", "weights --hnsw --db " + dir + "/db.lfix --query 'stock fell' --out " + dir + "/OUT", "OUT"},
        {"merge linear", "merge --strategy linear --weights " + dir + "/w.json --adapters " + dir + "/adapters --out " + dir + "/OUT", "OUT"},
        {"merge cat", "merge --strategy cat --weights " + dir + "/w.json --adapters " + dir + "/adapters --out " + dir + "/OUT", "OUT"},
        {"merge ties", "merge --strategy ties --weights " + dir + "/w.json --adapters " + dir + "/adapters --out " + dir + "/OUT", "OUT"},
        {"merge magnitude_prune", "merge --strategy magnitude_prune --weights " + dir + "/w.json --adapters " + dir + "/adapters --out " + dir + "/OUT", "OUT"},
        {"bench", "bench --config " + dir + "/bench.json --seed 42 --out " + dir + "/OUT --csv " + dir + "/OUT.csv", "OUT"},
        {"inspect", "inspect " + dir + "/db.lfix > " + dir + "/OUT", "OUT"},
    };

    if (sh(cli + " ingest --config " + dir + "/ingest.json --db " + dir + "/db.lfix > /dev/null 2>&1") != 0 ||
        sh(cli + " weights --db " + dir + "/db.lfix --query 'buy a tennis ball' --p 1.0 --out " + dir + "/w.json 2>/dev/null") != 0) {
        fs::remove_all(root);
        return {false, "setup commands failed"};
    }

    std::vector<std::string> bad;
    for (std::size_t ci = 0; ci < cmds.size(); ++ci) {
        const auto& c = cmds[ci];
        std::map<std::string, std::string> runs[2];
        bool ran = true;
        for (int i = 0; i < 2; ++i) {
            auto args = c.args;
            const std::string out = c.output + std::to_string(ci) + "_" + std::to_string(i);
            for (std::size_t pos = 0; (pos = args.find("OUT", pos)) != std::string::npos; pos += out.size()) {
                args.replace(pos, 3, out);
            }
            ran = ran && sh(cli + " " + args + (c.name == "inspect" ? "" : " > /dev/null") + " 2>/dev/null") == 0;
            runs[i] = tree(root / out);
            if (c.name == "bench") runs[i]["csv"] = slurp(root / (out + ".csv"));
        }
        if (!ran || runs[0].empty()) {
            bad.push_back(c.name + " (failed)");
        } else if (runs[0] != runs[1]) {
            bad.push_back(c.name);
        }
    }
    fs::remove_all(root);
    std::string detail = std::to_string(cmds.size()) + " commands run twice";
    if (!bad.empty()) {
        detail += "; differing:";
        for (const auto& b : bad) detail += " " + b;
    }
    return {bad.empty(), detail};
}

}  // namespace

int main() {
    report("cat merge weighted-sum identity", cat_identity);
    report("linear single-adapter recovery", linear_recovery);
    report("TIES fixture and randomized oracle", ties_check);
    report("magnitude prune density and identity", magnitude_prune_check);
    report("nucleus normalization and monotonicity", nucleus_check);
    report("retrieval exact and approximate", retrieval_check);
    report("synthetic end-to-end bench", bench_check);
    report("CLI determinism", cli_determinism);
    std::cout << (failures == 0 ? "all acceptance criteria pass" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
