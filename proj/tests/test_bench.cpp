#include <cmath>
#include <set>

#include <doctest.h>

#include "lorafuse/bench.hpp"
#include "support.hpp"

using namespace lorafuse;
using namespace lorafuse::bench;

namespace {

SuiteConfig seven() {
    SuiteConfig c;
    c.seed = 7;
    return c;
}

bool same_suite(const Suite& a, const Suite& b) {
    if (a.corpus != b.corpus || a.tasks.size() != b.tasks.size()) return false;
    for (std::size_t i = 0; i < a.tasks.size(); ++i) {
        const auto& x = a.tasks[i];
        const auto& y = b.tasks[i];
        if (x.name != y.name || x.family != y.family || x.vocab != y.vocab || x.adapter.alpha != y.adapter.alpha) {
            return false;
        }
        for (const auto& [m, p] : x.adapter.pairs) {
            if (p.A != y.adapter.pairs.at(m).A || p.B != y.adapter.pairs.at(m).B) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("generate_suite counts and determinism") {
    const auto s = generate_suite(seven());
    CHECK(s.corpus.size() == 1200);
    CHECK(s.tasks.size() == 6);
    CHECK(same_suite(s, generate_suite(seven())));
    CHECK_FALSE(same_suite(s, generate_suite(SuiteConfig{})));

    std::set<std::string> families;
    for (const auto& t : s.tasks) {
        families.insert(t.family);
        CHECK_FALSE(t.vocab.empty());
        CHECK_NOTHROW(t.adapter.validate());
        CHECK(t.adapter.task == t.name);
    }
    CHECK(families.size() == 3);
    CHECK(s.task(s.tasks[2].name).name == s.tasks[2].name);
    CHECK_KIND(s.task("nope"), ErrorKind::InvalidArgument);
}

TEST_CASE("vocabulary overlap is higher within a family") {
    const auto s = generate_suite(seven());
    double in_sum = 0, out_sum = 0;
    int in_n = 0, out_n = 0;
    for (std::size_t i = 0; i < s.tasks.size(); ++i) {
        for (std::size_t j = i + 1; j < s.tasks.size(); ++j) {
            const double o = jaccard(s.tasks[i].vocab, s.tasks[j].vocab);
            if (s.tasks[i].family == s.tasks[j].family) {
                in_sum += o;
                ++in_n;
            } else {
                out_sum += o;
                ++out_n;
            }
        }
    }
    CHECK(in_sum / in_n > out_sum / out_n);
}

TEST_CASE("suite config validation") {
    SuiteConfig c;
    c.n_families = 7;
    CHECK_KIND(c.validate(), ErrorKind::InvalidConfig);
    c = SuiteConfig{};
    c.global_share = 0.7;
    CHECK_KIND(c.validate(), ErrorKind::InvalidConfig);
    c = SuiteConfig{};
    c.rank = 0;
    CHECK_KIND(generate_suite(c), ErrorKind::InvalidConfig);
}

TEST_CASE("jaccard and median") {
    CHECK(jaccard({"a", "b"}, {"b", "c"}) == doctest::Approx(1.0 / 3.0));
    CHECK(jaccard({}, {}) == 0.0);
    CHECK(median({3, 1, 2}) == 2.0);
    CHECK(median({4, 1, 2, 3}) == 2.5);
}

TEST_CASE("bench meets its targets and is deterministic") {
    const BenchConfig cfg;
    const auto suite = generate_suite(cfg.suite);
    const auto r = run_bench(suite, cfg);
    REQUIRE(r.queries.size() == 50);
    CHECK(r.summary.median_in_family_mass >= 0.8);
    CHECK(r.summary.median_errors.at("linear") < r.summary.median_uniform_linear_error);
    CHECK(r.summary.all_finite);
    for (const auto& q : r.queries) {
        CHECK(std::abs(q.weights.total() - 1.0) <= 1e-9);
        CHECK(q.in_family_mass >= 0.0);
        CHECK(q.in_family_mass <= 1.0 + 1e-12);
        CHECK_FALSE(q.weights.contains(q.held_out_task));
        for (const auto& [s, e] : q.errors) CHECK(e >= 0.0);
    }

    const auto again = run_bench(suite, cfg);
    CHECK(report_json(r) == report_json(again));
    CHECK(summary_csv(r) == summary_csv(again));
    CHECK(same_suite(suite, generate_suite(cfg.suite)));  // inputs untouched
}

TEST_CASE("p = 1 keeps every retrieved task") {
    BenchConfig cfg;
    cfg.p = 1.0;
    cfg.queries = 12;
    const auto r = run_bench(generate_suite(cfg.suite), cfg);
    for (const auto& q : r.queries) CHECK(q.weights.nucleus_tasks().size() == q.retrieved_tasks.size());
}

TEST_CASE("bench config parsing") {
    const auto c = parse_bench_config(R"({"suite": {"seed": 9, "n_tasks": 4, "n_families": 2}, "k": 20,
                                         "p": 0.8, "queries": 8, "strategies": ["linear", "ties"],
                                         "densities": {"ties": 0.4}})");
    CHECK(c.suite.seed == 9);
    CHECK(c.suite.n_tasks == 4);
    CHECK(c.k == 20);
    CHECK(c.p == 0.8);
    CHECK(c.strategies.size() == 2);
    CHECK(c.densities.at(merge::Strategy::ties) == 0.4);
    CHECK_KIND(parse_bench_config("[1"), ErrorKind::InvalidConfig);
    CHECK_KIND(parse_bench_config(R"({"strategies": ["svd"]})"), ErrorKind::InvalidConfig);
}
