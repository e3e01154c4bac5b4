#include <set>

#include <doctest.h>

#include "lorafuse/textprep.hpp"
#include "support.hpp"

using namespace lorafuse;
using namespace lorafuse::textprep;

namespace {

TaskSpec paraphrase_spec() {
    return {"mrpc", "Determine if the two sentences convey the same meaning.", {"premise", "hypothesis"},
            {"[P]", "[H]"}, {"label"}};
}

std::vector<FlatExample> numbered(std::size_t n, const std::string& task = "t") {
    std::vector<FlatExample> rows;
    for (std::size_t i = 0; i < n; ++i) {
        rows.push_back({task + ":" + std::to_string(i), "row " + std::to_string(i), task});
    }
    return rows;
}

}  // namespace

TEST_CASE("unify_row joins hint and separated columns") {
    const auto ex = unify_row({{"premise", "A"}, {"hypothesis", "B"}, {"label", "1"}}, paraphrase_spec(), 3);
    CHECK(ex.text == "Determine if the two sentences convey the same meaning. [P] A [H] B");
    CHECK(ex.id == "mrpc:3");
    CHECK(ex.task == "mrpc");
}

TEST_CASE("unify_row passes empty values through") {
    const TaskSpec spec{"sst2", "Classify the sentiment.", {"text"}, {"[T]"}, {}};
    CHECK(unify_row({{"text", ""}}, spec, 0).text == "Classify the sentiment. [T] ");
}

TEST_CASE("unify_row without hint has no leading space") {
    const TaskSpec spec{"x", "", {"c1", "c2", "c3"}, {"[C1]", "[C2]", "[C3]"}, {}};
    const Row row{{"c1", "x"}, {"c2", "y"}, {"c3", "z"}};
    std::string expected;
    for (std::size_t i = 0; i < 3; ++i) {
        if (!expected.empty()) expected += ' ';
        expected += spec.separator_labels[i] + ' ' + row.at(spec.text_columns[i]);
    }
    CHECK(unify_row(row, spec, 0).text == expected);
    CHECK(expected == "[C1] x [C2] y [C3] z");
}

TEST_CASE("unify_row is pure and never leaks labels") {
    const Row row{{"premise", "cats sleep"}, {"hypothesis", "dogs bark"}, {"label", "GOLDANSWER"}};
    const auto a = unify_row(row, paraphrase_spec(), 7);
    const auto b = unify_row(row, paraphrase_spec(), 7);
    CHECK(a == b);
    CHECK(a.text.find("GOLDANSWER") == std::string::npos);
}

TEST_CASE("unify_row reports the missing column") {
    CHECK_KIND(unify_row({{"premise", "A"}}, paraphrase_spec(), 0), ErrorKind::MissingColumn);
    try {
        unify_row({{"premise", "A"}}, paraphrase_spec(), 0);
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("hypothesis") != std::string::npos);
    }
}

TEST_CASE("TaskSpec validation") {
    auto spec = paraphrase_spec();
    CHECK_NOTHROW(spec.validate());

    auto s = spec;
    s.task_name.clear();
    CHECK_KIND(s.validate(), ErrorKind::ConfigError);
    s = spec;
    s.text_columns.clear();
    s.separator_labels.clear();
    CHECK_KIND(s.validate(), ErrorKind::ConfigError);
    s = spec;
    s.separator_labels.pop_back();
    CHECK_KIND(s.validate(), ErrorKind::ConfigError);
    s = spec;
    s.separator_labels[0] = "P";
    CHECK_KIND(s.validate(), ErrorKind::ConfigError);
    s = spec;
    s.label_columns = {"premise"};
    CHECK_KIND(s.validate(), ErrorKind::ConfigError);
}

TEST_CASE("sample_per_task caps, dedups and is deterministic") {
    const auto big = numbered(5000);
    const auto a = sample_per_task(big, 2000, 42);
    CHECK(a.size() == 2000);
    CHECK(a == sample_per_task(big, 2000, 42));
    CHECK(a != sample_per_task(big, 2000, 43));

    std::set<std::string> ids;
    std::set<std::string> all;
    for (const auto& r : big) all.insert(r.id);
    for (const auto& r : a) {
        CHECK(ids.insert(r.id).second);
        CHECK(all.count(r.id) == 1);
    }

    CHECK(sample_per_task(numbered(100), 2000, 42).size() == 100);
    CHECK(sample_per_task({}, 2000, 42).empty());

    auto dup = numbered(10);
    dup.push_back(dup[3]);
    CHECK(sample_per_task(dup, 100, 1).size() == 10);
}

TEST_CASE("sample_per_task follows the documented Fisher-Yates") {
    // Independent replay of the shuffle definition from the README.
    const auto rows = numbered(20);
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(9);
    for (std::size_t i = order.size() - 1; i >= 1; --i) {
        std::swap(order[i], order[rng.below(i + 1)]);
    }
    const auto got = sample_per_task(rows, 5, 9);
    REQUIRE(got.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(got[i].id == rows[order[i]].id);
}

TEST_CASE("SplitMix64 reference values") {
    // First outputs for seed 0 from the published splitmix64.c.
    SplitMix64 rng(0);
    CHECK(rng.next() == 0xE220A8397B1DCDAFULL);
    CHECK(rng.next() == 0x6E789E6AA1B965F4ULL);
    CHECK(rng.next() == 0x06C45D188009454FULL);
}

TEST_CASE("parse_csv handles quoting, CRLF and BOM") {
    const auto t = parse_csv("\xEF\xBB\xBFq,a\r\n\"hello, world\",\"say \"\"hi\"\"\"\r\nplain,\"multi\nline\"\n\n");
    REQUIRE(t.header == std::vector<std::string>{"q", "a"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][0] == "hello, world");
    CHECK(t.rows[0][1] == "say \"hi\"");
    CHECK(t.rows[1][1] == "multi\nline");
    CHECK(t.row(1).at("q") == "plain");
}

TEST_CASE("parse_csv errors") {
    CHECK_KIND(parse_csv(""), ErrorKind::FormatError);
    CHECK_KIND(parse_csv("a,a\n1,2\n"), ErrorKind::FormatError);
}

TEST_CASE("flatten_table uses data row indices") {
    const TaskSpec spec{"piqa", "Pick the solution.", {"goal"}, {"[G]"}, {"label"}};
    const auto rows = flatten_table(parse_csv("goal,label\nfirst,0\nsecond,1\n"), spec);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].id == "piqa:1");
    CHECK(rows[1].text == "Pick the solution. [G] second");
}

TEST_CASE("ingest config parsing") {
    testing::TempDir dir("cfg");
    const std::string json = R"({
      "cap": 10, "seed": 5, "chunk": 3,
      "embedding": {"provider": "hashing", "dim": 64},
      "tasks": [
        {"task_name": "a", "hint": "h", "text_columns": ["x"], "separator_labels": ["[X]"], "csv": "a.csv"},
        {"task_name": "b", "text_columns": ["x"], "separator_labels": ["[X]"], "label_columns": ["y"], "csv": "/abs/b.csv"}
      ]})";
    const auto cfg = parse_ingest_config(json, dir.path());
    CHECK(cfg.cap == 10);
    CHECK(cfg.seed == 5);
    CHECK(cfg.chunk == 3);
    CHECK(cfg.embedding.dim == 64);
    REQUIRE(cfg.tasks.size() == 2);
    CHECK(cfg.tasks[0].csv_path == dir.path() / "a.csv");
    CHECK(cfg.tasks[1].csv_path == "/abs/b.csv");
    CHECK(cfg.tasks[1].spec.label_columns == std::vector<std::string>{"y"});

    CHECK_KIND(parse_ingest_config("{", dir.path()), ErrorKind::ConfigError);
    CHECK_KIND(parse_ingest_config(R"({"tasks": [{"task_name": "a"}]})", dir.path()), ErrorKind::ConfigError);
    CHECK_KIND(parse_ingest_config(R"({"tasks": [
        {"task_name": "a", "text_columns": ["x"], "separator_labels": ["[X]"], "csv": "a.csv"},
        {"task_name": "a", "text_columns": ["x"], "separator_labels": ["[X]"], "csv": "b.csv"}]})",
                                   dir.path()),
               ErrorKind::ConfigError);
    CHECK_KIND(parse_ingest_config(R"({"tasks": [
        {"task_name": "a", "text_columns": ["x"], "separator_labels": ["[X]"], "label_columns": ["x"], "csv": "a.csv"}]})",
                                   dir.path()),
               ErrorKind::ConfigError);
}
