#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lorafuse::textprep {

/// How one dataset's rows are flattened into a single instruction-scaffolded string.
struct TaskSpec {
    std::string task_name;
    std::string hint;
    std::vector<std::string> text_columns;
    std::vector<std::string> separator_labels;  // "[NAME]", one per text column
    std::vector<std::string> label_columns;     // gold answers; must never be flattened

    /// Throws ConfigError on an empty name, empty or mismatched columns, an
    /// unbracketed separator, or a text column that is also a label column.
    void validate() const;
};

struct FlatExample {
    std::string id;  // "{task_name}:{row_index}"
    std::string text;
    std::string task;

    friend bool operator==(const FlatExample&, const FlatExample&) = default;
};

using Row = std::map<std::string, std::string, std::less<>>;

/// hint, then "[SEP_i] value_i" per column, all joined by single spaces. An
/// empty hint contributes nothing (no leading space).
FlatExample unify_row(const Row& row, const TaskSpec& spec, std::size_t row_index);

/// Seeded Fisher-Yates shuffle of a copy, truncated to the first min(cap, n).
std::vector<FlatExample> sample_per_task(std::vector<FlatExample> rows, std::size_t cap,
                                         std::uint64_t seed);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    Row row(std::size_t i) const;
};

/// RFC 4180: quoted fields, doubled quotes, CRLF or LF line ends. A header row is required.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

/// Flattens every row of a table; ids use the table's data-row index.
std::vector<FlatExample> flatten_table(const CsvTable& table, const TaskSpec& spec);

struct EmbeddingSettings {
    std::string provider = "hashing";  // "hashing" | "file"
    std::size_t dim = 384;
    std::filesystem::path store_path;  // for provider == "file"
};

struct IngestTask {
    TaskSpec spec;
    std::filesystem::path csv_path;
};

struct IngestConfig {
    std::vector<IngestTask> tasks;
    std::size_t cap = 2000;
    std::uint64_t seed = 42;
    std::size_t chunk = 4000;
    EmbeddingSettings embedding;
};

/// Parses the ingest JSON. Relative CSV and store paths are resolved against `base_dir`.
IngestConfig parse_ingest_config(std::string_view json_text, const std::filesystem::path& base_dir);
IngestConfig load_ingest_config(const std::filesystem::path& path);

}  // namespace lorafuse::textprep
