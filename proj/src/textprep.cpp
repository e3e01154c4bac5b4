#include "lorafuse/textprep.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "lorafuse/error.hpp"
#include "lorafuse/io.hpp"
#include "lorafuse/rng.hpp"

namespace lorafuse::textprep {

void TaskSpec::validate() const {
    if (task_name.empty()) {
        throw Error(ErrorKind::ConfigError, "task_name must be non-empty");
    }
    if (text_columns.empty()) {
        throw Error(ErrorKind::ConfigError, "task '" + task_name + "' declares no text columns");
    }
    if (separator_labels.size() != text_columns.size()) {
        throw Error(ErrorKind::ConfigError, "task '" + task_name + "' has " +
                                                std::to_string(text_columns.size()) +
                                                " text columns but " +
                                                std::to_string(separator_labels.size()) +
                                                " separator labels");
    }
    for (const auto& sep : separator_labels) {
        if (sep.size() < 3 || sep.front() != '[' || sep.back() != ']') {
            throw Error(ErrorKind::ConfigError,
                        "separator '" + sep + "' of task '" + task_name + "' is not of the form [NAME]");
        }
    }
    for (const auto& label : label_columns) {
        if (std::find(text_columns.begin(), text_columns.end(), label) != text_columns.end()) {
            throw Error(ErrorKind::ConfigError, "label column '" + label + "' of task '" + task_name +
                                                    "' is also declared as a text column");
        }
    }
}

FlatExample unify_row(const Row& row, const TaskSpec& spec, std::size_t row_index) {
    std::string text = spec.hint;
    for (std::size_t i = 0; i < spec.text_columns.size(); ++i) {
        auto it = row.find(spec.text_columns[i]);
        if (it == row.end()) {
            throw Error(ErrorKind::MissingColumn, spec.text_columns[i]);
        }
        if (!text.empty()) {
            text += ' ';
        }
        text += spec.separator_labels[i];
        text += ' ';
        text += it->second;
    }
    return FlatExample{spec.task_name + ":" + std::to_string(row_index), std::move(text),
                       spec.task_name};
}

std::vector<FlatExample> sample_per_task(std::vector<FlatExample> rows, std::size_t cap,
                                         std::uint64_t seed) {
    if (cap == 0) {
        throw Error(ErrorKind::InvalidArgument, "sample cap must be >= 1");
    }
    std::unordered_set<std::string> seen;
    std::erase_if(rows, [&](const FlatExample& e) { return !seen.insert(e.id).second; });

    SplitMix64 rng(seed);
    shuffle(std::span<FlatExample>(rows), rng);
    if (rows.size() > cap) {
        rows.resize(cap);
    }
    return rows;
}

Row CsvTable::row(std::size_t i) const {
    Row out;
    const auto& fields = rows.at(i);
    for (std::size_t c = 0; c < header.size(); ++c) {
        out.emplace(header[c], c < fields.size() ? fields[c] : std::string());
    }
    return out;
}

CsvTable parse_csv(std::string_view text) {
    // Skip a UTF-8 byte order mark.
    if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") {
        text.remove_prefix(3);
    }

    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        // A blank line yields one empty field; drop it.
        if (!(record.size() == 1 && record[0].empty())) {
            records.push_back(std::move(record));
        }
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"':
                if (field_started || !field.empty()) {
                    throw Error(ErrorKind::FormatError,
                                "stray quote inside unquoted CSV field at byte " + std::to_string(i));
                }
                in_quotes = true;
                field_started = true;
                break;
            case ',':
                end_field();
                break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') {
                    ++i;
                }
                end_record();
                break;
            case '\n':
                end_record();
                break;
            default:
                field += c;
                field_started = true;
        }
    }
    if (in_quotes) {
        throw Error(ErrorKind::FormatError, "unterminated quoted CSV field");
    }
    if (field_started || !field.empty() || !record.empty()) {
        end_record();
    }

    if (records.empty()) {
        throw Error(ErrorKind::FormatError, "CSV has no header row");
    }
    CsvTable table;
    table.header = std::move(records.front());
    std::set<std::string> names;
    for (const auto& h : table.header) {
        if (!names.insert(h).second) {
            throw Error(ErrorKind::FormatError, "duplicate CSV column '" + h + "'");
        }
    }
    table.rows.assign(std::make_move_iterator(records.begin() + 1),
                      std::make_move_iterator(records.end()));
    return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
    auto data = io::read_file(path);
    return parse_csv(std::string_view(data.data(), data.size()));
}

std::vector<FlatExample> flatten_table(const CsvTable& table, const TaskSpec& spec) {
    for (const auto& col : spec.text_columns) {
        if (std::find(table.header.begin(), table.header.end(), col) == table.header.end()) {
            throw Error(ErrorKind::MissingColumn, col);
        }
    }
    std::vector<FlatExample> out;
    out.reserve(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        out.push_back(unify_row(table.row(i), spec, i));
    }
    return out;
}

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
    std::vector<std::string> out;
    if (j.contains(key)) {
        for (const auto& v : j.at(key)) {
            out.push_back(v.get<std::string>());
        }
    }
    return out;
}

}  // namespace

IngestConfig parse_ingest_config(std::string_view json_text, const std::filesystem::path& base_dir) {
    IngestConfig cfg;
    try {
        const auto j = nlohmann::json::parse(json_text);
        cfg.cap = j.value("cap", cfg.cap);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.chunk = j.value("chunk", cfg.chunk);
        if (j.contains("embedding")) {
            const auto& e = j.at("embedding");
            cfg.embedding.provider = e.value("provider", cfg.embedding.provider);
            cfg.embedding.dim = e.value("dim", cfg.embedding.dim);
            if (e.contains("path")) {
                cfg.embedding.store_path = base_dir / e.at("path").get<std::string>();
            }
        }
        std::set<std::string> names;
        for (const auto& t : j.at("tasks")) {
            IngestTask task;
            task.spec.task_name = t.at("task_name").get<std::string>();
            task.spec.hint = t.value("hint", std::string());
            task.spec.text_columns = string_list(t, "text_columns");
            task.spec.separator_labels = string_list(t, "separator_labels");
            task.spec.label_columns = string_list(t, "label_columns");
            task.csv_path = base_dir / t.at("csv").get<std::string>();
            task.spec.validate();
            if (!names.insert(task.spec.task_name).second) {
                throw Error(ErrorKind::ConfigError,
                            "duplicate task_name '" + task.spec.task_name + "'");
            }
            cfg.tasks.push_back(std::move(task));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, std::string("ingest config: ") + e.what());
    }
    if (cfg.cap == 0 || cfg.chunk == 0 || cfg.embedding.dim == 0) {
        throw Error(ErrorKind::ConfigError, "cap, chunk and embedding.dim must be >= 1");
    }
    if (cfg.embedding.provider != "hashing" && cfg.embedding.provider != "file") {
        throw Error(ErrorKind::ConfigError, "unknown embedding provider '" + cfg.embedding.provider + "'");
    }
    return cfg;
}

IngestConfig load_ingest_config(const std::filesystem::path& path) {
    auto data = io::read_file(path);
    return parse_ingest_config(std::string_view(data.data(), data.size()), path.parent_path());
}

}  // namespace lorafuse::textprep
