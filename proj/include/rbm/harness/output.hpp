#pragma once

// Result tables and their on-disk forms: CSV (header row, doubles at 17
// significant digits) or JSON, plus a JSON metadata sidecar.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "rbm/harness/config.hpp"

namespace rbm::harness {

using Cell = std::variant<double, long long, std::string>;

struct Table {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<Cell>> rows;

    void add(std::vector<Cell> row) {
        if (row.size() != header.size()) throw DimensionError("table " + name + ": row width differs from header");
        rows.push_back(std::move(row));
    }
};

inline Cell count_cell(std::size_t n) { return static_cast<long long>(n); }

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string format_cell(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
    if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
    const auto& s = std::get<std::string>(c);
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (const char ch : s) {
        if (ch == '"') quoted += '"';
        quoted += ch;
    }
    return quoted + "\"";
}

inline std::string to_csv(const Table& t) {
    std::ostringstream out;
    for (std::size_t k = 0; k < t.header.size(); ++k) out << (k ? "," : "") << t.header[k];
    out << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << format_cell(row[k]);
        out << '\n';
    }
    return out.str();
}

inline Json cell_json(const Cell& c) {
    return std::visit([](const auto& v) -> Json {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, double>) {
            if (!std::isfinite(v)) return format_double(v);
        }
        return v;
    }, c);
}

inline Json to_json(const Table& t) {
    Json rows = Json::array();
    for (const auto& row : t.rows) {
        Json r = Json::object();
        for (std::size_t k = 0; k < row.size(); ++k) r[t.header[k]] = cell_json(row[k]);
        rows.push_back(std::move(r));
    }
    return rows;
}

struct RunResult {
    std::vector<Table> tables;  // first is the primary table
    Json summary = Json::object();
    std::size_t censored = 0;
    std::vector<std::string> failures;  // checks that did not hold

    [[nodiscard]] bool passed() const { return failures.empty(); }
    [[nodiscard]] const Table& table(const std::string& name) const {
        for (const auto& t : tables) {
            if (t.name == name) return t;
        }
        throw ContractError("no table named " + name);
    }
};

/// Where table `k` goes: the primary at `path`, the others at <stem>_<name><ext>.
inline std::filesystem::path table_path(const std::filesystem::path& path, const Table& t, std::size_t k) {
    if (k == 0) return path;
    auto p = path;
    p.replace_filename(path.stem().string() + "_" + t.name + path.extension().string());
    return p;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Writes the tables and `<path>.meta.json`; returns every file written.
inline std::vector<std::filesystem::path> write_outputs(const ExperimentConfig& cfg, const RunResult& result,
                                                        double wall_seconds) {
    const std::filesystem::path path = cfg.output_path();
    const std::string hash = hex64(config_hash(cfg));
    std::vector<std::filesystem::path> written;
    Json meta = Json::object();
    meta["experiment"] = to_string(cfg.experiment);
    meta["seed"] = cfg.seed;
    meta["config_hash"] = hash;
    meta["config"] = to_json(cfg);
    meta["censored"] = result.censored;
    meta["wall_seconds"] = wall_seconds;
    meta["summary"] = result.summary;
    meta["failures"] = result.failures;

    if (cfg.format == OutputFormat::csv) {
        Json files = Json::array();
        for (std::size_t k = 0; k < result.tables.size(); ++k) {
            const auto p = table_path(path, result.tables[k], k);
            write_text(p, to_csv(result.tables[k]));
            written.push_back(p);
            files.push_back({{"table", result.tables[k].name}, {"path", p.string()}, {"columns", result.tables[k].header}});
        }
        meta["files"] = files;
    } else {
        Json doc = Json::object();
        doc["experiment"] = to_string(cfg.experiment);
        doc["seed"] = cfg.seed;
        doc["config_hash"] = hash;
        doc["summary"] = result.summary;
        for (const auto& t : result.tables) doc["tables"][t.name] = to_json(t);
        write_text(path, doc.dump(2) + "\n");
        written.push_back(path);
        meta["files"] = Json::array({{{"path", path.string()}}});
    }
    const std::filesystem::path sidecar = path.string() + ".meta.json";
    write_text(sidecar, meta.dump(2) + "\n");
    written.push_back(sidecar);
    return written;
}

}  // namespace rbm::harness
