#pragma once

// Result tables: per-seed cells, median cells, deltas against a baseline
// row and an optional reference column with published values.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ptbt {

using Cell = std::optional<double>;

// Median of the present values; nullopt if none.
Cell median(std::vector<Cell> values);

struct ReportRow {
    std::string label;
    // seed -> one value per column
    std::map<std::uint64_t, std::vector<Cell>> per_seed;
    // published values, one per column, display only
    std::vector<Cell> reference;

    std::vector<Cell> cells(std::size_t columns) const;  // medians
};

struct ReportTable {
    std::string title;
    std::vector<std::string> columns;
    std::string baseline;  // label of the baseline row; empty = no deltas
    std::string reference_label = "published (WMT16 En-Ro)";
    std::vector<ReportRow> rows;

    const ReportRow& row(const std::string& label) const;
    ReportRow& row(const std::string& label);
    // median cell
    Cell cell(const std::string& label, const std::string& column) const;
    Cell delta(const std::string& label, const std::string& column) const;
    bool has_reference() const;

    nlohmann::json to_json() const;
    static ReportTable from_json(const nlohmann::json& j);
    // aligned text, then the per-seed detail
    std::string to_text() const;
    std::string to_tsv() const;
    void save(const std::filesystem::path& dir, const std::string& stem) const;  // .json .tsv .txt
    static ReportTable load(const std::filesystem::path& json_path);
};

}  // namespace ptbt
