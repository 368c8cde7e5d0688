#include "ptbt/report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ptbt/metrics.hpp"
#include "ptbt/util.hpp"

namespace ptbt {

Cell median(std::vector<Cell> values) {
    std::vector<double> v;
    for (const auto& c : values)
        if (c) v.push_back(*c);
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<Cell> ReportRow::cells(std::size_t columns) const {
    std::vector<Cell> out(columns);
    for (std::size_t c = 0; c < columns; ++c) {
        std::vector<Cell> col;
        for (const auto& [_, vals] : per_seed)
            if (c < vals.size()) col.push_back(vals[c]);
        out[c] = median(col);
    }
    return out;
}

const ReportRow& ReportTable::row(const std::string& label) const {
    for (const auto& r : rows)
        if (r.label == label) return r;
    throw std::out_of_range("no row '" + label + "' in table '" + title + "'");
}

ReportRow& ReportTable::row(const std::string& label) {
    return const_cast<ReportRow&>(static_cast<const ReportTable&>(*this).row(label));
}

namespace {

std::size_t column_index(const ReportTable& t, const std::string& column) {
    auto it = std::find(t.columns.begin(), t.columns.end(), column);
    if (it == t.columns.end()) throw std::out_of_range("no column '" + column + "' in table '" + t.title + "'");
    return static_cast<std::size_t>(it - t.columns.begin());
}

std::string cell_text(const Cell& c) { return c ? format_score(*c) : "-"; }

std::string delta_text(const Cell& c) {
    if (!c) return "-";
    const std::string s = format_score(*c);
    return *c >= 0.0 && s[0] != '-' ? "+" + s : s;
}

std::string reference_text(const std::vector<Cell>& ref) {
    bool any = false;
    std::string s;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (i) s += "/";
        s += cell_text(ref[i]);
        any = any || ref[i].has_value();
    }
    return any ? s : "-";
}

nlohmann::json cells_json(const std::vector<Cell>& cells) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& c : cells) a.push_back(c ? nlohmann::json(*c) : nlohmann::json(nullptr));
    return a;
}

std::vector<Cell> cells_from(const nlohmann::json& a) {
    std::vector<Cell> out;
    for (const auto& x : a) out.push_back(x.is_null() ? Cell{} : Cell{x.get<double>()});
    return out;
}

// header line and rows of equal width columns
std::string align(const std::vector<std::vector<std::string>>& grid) {
    std::vector<std::size_t> width;
    for (const auto& r : grid) {
        if (width.size() < r.size()) width.resize(r.size(), 0);
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream os;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t c = 0; c < grid[i].size(); ++c) {
            if (c) os << "  ";
            os << grid[i][c];
            if (c + 1 < grid[i].size()) os << std::string(width[c] - grid[i][c].size(), ' ');
        }
        os << '\n';
        if (i == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            os << std::string(total - 2, '-') << '\n';
        }
    }
    return os.str();
}

std::vector<std::vector<std::string>> grid_of(const ReportTable& t) {
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> head{"system"};
    for (const auto& c : t.columns) {
        head.push_back(c);
        if (!t.baseline.empty()) head.push_back("Δ" + c);
    }
    if (t.has_reference()) head.push_back(t.reference_label);
    grid.push_back(head);
    for (const auto& r : t.rows) {
        std::vector<std::string> line{r.label};
        const auto cells = r.cells(t.columns.size());
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            line.push_back(cell_text(cells[c]));
            if (!t.baseline.empty())
                line.push_back(r.label == t.baseline ? "-" : delta_text(t.delta(r.label, t.columns[c])));
        }
        if (t.has_reference()) line.push_back(reference_text(r.reference));
        grid.push_back(line);
    }
    return grid;
}

}  // namespace

Cell ReportTable::cell(const std::string& label, const std::string& column) const {
    return row(label).cells(columns.size())[column_index(*this, column)];
}

Cell ReportTable::delta(const std::string& label, const std::string& column) const {
    if (baseline.empty() || label == baseline) return std::nullopt;
    const Cell a = cell(label, column), b = cell(baseline, column);
    if (!a || !b) return std::nullopt;
    return *a - *b;
}

bool ReportTable::has_reference() const {
    for (const auto& r : rows)
        for (const auto& c : r.reference)
            if (c) return true;
    return false;
}

nlohmann::json ReportTable::to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json seeds = nlohmann::json::object();
        for (const auto& [s, v] : r.per_seed) seeds[std::to_string(s)] = cells_json(v);
        nlohmann::json deltas = nlohmann::json::array();
        for (const auto& c : columns) {
            const Cell d = delta(r.label, c);
            deltas.push_back(d ? nlohmann::json(*d) : nlohmann::json(nullptr));
        }
        rs.push_back({{"label", r.label},
                      {"median", cells_json(r.cells(columns.size()))},
                      {"delta", deltas},
                      {"per_seed", seeds},
                      {"reference", cells_json(r.reference)}});
    }
    return {{"title", title},
            {"columns", columns},
            {"baseline", baseline},
            {"reference_label", reference_label},
            {"rows", rs}};
}

ReportTable ReportTable::from_json(const nlohmann::json& j) {
    ReportTable t;
    t.title = j.at("title").get<std::string>();
    t.columns = j.at("columns").get<std::vector<std::string>>();
    t.baseline = j.at("baseline").get<std::string>();
    t.reference_label = j.at("reference_label").get<std::string>();
    for (const auto& r : j.at("rows")) {
        ReportRow row;
        row.label = r.at("label").get<std::string>();
        for (const auto& [s, v] : r.at("per_seed").items()) row.per_seed[std::stoull(s)] = cells_from(v);
        row.reference = cells_from(r.at("reference"));
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string ReportTable::to_text() const {
    std::ostringstream os;
    os << title << "\n\n" << align(grid_of(*this));
    std::vector<std::vector<std::string>> detail;
    std::vector<std::string> head{"system", "seed"};
    for (const auto& c : columns) head.push_back(c);
    detail.push_back(head);
    for (const auto& r : rows)
        for (const auto& [s, v] : r.per_seed) {
            std::vector<std::string> line{r.label, std::to_string(s)};
            for (const auto& c : v) line.push_back(cell_text(c));
            detail.push_back(line);
        }
    if (detail.size() > 1) os << "\nper seed\n\n" << align(detail);
    return os.str();
}

std::string ReportTable::to_tsv() const {
    std::ostringstream os;
    for (const auto& line : grid_of(*this)) {
        for (std::size_t c = 0; c < line.size(); ++c) os << (c ? "\t" : "") << line[c];
        os << '\n';
    }
    return os.str();
}

void ReportTable::save(const std::filesystem::path& dir, const std::string& stem) const {
    std::filesystem::create_directories(dir);
    write_text_file(dir / (stem + ".json"), to_json().dump(2) + "\n");
    write_text_file(dir / (stem + ".tsv"), to_tsv());
    write_text_file(dir / (stem + ".txt"), to_text());
}

ReportTable ReportTable::load(const std::filesystem::path& json_path) {
    return from_json(nlohmann::json::parse(read_text_file(json_path)));
}

}  // namespace ptbt
