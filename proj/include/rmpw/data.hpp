#pragma once

// Tabular data model for mediation analyses: a column-oriented dataset,
// variable-role bindings, strict CSV read/write, and assumption checks.

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rmpw/common.hpp"

namespace rmpw {

// Binds dataset columns to analysis roles. Covariate and post-treatment
// lists may be empty; every named column must exist and be distinct.
struct VariableRoles {
  std::string id;  // empty: row order is the unit id
  std::string treatment;
  std::string mediator;
  std::string outcome;
  std::vector<std::string> covariates;
  std::vector<std::string> post_treatment;

  void check() const {
    if (treatment.empty()) throw_config("treatment column is required");
    if (mediator.empty()) throw_config("mediator column is required");
    if (outcome.empty()) throw_config("outcome column is required");
    std::set<std::string> seen;
    auto add = [&](const std::string& name, const char* role) {
      if (name.empty()) throw_config(std::string(role) + " name is empty");
      if (!seen.insert(name).second)
        throw_config("column '" + name + "' bound to more than one role");
    };
    if (!id.empty()) add(id, "id column");
    add(treatment, "treatment column");
    add(mediator, "mediator column");
    add(outcome, "outcome column");
    for (const auto& c : covariates) add(c, "covariate column");
    for (const auto& c : post_treatment) add(c, "post-treatment column");
  }
};

// One analysis sample. Treatment and mediator are 0/1 ints; everything
// else is double. Covariates are stored column-major: covariates[j][i]
// is covariate j for unit i.
struct Dataset {
  std::vector<std::string> unit_ids;
  std::vector<int> treatment;
  std::vector<int> mediator;
  std::vector<double> outcome;
  std::vector<std::string> covariate_names;
  std::vector<std::vector<double>> covariates;
  std::vector<std::string> post_treatment_names;
  std::vector<std::vector<double>> post_treatment;

  std::size_t size() const { return treatment.size(); }

  const std::vector<double>& covariate(const std::string& name) const {
    for (std::size_t j = 0; j < covariate_names.size(); ++j)
      if (covariate_names[j] == name) return covariates[j];
    throw_config("unknown covariate '" + name + "'");
  }

  const std::vector<double>& post_treatment_column(const std::string& name) const {
    for (std::size_t j = 0; j < post_treatment_names.size(); ++j)
      if (post_treatment_names[j] == name) return post_treatment[j];
    throw_config("unknown post-treatment column '" + name + "'");
  }

  bool outcome_is_binary() const {
    for (double y : outcome)
      if (y != 0.0 && y != 1.0) return false;
    return !outcome.empty();
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      cells.emplace_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return cells;
}

inline double parse_double_strict(std::string_view cell, const std::string& column,
                                  std::size_t row) {
  const double value = [&] {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
      throw_data("non-numeric value '" + std::string(cell) + "' in column '" +
                 column + "' at data row " + std::to_string(row + 1));
    return v;
  }();
  return value;
}

inline int parse_binary_strict(std::string_view cell, const std::string& column,
                               std::size_t row) {
  const double v = parse_double_strict(cell, column, row);
  if (v != 0.0 && v != 1.0)
    throw_data("column '" + column + "' must be 0/1; found '" +
               std::string(cell) + "' at data row " + std::to_string(row + 1));
  return static_cast<int>(v);
}

// Shortest round-trip decimal text for a double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

}  // namespace detail

// Reads a CSV with a header row. Missing role columns, non-numeric
// cells, ragged rows, and empty inputs are all hard errors; there is no
// missing-data convention.
inline Dataset load_csv(const std::string& path, const VariableRoles& roles) {
  roles.check();
  std::ifstream in(path);
  if (!in) throw_data("cannot open data file '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw_data("data file '" + path + "' is empty");

  const auto header = detail::split_csv_line(lines[0]);
  std::unordered_map<std::string, std::size_t> col_index;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty())
      throw_data("empty column name in header of '" + path + "'");
    if (!col_index.emplace(header[j], j).second)
      throw_data("duplicate column '" + header[j] + "' in header of '" + path + "'");
  }
  auto require = [&](const std::string& name) {
    const auto it = col_index.find(name);
    if (it == col_index.end())
      throw_data("column '" + name + "' not found in '" + path + "'");
    return it->second;
  };

  const std::size_t ci_treat = require(roles.treatment);
  const std::size_t ci_med = require(roles.mediator);
  const std::size_t ci_out = require(roles.outcome);
  std::vector<std::size_t> ci_x, ci_l;
  for (const auto& name : roles.covariates) ci_x.push_back(require(name));
  for (const auto& name : roles.post_treatment) ci_l.push_back(require(name));
  const bool has_id = !roles.id.empty();
  const std::size_t ci_id = has_id ? require(roles.id) : 0;

  const std::size_t n = lines.size() - 1;
  if (n == 0) throw_data("data file '" + path + "' has a header but no rows");

  Dataset ds;
  ds.unit_ids.reserve(n);
  ds.treatment.reserve(n);
  ds.mediator.reserve(n);
  ds.outcome.reserve(n);
  ds.covariate_names = roles.covariates;
  ds.covariates.assign(roles.covariates.size(), {});
  for (auto& col : ds.covariates) col.reserve(n);
  ds.post_treatment_names = roles.post_treatment;
  ds.post_treatment.assign(roles.post_treatment.size(), {});
  for (auto& col : ds.post_treatment) col.reserve(n);

  for (std::size_t r = 0; r < n; ++r) {
    const auto cells = detail::split_csv_line(lines[r + 1]);
    if (cells.size() != header.size())
      throw_data("row " + std::to_string(r + 1) + " of '" + path + "' has " +
                 std::to_string(cells.size()) + " cells; header has " +
                 std::to_string(header.size()));
    ds.unit_ids.push_back(has_id ? cells[ci_id] : std::to_string(r + 1));
    ds.treatment.push_back(detail::parse_binary_strict(cells[ci_treat], roles.treatment, r));
    ds.mediator.push_back(detail::parse_binary_strict(cells[ci_med], roles.mediator, r));
    ds.outcome.push_back(detail::parse_double_strict(cells[ci_out], roles.outcome, r));
    for (std::size_t j = 0; j < ci_x.size(); ++j)
      ds.covariates[j].push_back(
          detail::parse_double_strict(cells[ci_x[j]], roles.covariates[j], r));
    for (std::size_t j = 0; j < ci_l.size(); ++j)
      ds.post_treatment[j].push_back(
          detail::parse_double_strict(cells[ci_l[j]], roles.post_treatment[j], r));
  }
  return ds;
}

// Writes id, treatment, mediator, outcome, then covariate and
// post-treatment columns. Doubles use shortest round-trip formatting so
// a write/read cycle reproduces values exactly.
inline void write_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw_data("cannot write data file '" + path + "'");
  out << "id,a,z,y";
  for (const auto& name : ds.covariate_names) out << ',' << name;
  for (const auto& name : ds.post_treatment_names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.unit_ids[i] << ',' << ds.treatment[i] << ',' << ds.mediator[i]
        << ',' << detail::format_double(ds.outcome[i]);
    for (const auto& col : ds.covariates) out << ',' << detail::format_double(col[i]);
    for (const auto& col : ds.post_treatment) out << ',' << detail::format_double(col[i]);
    out << '\n';
  }
  if (!out.flush()) throw_data("failed writing '" + path + "'");
}

// Structural checks ahead of estimation. Findings are reported, never
// silently repaired; the caller decides which ones are fatal.
struct ValidationReport {
  std::size_t n = 0;
  // cell_counts[a][z]: units with treatment a and mediator z.
  std::array<std::array<std::size_t, 2>, 2> cell_counts{};
  std::array<bool, 2> arm_empty{};
  std::vector<std::pair<int, int>> empty_cells;  // (a, z), over non-empty arms
  std::vector<std::string> constant_columns;
  std::vector<std::string> duplicate_ids;

  bool arms_ok() const { return !arm_empty[0] && !arm_empty[1]; }
  bool cells_ok() const { return empty_cells.empty(); }
};

inline ValidationReport validate(const Dataset& ds) {
  if (ds.size() == 0) throw_data("dataset has no rows");
  ValidationReport rep;
  rep.n = ds.size();
  for (std::size_t i = 0; i < ds.size(); ++i)
    ++rep.cell_counts[ds.treatment[i]][ds.mediator[i]];
  for (int a = 0; a < 2; ++a)
    rep.arm_empty[a] = (rep.cell_counts[a][0] + rep.cell_counts[a][1]) == 0;
  for (int a = 0; a < 2; ++a) {
    if (rep.arm_empty[a]) continue;
    for (int z = 0; z < 2; ++z)
      if (rep.cell_counts[a][z] == 0) rep.empty_cells.emplace_back(a, z);
  }
  auto check_constant = [&](const std::string& name, const std::vector<double>& col) {
    for (std::size_t i = 1; i < col.size(); ++i)
      if (col[i] != col[0]) return;
    rep.constant_columns.push_back(name);
  };
  for (std::size_t j = 0; j < ds.covariate_names.size(); ++j)
    check_constant(ds.covariate_names[j], ds.covariates[j]);
  for (std::size_t j = 0; j < ds.post_treatment_names.size(); ++j)
    check_constant(ds.post_treatment_names[j], ds.post_treatment[j]);
  std::unordered_set<std::string> seen, dup;
  for (const auto& id : ds.unit_ids)
    if (!seen.insert(id).second && dup.insert(id).second)
      rep.duplicate_ids.push_back(id);
  return rep;
}

}  // namespace rmpw
