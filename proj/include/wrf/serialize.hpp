#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wrf/eval.hpp"
#include "wrf/forest.hpp"
#include "wrf/hte.hpp"
#include "wrf/matrix.hpp"
#include "wrf/measure.hpp"

namespace wrf {

using json = nlohmann::ordered_json;

namespace detail {

// Shortest decimal that parses back to the same binary64 value.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& token, std::size_t line) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw ValidationError("csv line " + std::to_string(line) + ": cannot parse '" +
                          token + "' as a number");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

inline std::vector<std::string> read_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  for (char c : text) {
    if (c == '\n') {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(std::move(line));
      line.clear();
    } else {
      line.push_back(c);
    }
  }
  if (!line.empty()) {
    if (line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

template <typename Fn>
inline auto guarded(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& err) {
    throw ValidationError(what + ": " + err.what());
  }
}

}  // namespace detail

inline json measure_to_json(const DiscreteMeasure& mu) {
  json j;
  j["dim"] = mu.dim();
  json points = json::array();
  for (std::size_t i = 0; i < mu.size(); ++i) {
    json row = json::array();
    for (std::size_t k = 0; k < mu.dim(); ++k) row.push_back(mu.coord(i, k));
    points.push_back(std::move(row));
  }
  j["points"] = std::move(points);
  j["weights"] = mu.weights();
  return j;
}

inline DiscreteMeasure measure_from_json(const json& j) {
  return detail::guarded("measure json", [&]() {
    const std::size_t dim = j.at("dim").get<std::size_t>();
    const json& points = j.at("points");
    if (!points.is_array() || points.empty())
      throw ValidationError("measure json: points must be a nonempty array");
    Matrix pts(points.size(), dim);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const json& row = points[i];
      if (!row.is_array() || row.size() != dim)
        throw ValidationError("measure json: point " + std::to_string(i) +
                              " does not have dim entries");
      for (std::size_t k = 0; k < dim; ++k) pts(i, k) = row[k].get<double>();
    }
    std::vector<double> weights = j.at("weights").get<std::vector<double>>();
    return make_measure(pts, std::move(weights));
  });
}

namespace detail {

inline std::string criterion_name(SplitRule rule) {
  return rule == SplitRule::intra_l2 ? "intra" : "inter";
}

inline SplitRule criterion_from_name(const std::string& name) {
  if (name == "intra") return SplitRule::intra_l2;
  if (name == "inter") return SplitRule::inter_wp;
  throw ValidationError("model json: unknown criterion '" + name + "'");
}

inline json matrix_rows_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows; ++i) {
    json row = json::array();
    for (std::size_t k = 0; k < m.cols; ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_rows_from_json(const json& rows, const std::string& what) {
  if (!rows.is_array() || rows.empty())
    throw ValidationError(what + ": expected a nonempty array of rows");
  const std::size_t cols = rows[0].is_array() ? rows[0].size() : 0;
  if (cols == 0) throw ValidationError(what + ": rows must be nonempty arrays");
  Matrix m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    if (!row.is_array() || row.size() != cols)
      throw ValidationError(what + ": row " + std::to_string(i) + " has " +
                            std::to_string(row.size()) + " entries, expected " +
                            std::to_string(cols));
    for (std::size_t k = 0; k < cols; ++k) {
      const double v = row[k].get<double>();
      if (!std::isfinite(v))
        throw ValidationError(what + ": non-finite value in row " + std::to_string(i));
      m(i, k) = v;
    }
  }
  return m;
}

}  // namespace detail

inline json params_to_json(const ForestParams& p) {
  json j;
  j["m_trees"] = p.m_trees;
  j["subsample_size"] = p.subsample_size;
  j["with_replacement"] = p.with_replacement;
  j["mtry"] = p.mtry;
  j["nodesize"] = p.nodesize;
  j["criterion"] = detail::criterion_name(p.criterion);
  j["p"] = p.p;
  j["seed"] = p.seed;
  j["standardize_response"] = p.standardize_response;
  return j;
}

inline ForestParams params_from_json(const json& j) {
  return detail::guarded("model json params", [&]() {
    ForestParams p;
    p.m_trees = j.at("m_trees").get<int>();
    p.subsample_size = j.at("subsample_size").get<int>();
    p.with_replacement = j.at("with_replacement").get<bool>();
    p.mtry = j.at("mtry").get<int>();
    p.nodesize = j.at("nodesize").get<int>();
    p.criterion = detail::criterion_from_name(j.at("criterion").get<std::string>());
    p.p = j.at("p").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.standardize_response = j.at("standardize_response").get<bool>();
    return p;
  });
}

inline json forest_to_json(const Forest& f) {
  json j;
  j["version"] = 1;
  j["method"] = f.method;
  j["dim_x"] = f.dim_x;
  j["params"] = params_to_json(f.params);
  if (f.normalization.empty())
    j["normalization"] = nullptr;
  else
    j["normalization"] = f.normalization;

  json trees = json::array();
  for (const Tree& tree : f.trees) {
    json tj;
    tj["subsample"] = tree.subsample;
    json nodes = json::array();
    for (const TreeNode& node : tree.nodes) {
      json nj;
      if (node.is_leaf()) {
        json slots = json::array();
        for (int i = 0; i < node.count; ++i)
          slots.push_back(tree.slots[static_cast<std::size_t>(node.first + i)]);
        nj["leaf"] = std::move(slots);
      } else {
        nj["dim"] = node.dim;
        nj["thr"] = node.threshold;
        nj["l"] = node.left;
        nj["r"] = node.right;
      }
      nodes.push_back(std::move(nj));
    }
    tj["nodes"] = std::move(nodes);
    trees.push_back(std::move(tj));
  }
  j["trees"] = std::move(trees);
  j["y"] = detail::matrix_rows_to_json(f.training_y);
  return j;
}

namespace detail {

// Rebuilds one tree from its JSON form. Leaf nodes carry their slot windows;
// interior offsets and counts are reconstructed bottom-up, then the slot
// array is reassembled top-down and checked to be a permutation.
inline Tree tree_from_json(const json& tj, int dim_x, std::size_t n_rows) {
  Tree tree;
  tree.subsample = tj.at("subsample").get<std::vector<int>>();
  if (tree.subsample.empty()) throw ValidationError("model json: empty subsample");
  for (int r : tree.subsample)
    if (r < 0 || static_cast<std::size_t>(r) >= n_rows)
      throw ValidationError("model json: subsample row out of range");
  const int an = static_cast<int>(tree.subsample.size());

  const json& nodes = tj.at("nodes");
  if (!nodes.is_array() || nodes.empty())
    throw ValidationError("model json: tree has no nodes");
  const std::size_t m = nodes.size();
  tree.nodes.resize(m);
  std::vector<std::vector<int>> leaf_slots(m);
  std::vector<int> refs(m, 0);

  for (std::size_t i = 0; i < m; ++i) {
    const json& nj = nodes[i];
    TreeNode& node = tree.nodes[i];
    if (nj.contains("leaf")) {
      leaf_slots[i] = nj.at("leaf").get<std::vector<int>>();
      if (leaf_slots[i].empty())
        throw ValidationError("model json: leaf with empty slot window");
      node.count = static_cast<int>(leaf_slots[i].size());
    } else {
      node.dim = nj.at("dim").get<int>();
      node.threshold = nj.at("thr").get<double>();
      node.left = nj.at("l").get<int>();
      node.right = nj.at("r").get<int>();
      if (node.dim < 0 || node.dim >= dim_x)
        throw ValidationError("model json: split dimension out of range");
      if (!std::isfinite(node.threshold))
        throw ValidationError("model json: non-finite threshold");
      if (node.left <= static_cast<int>(i) || node.right <= static_cast<int>(i) ||
          node.left >= static_cast<int>(m) || node.right >= static_cast<int>(m) ||
          node.left == node.right)
        throw ValidationError("model json: invalid child indices");
      ++refs[static_cast<std::size_t>(node.left)];
      ++refs[static_cast<std::size_t>(node.right)];
    }
  }
  for (std::size_t i = 1; i < m; ++i)
    if (refs[i] != 1)
      throw ValidationError("model json: node " + std::to_string(i) +
                            " referenced " + std::to_string(refs[i]) + " times");
  if (refs[0] != 0) throw ValidationError("model json: root referenced as a child");

  for (std::size_t i = m; i-- > 0;) {
    TreeNode& node = tree.nodes[i];
    if (!node.is_leaf())
      node.count = tree.nodes[static_cast<std::size_t>(node.left)].count +
                   tree.nodes[static_cast<std::size_t>(node.right)].count;
  }
  if (tree.nodes[0].count != an)
    throw ValidationError("model json: root count does not match the subsample size");

  tree.nodes[0].first = 0;
  tree.slots.assign(static_cast<std::size_t>(an), -1);
  for (std::size_t i = 0; i < m; ++i) {
    const TreeNode& node = tree.nodes[i];
    if (node.is_leaf()) {
      for (int k = 0; k < node.count; ++k) {
        const int slot = leaf_slots[i][static_cast<std::size_t>(k)];
        if (slot < 0 || slot >= an)
          throw ValidationError("model json: slot index out of range");
        if (tree.slots[static_cast<std::size_t>(node.first + k)] != -1)
          throw ValidationError("model json: overlapping leaf windows");
        tree.slots[static_cast<std::size_t>(node.first + k)] = slot;
      }
    } else {
      tree.nodes[static_cast<std::size_t>(node.left)].first = node.first;
      tree.nodes[static_cast<std::size_t>(node.right)].first =
          node.first + tree.nodes[static_cast<std::size_t>(node.left)].count;
    }
  }
  std::vector<char> seen(static_cast<std::size_t>(an), 0);
  for (int slot : tree.slots) {
    if (slot < 0 || seen[static_cast<std::size_t>(slot)])
      throw ValidationError("model json: leaf windows are not a partition");
    seen[static_cast<std::size_t>(slot)] = 1;
  }
  return tree;
}

}  // namespace detail

inline Forest forest_from_json(const json& j) {
  return detail::guarded("model json", [&]() {
    const int version = j.at("version").get<int>();
    if (version != 1)
      throw ValidationError("model json: unsupported version " +
                            std::to_string(version));
    Forest f;
    f.method = j.at("method").get<std::string>();
    f.dim_x = j.at("dim_x").get<int>();
    if (f.dim_x < 1) throw ValidationError("model json: dim_x must be >= 1");
    f.params = params_from_json(j.at("params"));
    f.training_y = detail::matrix_rows_from_json(j.at("y"), "model json y");

    const json& norm = j.at("normalization");
    if (!norm.is_null()) {
      f.normalization = norm.get<std::vector<double>>();
      if (f.normalization.size() != f.training_y.cols)
        throw ValidationError("model json: normalization length does not match y");
      for (double s : f.normalization)
        if (!std::isfinite(s) || s <= 0.0)
          throw ValidationError("model json: normalization scales must be positive");
    }

    const json& trees = j.at("trees");
    if (!trees.is_array() || trees.empty())
      throw ValidationError("model json: trees must be a nonempty array");
    if (static_cast<int>(trees.size()) != f.params.m_trees)
      throw ValidationError("model json: tree count does not match params.m_trees");
    f.trees.reserve(trees.size());
    for (const json& tj : trees)
      f.trees.push_back(detail::tree_from_json(tj, f.dim_x, f.training_y.rows));
    return f;
  });
}

inline json hte_to_json(const HTEModel& m) {
  json j;
  j["version"] = 1;
  j["forest0"] = forest_to_json(m.forest0);
  j["forest1"] = forest_to_json(m.forest1);
  j["group0"] = m.group0;
  j["group1"] = m.group1;
  j["x"] = detail::matrix_rows_to_json(m.x);
  return j;
}

inline HTEModel hte_from_json(const json& j) {
  return detail::guarded("hte json", [&]() {
    const int version = j.at("version").get<int>();
    if (version != 1)
      throw ValidationError("hte json: unsupported version " + std::to_string(version));
    HTEModel m;
    m.forest0 = forest_from_json(j.at("forest0"));
    m.forest1 = forest_from_json(j.at("forest1"));
    m.group0 = j.at("group0").get<std::vector<int>>();
    m.group1 = j.at("group1").get<std::vector<int>>();
    m.x = detail::matrix_rows_from_json(j.at("x"), "hte json x");

    if (m.forest0.dim_x != static_cast<int>(m.x.cols) ||
        m.forest1.dim_x != static_cast<int>(m.x.cols))
      throw ValidationError("hte json: forest dim_x does not match x");
    if (m.group0.size() != m.forest0.training_y.rows ||
        m.group1.size() != m.forest1.training_y.rows)
      throw ValidationError("hte json: group sizes do not match the stored responses");
    std::vector<char> seen(m.x.rows, 0);
    for (const auto* group : {&m.group0, &m.group1})
      for (int r : *group) {
        if (r < 0 || static_cast<std::size_t>(r) >= m.x.rows)
          throw ValidationError("hte json: group row out of range");
        if (seen[static_cast<std::size_t>(r)])
          throw ValidationError("hte json: groups overlap");
        seen[static_cast<std::size_t>(r)] = 1;
      }
    if (m.group0.size() + m.group1.size() != m.x.rows)
      throw ValidationError("hte json: groups do not cover the training rows");
    return m;
  });
}

inline json parse_json_text(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ValidationError(what + ": invalid JSON");
  return j;
}

// Dataset CSV: header x1..xd,y1[,y2],t, then one row per sample with
// round-trippable decimals. Line numbers in diagnostics count the header.
struct LabeledData {
  Matrix x;
  Matrix y;
  std::vector<int> t;
};

inline std::string dataset_to_csv(const Matrix& x, const Matrix& y,
                                  const std::vector<int>& t) {
  if (x.rows != y.rows || x.rows != t.size())
    throw ValidationError("csv: x, y, and t row counts differ");
  std::string out;
  for (std::size_t k = 0; k < x.cols; ++k)
    out += "x" + std::to_string(k + 1) + ",";
  for (std::size_t k = 0; k < y.cols; ++k)
    out += "y" + std::to_string(k + 1) + ",";
  out += "t\n";
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t k = 0; k < x.cols; ++k) {
      out += detail::format_double(x(i, k));
      out += ',';
    }
    for (std::size_t k = 0; k < y.cols; ++k) {
      out += detail::format_double(y(i, k));
      out += ',';
    }
    out += t[i] ? "1\n" : "0\n";
  }
  return out;
}

inline LabeledData dataset_from_csv(const std::string& text) {
  const std::vector<std::string> lines = detail::read_lines(text);
  if (lines.empty()) throw ValidationError("csv: empty file");

  const std::vector<std::string> header = detail::split_csv_line(lines[0]);
  std::size_t pos = 0;
  std::size_t dx = 0;
  while (pos < header.size() && header[pos] == "x" + std::to_string(dx + 1)) {
    ++dx;
    ++pos;
  }
  std::size_t dy = 0;
  while (pos < header.size() && header[pos] == "y" + std::to_string(dy + 1)) {
    ++dy;
    ++pos;
  }
  if (dx == 0 || dy == 0 || pos + 1 != header.size() || header[pos] != "t")
    throw ValidationError("csv line 1: header must be x1..xd,y1[,y2],t");

  const std::size_t width = dx + dy + 1;
  if (lines.size() < 2) throw ValidationError("csv: no data rows");

  LabeledData data;
  data.x = Matrix(lines.size() - 1, dx);
  data.y = Matrix(lines.size() - 1, dy);
  data.t.resize(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (lines[i].empty())
      throw ValidationError("csv line " + std::to_string(line_no) + ": empty line");
    const std::vector<std::string> fields = detail::split_csv_line(lines[i]);
    if (fields.size() != width)
      throw ValidationError("csv line " + std::to_string(line_no) + ": expected " +
                            std::to_string(width) + " fields, got " +
                            std::to_string(fields.size()));
    for (std::size_t k = 0; k < dx; ++k)
      data.x(i - 1, k) = detail::parse_double(fields[k], line_no);
    for (std::size_t k = 0; k < dy; ++k)
      data.y(i - 1, k) = detail::parse_double(fields[dx + k], line_no);
    const std::string& flag = fields[width - 1];
    if (flag == "0")
      data.t[i - 1] = 0;
    else if (flag == "1")
      data.t[i - 1] = 1;
    else
      throw ValidationError("csv line " + std::to_string(line_no) +
                            ": treatment flag must be 0 or 1, got '" + flag + "'");
  }
  return data;
}

// Headerless CSV of numbers with a consistent column count, used for query
// batches.
inline Matrix matrix_from_csv(const std::string& text) {
  const std::vector<std::string> lines = detail::read_lines(text);
  if (lines.empty()) throw ValidationError("csv: empty file");
  const std::size_t cols = detail::split_csv_line(lines[0]).size();
  Matrix m(lines.size(), cols);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (lines[i].empty())
      throw ValidationError("csv line " + std::to_string(line_no) + ": empty line");
    const std::vector<std::string> fields = detail::split_csv_line(lines[i]);
    if (fields.size() != cols)
      throw ValidationError("csv line " + std::to_string(line_no) + ": expected " +
                            std::to_string(cols) + " fields, got " +
                            std::to_string(fields.size()));
    for (std::size_t k = 0; k < cols; ++k)
      m(i, k) = detail::parse_double(fields[k], line_no);
  }
  return m;
}

namespace detail {

inline json bench_cell_to_json(const BenchCell& cell) {
  json j;
  j["method"] = cell.method;
  j["t"] = cell.t;
  j["p"] = cell.p;
  j["metric"] = cell.metric;
  j["mean"] = cell.mean;
  j["stderr"] = cell.stderr_;
  j["n_test"] = cell.n_test;
  j["m_ref"] = cell.m_ref;
  j["runtime_s"] = cell.runtime_s;
  j["error"] = cell.error;
  return j;
}

inline void bench_cell_to_csv(std::string& out, const std::string& axis,
                              const std::string& value, const BenchCell& cell) {
  out += csv_escape(axis);
  out += ',';
  out += value;
  out += ',';
  out += csv_escape(cell.method);
  out += ',';
  out += std::to_string(cell.t);
  out += ',';
  out += format_double(cell.p);
  out += ',';
  out += cell.metric;
  out += ',';
  out += format_double(cell.mean);
  out += ',';
  out += format_double(cell.stderr_);
  out += ',';
  out += std::to_string(cell.n_test);
  out += ',';
  out += std::to_string(cell.m_ref);
  out += ',';
  out += format_double(cell.runtime_s);
  out += ',';
  out += csv_escape(cell.error);
  out += '\n';
}

}  // namespace detail

inline json bench_report_to_json(const BenchReport& report) {
  json j;
  j["scenario"] = report.scenario;
  j["train_seed"] = report.train_seed;
  json cells = json::array();
  for (const BenchCell& cell : report.cells)
    cells.push_back(detail::bench_cell_to_json(cell));
  j["cells"] = std::move(cells);
  json sweeps = json::array();
  for (const SweepRow& row : report.sweeps) {
    json rj;
    rj["axis"] = row.axis;
    rj["value"] = row.value;
    const json cj = detail::bench_cell_to_json(row.cell);
    for (const auto& [key, value] : cj.items()) rj[key] = value;
    sweeps.push_back(std::move(rj));
  }
  j["sweeps"] = std::move(sweeps);
  return j;
}

inline std::string bench_report_to_csv(const BenchReport& report) {
  std::string out =
      "axis,value,method,t,p,metric,mean,stderr,n_test,m_ref,runtime_s,error\n";
  for (const BenchCell& cell : report.cells)
    detail::bench_cell_to_csv(out, "", "", cell);
  for (const SweepRow& row : report.sweeps)
    detail::bench_cell_to_csv(out, row.axis, std::to_string(row.value), row.cell);
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw ValidationError("cannot read '" + path + "'");
  return buf.str();
}

// Writes via a sibling temp file and renames it into place, so readers never
// observe a half-written file.
inline void write_text_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open '" + tmp + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw ValidationError("cannot write '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw ValidationError("cannot move '" + tmp + "' to '" + path + "'");
  }
}

}  // namespace wrf
