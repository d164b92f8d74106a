#include "clustertab/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "clustertab/errors.hpp"
#include "clustertab/parallel.hpp"

namespace clustertab {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

struct Element {
  std::string label;
  Box box;
};

ConvertResult fail(std::string type, std::string message) {
  ConvertResult r;
  r.error_type = std::move(type);
  r.error_message = std::move(message);
  return r;
}

// In strict mode the first warning fails the record.
void apply_strict(ConvertResult& r, const ConvertOptions& options) {
  if (!options.strict || r.warnings.empty() || !r.error_type.empty()) return;
  const auto& first = *r.warnings.begin();
  r.error_type = "strict:" + first.first;
  r.error_message = "warning '" + first.first + "' raised in strict mode";
  r.page.reset();
}

Box clamp_box(const Box& b, double w, double h, ConvertResult& r) {
  Box c = b.clamped(w, h);
  if (!(c == b)) ++r.warnings["clamped_box"];
  return c;
}

int best_table(const Box& b, const std::vector<TableAnnotation>& tables) {
  int best = -1;
  double best_area = 0;
  for (std::size_t t = 0; t < tables.size(); ++t) {
    double a = intersection_area(b, tables[t].box);
    if (a > best_area) {
      best = static_cast<int>(t);
      best_area = a;
    }
  }
  return best;
}

double overlap_1d(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

std::vector<int> covered_rows(const Box& span, const std::vector<Box>& rows) {
  std::vector<int> out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double h = rows[r].height();
    if (overlap_1d(span.x0, span.x1, rows[r].x0, rows[r].x1) <= 0) continue;
    if (h > 0 && overlap_1d(span.y0, span.y1, rows[r].y0, rows[r].y1) >= 0.5 * h) out.push_back(static_cast<int>(r));
  }
  return out;
}

std::vector<int> covered_columns(const Box& span, const std::vector<Box>& cols) {
  std::vector<int> out;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const double w = cols[c].width();
    if (overlap_1d(span.y0, span.y1, cols[c].y0, cols[c].y1) <= 0) continue;
    if (w > 0 && overlap_1d(span.x0, span.x1, cols[c].x0, cols[c].x1) >= 0.5 * w) out.push_back(static_cast<int>(c));
  }
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string safe_stem(std::string s) {
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes results in input order and folds them into the summary.
ConvertSummary finish(std::string format, const std::vector<ConvertResult>& results,
                      const std::vector<std::string>& records, const fs::path& output) {
  ConvertSummary summary;
  summary.format = std::move(format);
  std::error_code ec;
  fs::create_directories(output, ec);
  if (ec) throw IoError(output.string() + ": " + ec.message());
  std::set<std::string> used;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (r.page) {
      std::string stem = r.name.empty() ? "record_" + std::to_string(i) : r.name;
      std::string unique = stem;
      for (int k = 1; used.count(unique); ++k) unique = stem + "_" + std::to_string(k);
      used.insert(unique);
      save_annotated_page(*r.page, output / (unique + ".json"));
    }
    summary.add(r, records[i]);
  }
  write_json_file(to_json(summary), output / "summary.json");
  return summary;
}

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::set<std::string>& exts) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == "summary.json" || name == "manifest.json") continue;
    if (name.size() > 11 && name.substr(name.size() - 11) == "_words.json") continue;
    if (exts.count(e.path().extension().string())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// HTML structure parsing.

struct GridCell {
  int row = 0, col = 0, rowspan = 1, colspan = 1;
  bool header = false;
};

int span_attr(const std::string& token, const std::string& name) {
  const auto pos = token.find(name);
  if (pos == std::string::npos) return 1;
  std::size_t i = pos + name.size();
  while (i < token.size() && !std::isdigit(static_cast<unsigned char>(token[i]))) ++i;
  int v = 0;
  while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) v = v * 10 + (token[i++] - '0');
  return v > 0 ? v : 1;
}

// Returns the grid cells in <td> order, or throws InvalidAnnotation for an inconsistent grid.
std::vector<GridCell> parse_structure(const std::vector<std::string>& tokens, int& num_rows) {
  std::vector<GridCell> cells;
  std::vector<std::vector<char>> occupied;
  bool in_head = false;
  int row = -1;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const std::string tok = lower(trim(tokens[k]));
    if (tok == "<thead>") in_head = true;
    else if (tok == "</thead>") in_head = false;
    else if (tok == "<tr>" || tok.rfind("<tr ", 0) == 0) {
      ++row;
      if (static_cast<int>(occupied.size()) <= row) occupied.resize(static_cast<std::size_t>(row) + 1);
    } else if (tok.rfind("<td", 0) == 0 || tok.rfind("<th", 0) == 0) {
      if (row < 0) throw InvalidAnnotation("cell outside any <tr>");
      std::string attrs = tok;
      // Attributes may arrive as separate tokens up to a closing ">".
      while (attrs.find('>') == std::string::npos && k + 1 < tokens.size()) attrs += " " + lower(trim(tokens[++k]));
      GridCell c;
      c.rowspan = span_attr(attrs, "rowspan");
      c.colspan = span_attr(attrs, "colspan");
      c.header = in_head;
      c.row = row;
      auto& occ = occupied[static_cast<std::size_t>(row)];
      int col = 0;
      while (col < static_cast<int>(occ.size()) && occ[static_cast<std::size_t>(col)]) ++col;
      c.col = col;
      for (int r = row; r < row + c.rowspan; ++r) {
        if (static_cast<int>(occupied.size()) <= r) occupied.resize(static_cast<std::size_t>(r) + 1);
        auto& o = occupied[static_cast<std::size_t>(r)];
        if (static_cast<int>(o.size()) < col + c.colspan) o.resize(static_cast<std::size_t>(col + c.colspan), 0);
        for (int cc = col; cc < col + c.colspan; ++cc) {
          if (o[static_cast<std::size_t>(cc)])
            throw InvalidAnnotation("overlapping spans at row " + std::to_string(r) + ", column " + std::to_string(cc));
          o[static_cast<std::size_t>(cc)] = 1;
        }
      }
      cells.push_back(c);
    }
  }
  num_rows = row + 1;
  for (const auto& c : cells)
    if (c.row + c.rowspan > num_rows)
      throw InvalidAnnotation("rowspan of the cell at row " + std::to_string(c.row) + " runs past the last row");
  return cells;
}

std::string cell_text(const nlohmann::json& cell) {
  std::string text;
  if (!cell.contains("tokens")) return text;
  for (const auto& t : cell["tokens"]) {
    if (!t.is_string()) continue;
    const std::string s = t.get<std::string>();
    if (!s.empty() && s.front() == '<' && s.back() == '>') continue;  // inline markup
    text += s;
  }
  return trim(text);
}

std::optional<Box> json_bbox(const nlohmann::json& j) {
  const char* keys[] = {"bbox", "box"};
  for (const char* k : keys)
    if (j.contains(k) && j[k].is_array() && j[k].size() == 4) {
      for (const auto& v : j[k])
        if (!v.is_number()) return std::nullopt;
      double x0 = j[k][0].get<double>(), y0 = j[k][1].get<double>(), x1 = j[k][2].get<double>(),
             y1 = j[k][3].get<double>();
      if (x1 < x0) std::swap(x0, x1);
      if (y1 < y0) std::swap(y0, y1);
      return Box{x0, y0, x1, y1};
    }
  return std::nullopt;
}

}  // namespace

void ConvertSummary::add(const ConvertResult& r, const std::string& record) {
  ++input_records;
  for (const auto& [k, v] : r.warnings) warnings[k] += v;
  if (r.error_type.empty() && r.page) {
    ++emitted;
  } else {
    ++skipped;
    ++errors[r.error_type.empty() ? "unknown" : r.error_type];
    failures.emplace_back(record, r.error_message);
  }
}

nlohmann::json to_json(const ConvertSummary& s) {
  auto failures = nlohmann::json::array();
  for (const auto& [rec, msg] : s.failures) failures.push_back({{"record", rec}, {"error", msg}});
  return {{"format", s.format},     {"input_records", s.input_records}, {"emitted", s.emitted},
          {"skipped", s.skipped},   {"errors", s.errors},               {"warnings", s.warnings},
          {"failures", failures}};
}

std::vector<Word> words_from_json(const nlohmann::json& j) {
  const nlohmann::json* list = &j;
  if (j.is_object() && j.contains("words")) list = &j["words"];
  if (!list->is_array()) throw InvalidInput("word list must be an array");
  std::vector<Word> out;
  for (const auto& w : *list) {
    auto box = json_bbox(w);
    if (!box) throw InvalidInput("word without a 4-number bbox");
    out.push_back({w.value("text", std::string{}), *box});
  }
  return out;
}

ConvertResult convert_voc_document(const std::string& xml, const std::vector<Word>& words,
                                   const ConvertOptions& options) {
  pt::ptree tree;
  try {
    std::istringstream in(xml);
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    return fail("malformed_xml", e.what());
  }
  ConvertResult r;
  AnnotatedPage ap;
  std::vector<Element> elements;
  try {
    const auto& root = tree.get_child("annotation");
    ap.page.width = root.get<double>("size.width");
    ap.page.height = root.get<double>("size.height");
    if (!(ap.page.width > 0) || !(ap.page.height > 0)) return fail("bad_size", "page size must be positive");
    for (const auto& [key, node] : root) {
      if (key != "object") continue;
      Element e;
      e.label = lower(trim(node.get<std::string>("name")));
      double x0 = node.get<double>("bndbox.xmin"), y0 = node.get<double>("bndbox.ymin");
      double x1 = node.get<double>("bndbox.xmax"), y1 = node.get<double>("bndbox.ymax");
      if (x1 < x0 || y1 < y0) {
        ++r.warnings["inverted_box"];
        if (x1 < x0) std::swap(x0, x1);
        if (y1 < y0) std::swap(y0, y1);
      }
      e.box = clamp_box(Box{x0, y0, x1, y1}, ap.page.width, ap.page.height, r);
      elements.push_back(e);
    }
  } catch (const pt::ptree_error& e) {
    return fail("malformed_xml", e.what());
  }

  for (const auto& w : words) {
    if (trim(w.text).empty()) {
      ++r.warnings["empty_word"];
      continue;
    }
    ap.page.words.push_back({w.text, clamp_box(w.box, ap.page.width, ap.page.height, r)});
  }

  for (const auto& e : elements)
    if (e.label == "table" || e.label == "table rotated") ap.annotation.tables.push_back({e.box, {}, {}, {}, {}});
  std::vector<std::vector<Box>> spans(ap.annotation.tables.size());
  for (const auto& e : elements) {
    if (e.label == "table" || e.label == "table rotated") continue;
    const bool known = e.label == "table row" || e.label == "table column" || e.label == "table column header" ||
                       e.label == "table spanning cell";
    if (!known) {
      ++r.warnings["unmapped_label:" + e.label];
      continue;
    }
    const int t = best_table(e.box, ap.annotation.tables);
    if (t < 0) {
      ++r.warnings["orphan_element"];
      continue;
    }
    auto& table = ap.annotation.tables[static_cast<std::size_t>(t)];
    if (e.label == "table row") table.rows.push_back(e.box);
    else if (e.label == "table column") table.columns.push_back(e.box);
    else if (e.label == "table column header") table.headers.push_back(e.box);
    else spans[static_cast<std::size_t>(t)].push_back(e.box);
  }
  for (std::size_t t = 0; t < ap.annotation.tables.size(); ++t) {
    auto& table = ap.annotation.tables[t];
    std::stable_sort(table.rows.begin(), table.rows.end(), [](const Box& a, const Box& b) { return a.y0 < b.y0; });
    std::stable_sort(table.columns.begin(), table.columns.end(),
                     [](const Box& a, const Box& b) { return a.x0 < b.x0; });
    for (const Box& s : spans[t]) {
      SpanningCell cell{s, covered_rows(s, table.rows), covered_columns(s, table.columns)};
      if (cell.row_indices.empty() || cell.column_indices.empty()) {
        ++r.warnings["span_without_grid"];
        continue;
      }
      table.spanning_cells.push_back(std::move(cell));
    }
  }
  if (options.dataset == "fintabnet") ap.annotation.mask_classes.push_back(ClassId::Header);
  r.page = std::move(ap);
  apply_strict(r, options);
  return r;
}

ConvertResult convert_html_record(const nlohmann::json& record, const ConvertOptions& options) {
  ConvertResult r;
  if (!record.is_object()) return fail("malformed_record", "record is not a JSON object");
  std::string name = record.value("filename", std::string{});
  if (!name.empty()) name = fs::path(name).stem().string();
  if (record.contains("table_id")) name += "_" + record["table_id"].dump();
  r.name = safe_stem(name);

  const nlohmann::json* html = record.contains("html") ? &record["html"] : nullptr;
  if (!html || !html->contains("structure") || !(*html)["structure"].contains("tokens") || !html->contains("cells"))
    return fail("malformed_record", "record lacks html.structure.tokens or html.cells");
  std::vector<std::string> tokens;
  for (const auto& t : (*html)["structure"]["tokens"])
    if (t.is_string()) tokens.push_back(t.get<std::string>());
  const auto& cells_json = (*html)["cells"];

  std::vector<GridCell> grid;
  int num_rows = 0;
  try {
    grid = parse_structure(tokens, num_rows);
  } catch (const InvalidAnnotation& e) {
    auto f = fail("inconsistent_grid", e.what());
    f.name = r.name;
    return f;
  }
  if (grid.size() != cells_json.size()) {
    auto f = fail("inconsistent_grid", "structure has " + std::to_string(grid.size()) + " cells but " +
                                           std::to_string(cells_json.size()) + " cell entries are given");
    f.name = r.name;
    return f;
  }
  if (grid.empty()) return fail("empty_table", "table has no cells");

  std::vector<std::optional<Box>> boxes;
  for (const auto& c : cells_json) boxes.push_back(json_bbox(c));

  AnnotatedPage ap;
  std::vector<Box> present;
  for (const auto& b : boxes)
    if (b) present.push_back(*b);
  if (present.empty()) return fail("empty_table", "no cell carries a bounding box");
  Box table_box = hull(present);
  if (auto tb = json_bbox(record); tb) table_box = *tb;
  ap.page.width = record.value("width", std::max(table_box.x1, hull(present).x1));
  ap.page.height = record.value("height", std::max(table_box.y1, hull(present).y1));
  if (!(ap.page.width > 0) || !(ap.page.height > 0)) return fail("bad_size", "page size must be positive");

  int num_cols = 0;
  for (const auto& g : grid) num_cols = std::max(num_cols, g.col + g.colspan);

  // Full-width rows and full-height columns from the single-span cells they hold.
  std::vector<std::optional<std::pair<double, double>>> row_y(num_rows), col_x(num_cols);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!boxes[k]) continue;
    const auto& g = grid[k];
    const Box& b = *boxes[k];
    if (g.rowspan == 1) {
      auto& ry = row_y[static_cast<std::size_t>(g.row)];
      ry = ry ? std::make_pair(std::min(ry->first, b.y0), std::max(ry->second, b.y1)) : std::make_pair(b.y0, b.y1);
    }
    if (g.colspan == 1) {
      auto& cx = col_x[static_cast<std::size_t>(g.col)];
      cx = cx ? std::make_pair(std::min(cx->first, b.x0), std::max(cx->second, b.x1)) : std::make_pair(b.x0, b.x1);
    }
  }
  std::vector<int> row_index(num_rows, -1), col_index(num_cols, -1);
  TableAnnotation table;
  table.box = table_box.clamped(ap.page.width, ap.page.height);
  for (int rr = 0; rr < num_rows; ++rr) {
    if (!row_y[rr]) {
      ++r.warnings["empty_row"];
      continue;
    }
    row_index[rr] = static_cast<int>(table.rows.size());
    table.rows.push_back(Box{table.box.x0, row_y[rr]->first, table.box.x1, row_y[rr]->second});
  }
  for (int cc = 0; cc < num_cols; ++cc) {
    if (!col_x[cc]) {
      ++r.warnings["empty_column"];
      continue;
    }
    col_index[cc] = static_cast<int>(table.columns.size());
    table.columns.push_back(Box{col_x[cc]->first, table.box.y0, col_x[cc]->second, table.box.y1});
  }

  std::optional<std::pair<double, double>> head_y;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!grid[k].header || !boxes[k]) continue;
    const Box& b = *boxes[k];
    head_y = head_y ? std::make_pair(std::min(head_y->first, b.y0), std::max(head_y->second, b.y1))
                    : std::make_pair(b.y0, b.y1);
  }
  if (head_y) table.headers.push_back(Box{table.box.x0, head_y->first, table.box.x1, head_y->second});

  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto& g = grid[k];
    if (g.rowspan == 1 && g.colspan == 1) continue;
    if (!boxes[k]) {
      ++r.warnings["span_without_bbox"];
      continue;
    }
    SpanningCell s;
    s.box = *boxes[k];
    for (int rr = g.row; rr < g.row + g.rowspan; ++rr)
      if (row_index[rr] >= 0) s.row_indices.push_back(row_index[rr]);
    for (int cc = g.col; cc < g.col + g.colspan; ++cc)
      if (col_index[cc] >= 0) s.column_indices.push_back(col_index[cc]);
    if (s.row_indices.empty() || s.column_indices.empty()) {
      ++r.warnings["span_without_grid"];
      continue;
    }
    table.spanning_cells.push_back(std::move(s));
  }

  if (record.contains("words")) {
    try {
      for (auto& w : words_from_json(record["words"])) {
        if (trim(w.text).empty()) {
          ++r.warnings["empty_word"];
          continue;
        }
        ap.page.words.push_back({w.text, clamp_box(w.box, ap.page.width, ap.page.height, r)});
      }
    } catch (const InvalidInput& e) {
      auto f = fail("malformed_record", e.what());
      f.name = r.name;
      return f;
    }
  } else {
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (!boxes[k]) continue;
      std::string text = cell_text(cells_json[k]);
      if (text.empty()) {
        ++r.warnings["empty_word"];
        continue;
      }
      ap.page.words.push_back({text, clamp_box(*boxes[k], ap.page.width, ap.page.height, r)});
    }
  }
  ap.annotation.tables.push_back(std::move(table));

  std::string dataset = lower(record.value("dataset", options.dataset));
  if (options.dataset == "fintabnet" || dataset == "fintabnet") ap.annotation.mask_classes.push_back(ClassId::Header);
  r.page = std::move(ap);
  apply_strict(r, options);
  return r;
}

ConvertSummary convert_pascal_voc(const fs::path& input, const fs::path& output, const ConvertOptions& options) {
  const auto files = files_with_extension(input, {".xml"});
  std::vector<ConvertResult> results(files.size());
  std::vector<std::string> records(files.size());
  parallel_for(files.size(), options.jobs, [&](std::size_t i) {
    const fs::path& xml_path = files[i];
    const std::string stem = xml_path.stem().string();
    records[i] = xml_path.filename().string();
    ConvertResult r;
    fs::path words_path = input / (stem + "_words.json");
    if (!fs::exists(words_path)) words_path = input / "words" / (stem + "_words.json");
    try {
      if (!fs::exists(words_path)) {
        r = fail("missing_words", "no word file " + stem + "_words.json");
      } else {
        std::vector<Word> words;
        try {
          words = words_from_json(read_json_file(words_path));
        } catch (const Error& e) {
          r = fail("malformed_words", words_path.string() + ": " + e.what());
        }
        if (r.error_type.empty()) r = convert_voc_document(read_text(xml_path), words, options);
      }
    } catch (const IoError& e) {
      r = fail("io_error", e.what());
    }
    r.name = safe_stem(stem);
    results[i] = std::move(r);
  });
  return finish("pascal-voc", results, records, output);
}

ConvertSummary convert_html_cells(const fs::path& input, const fs::path& output, const ConvertOptions& options) {
  const auto files = files_with_extension(input, {".jsonl", ".json"});
  std::vector<nlohmann::json> items;
  std::vector<std::string> records;
  std::vector<ConvertResult> pre;  // parse failures, indexed like items
  for (const auto& f : files) {
    const std::string text = read_text(f);
    const std::string fname = f.filename().string();
    auto push_parse_error = [&](const std::string& rec, const std::string& msg) {
      items.push_back(nullptr);
      records.push_back(rec);
      pre.push_back(fail("malformed_json", msg));
    };
    if (f.extension() == ".jsonl") {
      std::istringstream in(text);
      std::string line;
      int line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string rec = fname + ":" + std::to_string(line_no);
        try {
          items.push_back(nlohmann::json::parse(line));
          records.push_back(rec);
          pre.emplace_back();
        } catch (const nlohmann::json::parse_error& e) {
          push_parse_error(rec, e.what());
        }
      }
    } else {
      try {
        auto j = nlohmann::json::parse(text);
        if (j.is_array()) {
          for (std::size_t k = 0; k < j.size(); ++k) {
            items.push_back(j[k]);
            records.push_back(fname + "[" + std::to_string(k) + "]");
            pre.emplace_back();
          }
        } else {
          items.push_back(std::move(j));
          records.push_back(fname);
          pre.emplace_back();
        }
      } catch (const nlohmann::json::parse_error& e) {
        push_parse_error(fname, e.what());
      }
    }
  }
  std::vector<ConvertResult> results(items.size());
  parallel_for(items.size(), options.jobs, [&](std::size_t i) {
    if (!pre[i].error_type.empty()) {
      results[i] = pre[i];
      return;
    }
    results[i] = convert_html_record(items[i], options);
    if (results[i].name.empty()) results[i].name = safe_stem(records[i]);
  });
  return finish("html-cells", results, records, output);
}

}  // namespace clustertab
