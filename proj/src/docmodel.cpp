#include "clustertab/docmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "clustertab/errors.hpp"

namespace clustertab {

namespace {

constexpr double kMembershipFraction = 0.5;

std::string box_str(double x0, double y0, double x1, double y1) {
  std::ostringstream os;
  os << "[" << x0 << "," << y0 << "," << x1 << "," << y1 << "]";
  return os.str();
}

}  // namespace

Box Box::make(double x0, double y0, double x1, double y1) {
  Box b{x0, y0, x1, y1};
  if (!b.valid()) throw InvalidInput("invalid box " + box_str(x0, y0, x1, y1));
  return b;
}

bool Box::valid() const {
  return std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1) &&
         x0 <= x1 && y0 <= y1;
}

Box Box::clamped(double width, double height) const {
  Box b{std::clamp(x0, 0.0, width), std::clamp(y0, 0.0, height), std::clamp(x1, 0.0, width),
        std::clamp(y1, 0.0, height)};
  return b;
}

Box Box::united(const Box& o) const {
  return Box{std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
}

double intersection_area(const Box& a, const Box& b) {
  double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (w <= 0 || h <= 0) return 0.0;
  return w * h;
}

double iou(const Box& a, const Box& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  if (uni <= 0) return a == b ? 1.0 : 0.0;
  return inter / uni;
}

Box hull(const std::vector<Box>& boxes) {
  if (boxes.empty()) throw InvalidInput("hull of an empty box set");
  Box h = boxes.front();
  for (const auto& b : boxes) h = h.united(b);
  return h;
}

std::string_view to_string(ClassId c) {
  switch (c) {
    case ClassId::Table: return "table";
    case ClassId::Cell: return "cell";
    case ClassId::Row: return "row";
    case ClassId::Column: return "column";
    case ClassId::Header: return "header";
  }
  return "?";
}

ClassId class_from_string(std::string_view name) {
  for (ClassId c : kAllClasses)
    if (to_string(c) == name) return c;
  throw InvalidInput("unknown class name '" + std::string(name) + "'");
}

bool PageAnnotation::is_masked(ClassId c) const {
  return std::find(mask_classes.begin(), mask_classes.end(), c) != mask_classes.end();
}

double membership_score(const Box& word, const Box& region) {
  double area = word.area();
  if (area <= 0) return region.contains_point(word.cx(), word.cy()) ? 1.0 : -1.0;
  double frac = intersection_area(word, region) / area;
  return frac >= kMembershipFraction ? frac : -1.0;
}

std::vector<std::vector<int>> assign_words_to_boxes(const std::vector<Word>& words,
                                                    const std::vector<Box>& regions) {
  std::vector<std::vector<int>> out(regions.size());
  for (std::size_t r = 0; r < regions.size(); ++r)
    for (std::size_t w = 0; w < words.size(); ++w)
      if (membership_score(words[w].box, regions[r]) >= 0) out[r].push_back(static_cast<int>(w));
  return out;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const Box& b) { return nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); }

Box box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidInput("box must be an array of 4 numbers");
  for (const auto& v : j)
    if (!v.is_number()) throw InvalidInput("box must be an array of 4 numbers");
  return Box::make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

namespace {

nlohmann::json boxes_json(const std::vector<Box>& boxes) {
  auto arr = nlohmann::json::array();
  for (const auto& b : boxes) arr.push_back({{"box", to_json(b)}});
  return arr;
}

std::vector<Box> boxes_from(const nlohmann::json& j, const char* key, double w, double h) {
  std::vector<Box> out;
  if (!j.contains(key)) return out;
  for (const auto& item : j.at(key)) out.push_back(box_from_json(item.at("box")).clamped(w, h));
  return out;
}

std::vector<int> sorted_indices(const nlohmann::json& j) {
  std::vector<int> v = j.get<std::vector<int>>();
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

nlohmann::json to_json(const AnnotatedPage& ap) {
  nlohmann::json j;
  j["page"] = {{"width", ap.page.width}, {"height", ap.page.height}};
  auto words = nlohmann::json::array();
  for (const auto& w : ap.page.words) words.push_back({{"text", w.text}, {"box", to_json(w.box)}});
  j["words"] = std::move(words);
  auto tables = nlohmann::json::array();
  for (const auto& t : ap.annotation.tables) {
    nlohmann::json tj;
    tj["box"] = to_json(t.box);
    tj["rows"] = boxes_json(t.rows);
    tj["columns"] = boxes_json(t.columns);
    tj["headers"] = boxes_json(t.headers);
    auto spans = nlohmann::json::array();
    for (const auto& s : t.spanning_cells)
      spans.push_back(
          {{"box", to_json(s.box)}, {"row_indices", s.row_indices}, {"col_indices", s.column_indices}});
    tj["spanning_cells"] = std::move(spans);
    tables.push_back(std::move(tj));
  }
  j["tables"] = std::move(tables);
  auto masks = nlohmann::json::array();
  for (ClassId c : ap.annotation.mask_classes) masks.push_back(std::string(to_string(c)));
  j["mask_classes"] = std::move(masks);
  return j;
}

AnnotatedPage annotated_page_from_json(const nlohmann::json& j) {
  AnnotatedPage ap;
  try {
    const auto& pj = j.at("page");
    ap.page.width = pj.at("width").get<double>();
    ap.page.height = pj.at("height").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("missing page dimensions: ") + e.what());
  }
  const double w = ap.page.width;
  const double h = ap.page.height;
  if (!(std::isfinite(w) && std::isfinite(h) && w > 0 && h > 0))
    throw InvalidInput("page width and height must be positive");

  try {
    if (j.contains("words")) {
      for (const auto& wj : j.at("words")) {
        std::string text = wj.at("text").get<std::string>();
        if (text.empty()) continue;
        ap.page.words.push_back({std::move(text), box_from_json(wj.at("box")).clamped(w, h)});
      }
    }
    if (j.contains("tables")) {
      for (const auto& tj : j.at("tables")) {
        TableAnnotation t;
        t.box = box_from_json(tj.at("box")).clamped(w, h);
        t.rows = boxes_from(tj, "rows", w, h);
        t.columns = boxes_from(tj, "columns", w, h);
        t.headers = boxes_from(tj, "headers", w, h);
        if (tj.contains("spanning_cells")) {
          for (const auto& sj : tj.at("spanning_cells")) {
            SpanningCell s;
            s.box = box_from_json(sj.at("box")).clamped(w, h);
            s.row_indices = sorted_indices(sj.at("row_indices"));
            s.column_indices = sorted_indices(sj.at("col_indices"));
            t.spanning_cells.push_back(std::move(s));
          }
        }
        ap.annotation.tables.push_back(std::move(t));
      }
    }
    if (j.contains("mask_classes"))
      for (const auto& m : j.at("mask_classes"))
        ap.annotation.mask_classes.push_back(class_from_string(m.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed unified annotation: ") + e.what());
  }
  return ap;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const std::filesystem::path& path, int indent) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(indent) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

AnnotatedPage load_annotated_page(const std::filesystem::path& path) {
  try {
    return annotated_page_from_json(read_json_file(path));
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

void save_annotated_page(const AnnotatedPage& page, const std::filesystem::path& path) {
  write_json_file(to_json(page), path);
}

std::vector<std::filesystem::path> list_page_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    auto name = e.path().filename().string();
    if (name == "manifest.json" || name == "summary.json") continue;
    files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace clustertab
