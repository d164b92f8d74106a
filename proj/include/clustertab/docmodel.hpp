#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace clustertab {

/// Axis-aligned box in page units. Construct through `Box::make` to get the
/// finiteness and ordering checks; aggregate init is left open for literals.
struct Box {
  double x0 = 0;
  double y0 = 0;
  double x1 = 0;
  double y1 = 0;

  static Box make(double x0, double y0, double x1, double y1);

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool valid() const;
  bool contains_point(double x, double y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
  Box clamped(double width, double height) const;
  Box united(const Box& other) const;

  bool operator==(const Box&) const = default;
};

double intersection_area(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);

/// Bounding hull of a non-empty set of boxes.
Box hull(const std::vector<Box>& boxes);

struct Word {
  std::string text;
  Box box;
};

struct Page {
  double width = 0;
  double height = 0;
  std::vector<Word> words;
};

enum class ClassId : int { Table = 0, Cell = 1, Row = 2, Column = 3, Header = 4 };

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::array<ClassId, kNumClasses> kAllClasses = {
    ClassId::Table, ClassId::Cell, ClassId::Row, ClassId::Column, ClassId::Header};

inline constexpr std::size_t index_of(ClassId c) { return static_cast<std::size_t>(c); }
std::string_view to_string(ClassId c);
/// Throws InvalidInput on an unknown name.
ClassId class_from_string(std::string_view name);

/// Per-class storage indexed by ClassId.
template <class T>
struct PerClass {
  std::array<T, kNumClasses> items{};

  T& operator[](ClassId c) { return items[index_of(c)]; }
  const T& operator[](ClassId c) const { return items[index_of(c)]; }
  auto begin() { return items.begin(); }
  auto end() { return items.end(); }
  auto begin() const { return items.begin(); }
  auto end() const { return items.end(); }
  bool operator==(const PerClass&) const = default;
};

struct SpanningCell {
  Box box;
  std::vector<int> row_indices;     // sorted, unique
  std::vector<int> column_indices;  // sorted, unique
};

struct TableAnnotation {
  Box box;
  std::vector<Box> rows;
  std::vector<Box> columns;
  std::vector<Box> headers;
  std::vector<SpanningCell> spanning_cells;
};

struct PageAnnotation {
  std::vector<TableAnnotation> tables;
  std::vector<ClassId> mask_classes;

  bool is_masked(ClassId c) const;
};

/// One file of the unified annotation format: the page and its labels.
struct AnnotatedPage {
  Page page;
  PageAnnotation annotation;
};

/// Word-to-region membership: word w belongs to region r iff the overlap
/// covers at least half of the word's area. Zero-area words use center
/// containment. A word may belong to several regions.
std::vector<std::vector<int>> assign_words_to_boxes(const std::vector<Word>& words,
                                                    const std::vector<Box>& regions);

/// Overlap fraction of `word` inside `region`, or -1 when the word is not a member.
double membership_score(const Box& word, const Box& region);

// Unified JSON format.
nlohmann::json to_json(const AnnotatedPage& page);
nlohmann::json to_json(const Box& box);
/// Parses and validates a unified-format document. Words with empty text are
/// dropped and all boxes are clamped to the page.
AnnotatedPage annotated_page_from_json(const nlohmann::json& j);
Box box_from_json(const nlohmann::json& j);

AnnotatedPage load_annotated_page(const std::filesystem::path& path);
void save_annotated_page(const AnnotatedPage& page, const std::filesystem::path& path);

/// Sorted list of `*.json` files in a directory, skipping `manifest.json` and
/// `summary.json`.
std::vector<std::filesystem::path> list_page_files(const std::filesystem::path& dir);

/// Serialises JSON with a trailing newline so repeated writes are byte-identical.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path, int indent = 1);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace clustertab
