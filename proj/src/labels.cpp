#include "clustertab/labels.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "clustertab/errors.hpp"

namespace clustertab {

namespace {

int best_region(const Box& word, const std::vector<Box>& regions) {
  int best = -1;
  double best_score = -1;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    double s = membership_score(word, regions[r]);
    if (s >= 0 && s > best_score) {
      best = static_cast<int>(r);
      best_score = s;
    }
  }
  return best;
}

std::vector<Box> span_boxes(const TableAnnotation& t) {
  std::vector<Box> out;
  out.reserve(t.spanning_cells.size());
  for (const auto& s : t.spanning_cells) out.push_back(s.box);
  return out;
}

void validate(const PageAnnotation& annotation) {
  for (std::size_t t = 0; t < annotation.tables.size(); ++t) {
    const auto& table = annotation.tables[t];
    for (std::size_t s = 0; s < table.spanning_cells.size(); ++s) {
      const auto& span = table.spanning_cells[s];
      auto where = "table " + std::to_string(t) + " spanning cell " + std::to_string(s);
      if (span.row_indices.empty() || span.column_indices.empty())
        throw InvalidAnnotation(where + " has no row or column indices");
      for (int r : span.row_indices)
        if (r < 0 || r >= static_cast<int>(table.rows.size()))
          throw InvalidAnnotation(where + " references row " + std::to_string(r) + " of " +
                                  std::to_string(table.rows.size()));
      for (int c : span.column_indices)
        if (c < 0 || c >= static_cast<int>(table.columns.size()))
          throw InvalidAnnotation(where + " references column " + std::to_string(c) + " of " +
                                  std::to_string(table.columns.size()));
    }
  }
}

std::vector<int> minus(std::vector<int> a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// Groups for one "line" class (row, column or header) of one table.
// `region_of` gives each word's region ordinal; `directed(s)` says whether
// spanning cell s gets one-directional edges in this class; `targets(s)`
// lists the regions it extends.
template <class Directed, class Targets>
void line_clusters(const std::vector<int>& table_words, std::size_t num_regions,
                   const std::vector<int>& region_of, const std::vector<int>& span_of,
                   std::size_t num_spans, Directed directed, Targets targets,
                   std::vector<ClusterSpec>& out) {
  std::vector<std::vector<int>> span_words(num_spans);
  for (int w : table_words)
    if (span_of[w] >= 0) span_words[span_of[w]].push_back(w);

  std::vector<std::vector<int>> regular(num_regions);
  for (int w : table_words) {
    if (region_of[w] < 0) continue;
    if (span_of[w] >= 0 && directed(span_of[w])) continue;
    regular[region_of[w]].push_back(w);
  }

  std::vector<std::vector<int>> extensions(num_regions);
  std::vector<bool> attached(num_spans, false);
  for (std::size_t s = 0; s < num_spans; ++s) {
    if (!directed(static_cast<int>(s)) || span_words[s].empty()) continue;
    for (int r : targets(static_cast<int>(s))) {
      if (regular[r].empty()) continue;
      auto& ext = extensions[r];
      ext.insert(ext.end(), span_words[s].begin(), span_words[s].end());
      attached[s] = true;
    }
  }

  for (std::size_t r = 0; r < num_regions; ++r) {
    if (regular[r].empty()) continue;
    ClusterSpec c;
    c.members = regular[r];
    std::sort(c.members.begin(), c.members.end());
    auto& ext = extensions[r];
    std::sort(ext.begin(), ext.end());
    ext.erase(std::unique(ext.begin(), ext.end()), ext.end());
    c.extensions = minus(ext, c.members);
    out.push_back(std::move(c));
  }
  for (std::size_t s = 0; s < num_spans; ++s) {
    if (!directed(static_cast<int>(s)) || span_words[s].empty()) continue;
    ClusterSpec c;
    c.members = span_words[s];
    std::sort(c.members.begin(), c.members.end());
    c.spanning = attached[s];
    out.push_back(std::move(c));
  }
}

}  // namespace

WordPlacement place_words(const std::vector<Word>& words, const PageAnnotation& annotation) {
  const std::size_t n = words.size();
  WordPlacement p;
  p.table.assign(n, -1);
  p.row.assign(n, -1);
  p.column.assign(n, -1);
  p.header.assign(n, -1);
  p.span.assign(n, -1);

  std::vector<Box> table_boxes;
  for (const auto& t : annotation.tables) table_boxes.push_back(t.box);
  for (std::size_t w = 0; w < n; ++w) {
    int t = best_region(words[w].box, table_boxes);
    p.table[w] = t;
    if (t < 0) continue;
    const auto& table = annotation.tables[t];
    p.row[w] = best_region(words[w].box, table.rows);
    p.column[w] = best_region(words[w].box, table.columns);
    p.header[w] = best_region(words[w].box, table.headers);
    p.span[w] = best_region(words[w].box, span_boxes(table));
  }
  return p;
}

ClusterSets ground_truth_clusters(const std::vector<Word>& words, const PageAnnotation& annotation) {
  validate(annotation);
  const WordPlacement p = place_words(words, annotation);
  ClusterSets out;

  for (std::size_t t = 0; t < annotation.tables.size(); ++t) {
    const auto& table = annotation.tables[t];
    std::vector<int> table_words;
    for (std::size_t w = 0; w < words.size(); ++w)
      if (p.table[w] == static_cast<int>(t)) table_words.push_back(static_cast<int>(w));
    if (table_words.empty()) continue;
    out[ClassId::Table].push_back({table_words, {}, false});

    // Cells: a spanning cell, or the intersection of one row and one column.
    std::map<std::pair<int, int>, std::vector<int>> cells;
    for (int w : table_words) {
      if (p.span[w] >= 0) {
        cells[{-1, p.span[w]}].push_back(w);
      } else if (p.row[w] >= 0 && p.column[w] >= 0) {
        cells[{p.row[w], p.column[w]}].push_back(w);
      }
    }
    // Grid cells first (row-major), spanning cells after.
    for (auto& [key, members] : cells)
      if (key.first >= 0) out[ClassId::Cell].push_back({members, {}, false});
    for (auto& [key, members] : cells)
      if (key.first < 0) out[ClassId::Cell].push_back({members, {}, false});

    const auto& spans = table.spanning_cells;
    const std::size_t ns = spans.size();

    line_clusters(
        table_words, table.rows.size(), p.row, p.span, ns,
        [&](int s) { return spans[s].row_indices.size() >= 2; },
        [&](int s) { return spans[s].row_indices; }, out[ClassId::Row]);

    line_clusters(
        table_words, table.columns.size(), p.column, p.span, ns,
        [&](int s) { return spans[s].column_indices.size() >= 2; },
        [&](int s) { return spans[s].column_indices; }, out[ClassId::Column]);

    // A spanning cell lying inside a header is an ordinary part of it; one
    // that only crosses into a header is attached one-directionally.
    std::vector<std::vector<int>> header_targets(ns);
    std::vector<bool> header_directed(ns, false);
    for (std::size_t s = 0; s < ns; ++s) {
      bool inside_any = false;
      for (std::size_t h = 0; h < table.headers.size(); ++h) {
        if (membership_score(spans[s].box, table.headers[h]) >= 0) inside_any = true;
        if (intersection_area(spans[s].box, table.headers[h]) > 0)
          header_targets[s].push_back(static_cast<int>(h));
      }
      header_directed[s] = !inside_any && !header_targets[s].empty();
    }
    line_clusters(
        table_words, table.headers.size(), p.header, p.span, ns,
        [&](int s) { return static_cast<bool>(header_directed[s]); },
        [&](int s) { return header_targets[s]; }, out[ClassId::Header]);
  }
  return out;
}

BinaryMatrix clusters_to_adjacency(const std::vector<ClusterSpec>& clusters, int n, int size) {
  if (size < n) size = n;
  BinaryMatrix m = BinaryMatrix::square(static_cast<std::size_t>(size), 0);
  for (const auto& c : clusters) {
    for (int i : c.members) {
      if (i >= n) continue;
      for (int j : c.members)
        if (j < n) m(i, j) = 1;
      for (int j : c.extensions)
        if (j < n) m(i, j) = 1;
    }
  }
  return m;
}

LabelSet build_labels(const Page& page, const PageAnnotation& annotation, int seq_len) {
  if (seq_len < 0) throw InvalidInput("sequence length must be non-negative");
  const int n = std::min(static_cast<int>(page.words.size()), seq_len);
  std::vector<Word> words(page.words.begin(), page.words.begin() + n);
  const ClusterSets clusters = ground_truth_clusters(words, annotation);

  LabelSet labels;
  labels.num_words = n;
  labels.seq_len = seq_len;
  for (ClassId c : kAllClasses) {
    labels.adjacency[c] = clusters_to_adjacency(clusters[c], n, seq_len);
    labels.class_mask[c] = !annotation.is_masked(c);
  }
  labels.pad_mask.assign(static_cast<std::size_t>(seq_len), 0);
  std::fill(labels.pad_mask.begin(), labels.pad_mask.begin() + n, 1);
  return labels;
}

PerClass<std::vector<std::pair<int, int>>> symmetrize_check(const LabelSet& labels) {
  PerClass<std::vector<std::pair<int, int>>> report;
  for (ClassId c : kAllClasses) {
    const auto& m = labels.adjacency[c];
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j)
        if (m(i, j) && !m(j, i)) report[c].emplace_back(static_cast<int>(i), static_cast<int>(j));
  }
  return report;
}

nlohmann::json labels_to_json(const LabelSet& labels) {
  nlohmann::json j;
  for (ClassId c : kAllClasses) {
    auto pairs = nlohmann::json::array();
    const auto& m = labels.adjacency[c];
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j2 = 0; j2 < m.cols(); ++j2)
        if (m(i, j2)) pairs.push_back({i, j2});
    j[std::string(to_string(c))] = std::move(pairs);
  }
  j["num_words"] = labels.num_words;
  j["seq_len"] = labels.seq_len;
  return j;
}

}  // namespace clustertab
