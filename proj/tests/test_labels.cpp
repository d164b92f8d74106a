#include "doctest.h"
#include "oracles.hpp"
#include "clustertab/errors.hpp"
#include "clustertab/labels.hpp"
#include "clustertab/synthgen.hpp"

using namespace clustertab;

namespace {

// 2x2 grid with a header row and a cell spanning both body rows of column 0.
AnnotatedPage spanning_page() {
  AnnotatedPage p;
  p.page = {100, 100, {}};
  auto word = [&](const char* t, double x, double y) { p.page.words.push_back({t, {x, y, x + 8, y + 8}}); };
  word("h0", 11, 11);
  word("h1", 51, 11);
  word("s", 11, 41);
  word("b1", 51, 31);
  word("b2", 51, 61);
  word("out", 90, 90);
  TableAnnotation t;
  t.box = {10, 10, 80, 80};
  t.rows = {{10, 10, 80, 20}, {10, 30, 80, 40}, {10, 60, 80, 70}};
  t.columns = {{10, 10, 40, 80}, {50, 10, 80, 80}};
  t.headers = {{10, 10, 80, 20}};
  t.spanning_cells = {{{10, 30, 40, 70}, {1, 2}, {0}}};
  p.annotation.tables = {t};
  return p;
}

}  // namespace

TEST_CASE("hand-built page: clusters and directed row edges") {
  AnnotatedPage p = spanning_page();
  ClusterSets c = ground_truth_clusters(p.page.words, p.annotation);
  REQUIRE(c[ClassId::Table].size() == 1);
  CHECK(c[ClassId::Table][0].members == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(c[ClassId::Cell].size() == 5);
  // rows: header row, body rows 1 and 2 each extended by the span, then the span itself.
  REQUIRE(c[ClassId::Row].size() == 4);
  CHECK(c[ClassId::Row][1].members == std::vector<int>{3});
  CHECK(c[ClassId::Row][1].extensions == std::vector<int>{2});
  CHECK(c[ClassId::Row][2].extensions == std::vector<int>{2});
  CHECK(c[ClassId::Row][3].members == std::vector<int>{2});
  CHECK(c[ClassId::Row][3].spanning);
  // a single-column span is an ordinary column member.
  REQUIRE(c[ClassId::Column].size() == 2);
  CHECK(c[ClassId::Column][0].members == std::vector<int>{0, 2});
  CHECK(c[ClassId::Header].size() == 1);

  LabelSet l = build_labels(p.page, p.annotation, 8);
  CHECK(l.num_words == 6);
  CHECK(l.adjacency[ClassId::Row](3, 2) == 1);
  CHECK(l.adjacency[ClassId::Row](2, 3) == 0);
  CHECK(l.adjacency[ClassId::Row](2, 2) == 1);
  CHECK(l.adjacency[ClassId::Table](5, 5) == 0);
  CHECK(l.adjacency[ClassId::Table](6, 6) == 0);
  auto directed = symmetrize_check(l);
  CHECK(directed[ClassId::Row] == std::vector<std::pair<int, int>>{{3, 2}, {4, 2}});
  CHECK(directed[ClassId::Column].empty());
  CHECK(l.pad_mask == std::vector<unsigned char>{1, 1, 1, 1, 1, 1, 0, 0});
}

TEST_CASE("truncation keeps the first words and masks classes") {
  AnnotatedPage p = spanning_page();
  p.annotation.mask_classes = {ClassId::Header};
  LabelSet l = build_labels(p.page, p.annotation, 3);
  CHECK(l.num_words == 3);
  CHECK(l.adjacency[ClassId::Table].rows() == 3);
  CHECK_FALSE(l.class_mask[ClassId::Header]);
  CHECK(l.class_mask[ClassId::Row]);
}

TEST_CASE("bad spanning indices are rejected") {
  AnnotatedPage p = spanning_page();
  p.annotation.tables[0].spanning_cells[0].row_indices = {1, 7};
  CHECK_THROWS_AS(ground_truth_clusters(p.page.words, p.annotation), InvalidAnnotation);
  p.annotation.tables[0].spanning_cells[0].row_indices = {};
  CHECK_THROWS_AS(build_labels(p.page, p.annotation, 10), InvalidAnnotation);
}

TEST_CASE("label builder agrees with the pairwise oracle on generated pages") {
  long long directed = 0;
  for (int i = 0; i < 60; ++i) {
    AnnotatedPage p = generate_page(oracle::small_pages(17, 20), i);
    const int n = static_cast<int>(p.page.words.size());
    LabelSet l = build_labels(p.page, p.annotation, n);
    auto o = oracle::pairwise_labels(p.page.words, p.annotation);
    for (ClassId c : kAllClasses)
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          CHECK(l.adjacency[c](a, b) == o[c][a][b]);
          directed += l.adjacency[c](a, b) && !l.adjacency[c](b, a);
        }
  }
  CHECK(directed > 0);
}

TEST_CASE("symmetric part of every class is an equivalence on clustered words") {
  for (int i = 0; i < 30; ++i) {
    AnnotatedPage p = generate_page(oracle::small_pages(3, 24), i);
    const int n = static_cast<int>(p.page.words.size());
    LabelSet l = build_labels(p.page, p.annotation, n);
    for (ClassId c : kAllClasses) {
      std::vector<std::vector<int>> m(n, std::vector<int>(n));
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) m[a][b] = l.adjacency[c](a, b);
      auto closure = oracle::symmetric_closure(m);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) CHECK(closure[a][b] == (m[a][b] && m[b][a]));
    }
  }
}

TEST_CASE("clusters to adjacency inverts ground truth clusters") {
  AnnotatedPage p = generate_page(oracle::small_pages(9, 30), 0);
  const int n = static_cast<int>(p.page.words.size());
  ClusterSets c = ground_truth_clusters(p.page.words, p.annotation);
  BinaryMatrix m = clusters_to_adjacency(c[ClassId::Cell], n, n + 3);
  CHECK(m.rows() == static_cast<std::size_t>(n + 3));
  for (const auto& cl : c[ClassId::Cell])
    for (int a : cl.members)
      for (int b : cl.members) CHECK(m(a, b) == 1);
  auto j = labels_to_json(build_labels(p.page, p.annotation, n));
  CHECK(j["num_words"] == n);
}
