#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "clustertab/errors.hpp"
#include "clustertab/labels.hpp"
#include "clustertab/metrics.hpp"
#include "clustertab/synthgen.hpp"

using namespace clustertab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool inside(const Box& b, double w, double h) { return b.x0 >= 0 && b.y0 >= 0 && b.x1 <= w && b.y1 <= h; }

}  // namespace

TEST_CASE("pages are a pure function of config and index") {
  GenConfig g = GenConfig::desk();
  g.seed = 5;
  for (std::uint64_t i : {0u, 3u, 17u}) {
    CHECK(to_json(generate_page(g, i)) == to_json(generate_page(g, i)));
  }
  CHECK(to_json(generate_page(g, 0)) != to_json(generate_page(g, 1)));
  GenConfig other = g;
  other.seed = 6;
  CHECK(to_json(generate_page(g, 0)) != to_json(generate_page(other, 0)));
  const auto batch = generate_pages(g, 4, 2);
  REQUIRE(batch.size() == 4);
  CHECK(to_json(batch[1]) == to_json(generate_page(g, 3)));
}

TEST_CASE("minimal table fixture") {
  GenConfig g;
  g.seed = 1;
  g.tables = {1, 1};
  g.rows = {2, 2};
  g.columns = {2, 2};
  g.words_per_cell = {1, 1};
  g.noise_words = {0, 0};
  g.header_prob = 0;
  g.row_span_prob = 0;
  const AnnotatedPage p = generate_page(g, 0);
  CHECK(p.page.words.size() == 4);
  REQUIRE(p.annotation.tables.size() == 1);
  const auto& t = p.annotation.tables[0];
  CHECK(t.rows.size() == 2);
  CHECK(t.columns.size() == 2);
  CHECK(t.headers.empty());
  CHECK(t.spanning_cells.empty());
  const ClusterSets sets = ground_truth_clusters(p.page.words, p.annotation);
  CHECK(sets[ClassId::Table].size() == 1);
  CHECK(sets[ClassId::Cell].size() == 4);
  CHECK(sets[ClassId::Row].size() == 2);
  CHECK(sets[ClassId::Column].size() == 2);
  CHECK(sets[ClassId::Header].empty());
}

TEST_CASE("config json round trip, hash and validation") {
  GenConfig g = GenConfig::desk();
  g.seed = 42;
  g.alphabet.punct = 0.25;
  const GenConfig back = gen_config_from_json(to_json(g));
  CHECK(back == g);
  CHECK(config_hash(back) == config_hash(g));
  GenConfig h = g;
  h.seed = 43;
  CHECK(config_hash(h) != config_hash(g));
  CHECK(config_hash(g).size() == 16);

  CHECK_THROWS_AS(gen_config_from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(gen_config_from_json({{"rows", {5, 2}}}), ConfigError);
  CHECK_THROWS_AS(gen_config_from_json({{"header_prob", 1.5}}), ConfigError);
  GenConfig bad;
  bad.alphabet = {0, 0, 0, 0, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  GenConfig partial = gen_config_from_json({{"max_words", 64}}, GenConfig::desk());
  CHECK(partial.max_words == 64);
  CHECK(partial.columns == GenConfig::desk().columns);
}

TEST_CASE("generated geometry is consistent") {
  GenConfig g = GenConfig::desk();
  g.seed = 9;
  for (std::uint64_t i = 0; i < 60; ++i) {
    const AnnotatedPage p = generate_page(g, i);
    CHECK(static_cast<int>(p.page.words.size()) <= g.max_words);
    for (const auto& w : p.page.words) {
      CHECK(!w.text.empty());
      CHECK(inside(w.box, p.page.width, p.page.height));
      CHECK(w.box.x1 > w.box.x0);
      CHECK(w.box.y1 > w.box.y0);
    }
    for (std::size_t a = 0; a < p.annotation.tables.size(); ++a) {
      const auto& t = p.annotation.tables[a];
      CHECK(inside(t.box, p.page.width, p.page.height));
      for (std::size_t b = a + 1; b < p.annotation.tables.size(); ++b)
        CHECK(intersection_area(t.box, p.annotation.tables[b].box) == 0);
      for (std::size_t r = 1; r < t.rows.size(); ++r) CHECK(t.rows[r - 1].y1 <= t.rows[r].y0);
      for (std::size_t c = 1; c < t.columns.size(); ++c) CHECK(t.columns[c - 1].x1 <= t.columns[c].x0);
      for (const auto& s : t.spanning_cells) {
        CHECK(!s.row_indices.empty());
        CHECK(!s.column_indices.empty());
        CHECK(s.row_indices.size() + s.column_indices.size() >= 3);
        for (int r : s.row_indices) CHECK(r < static_cast<int>(t.rows.size()));
        for (int c : s.column_indices) CHECK(c < static_cast<int>(t.columns.size()));
      }
    }
  }
}

TEST_CASE("table words recover their row and column") {
  GenConfig g = GenConfig::desk();
  g.seed = 21;
  int words_in_tables = 0;
  for (std::uint64_t i = 0; i < 60; ++i) {
    const AnnotatedPage p = generate_page(g, i);
    const WordPlacement wp = place_words(p.page.words, p.annotation);
    for (std::size_t w = 0; w < p.page.words.size(); ++w) {
      if (wp.table[w] < 0) continue;
      ++words_in_tables;
      if (wp.span[w] >= 0) continue;
      CHECK(wp.row[w] >= 0);
      CHECK(wp.column[w] >= 0);
    }
    // Word-hull regions: shrinking a table or header box to its words leaves it unchanged.
    const auto regions = gt_regions(p.page.words, p.annotation);
    for (ClassId c : {ClassId::Table, ClassId::Header}) {
      const auto shrunk = shrink_boxes(regions[c], p.page.words);
      REQUIRE(shrunk.size() == regions[c].size());
      for (std::size_t k = 0; k < shrunk.size(); ++k) CHECK(iou(shrunk[k], regions[c][k]) == doctest::Approx(1.0));
    }
  }
  CHECK(words_in_tables > 500);
}

TEST_CASE("ground truth clusters are exclusive and closed") {
  for (std::uint64_t seed : {3u, 4u}) {
    const GenConfig g = oracle::small_pages(seed, 24);
    for (std::uint64_t i = 0; i < 30; ++i) {
      const AnnotatedPage p = generate_page(g, i);
      const int n = static_cast<int>(p.page.words.size());
      const ClusterSets sets = ground_truth_clusters(p.page.words, p.annotation);
      for (ClassId c : kAllClasses) {
        std::vector<int> seen(n, 0);
        for (const auto& s : sets[c])
          for (int w : s.members) ++seen[w];
        for (int k : seen) CHECK(k <= 1);
        const BinaryMatrix adj = clusters_to_adjacency(sets[c], n);
        std::vector<std::vector<int>> m(n, std::vector<int>(n));
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) m[a][b] = adj(a, b);
        const auto closed = oracle::symmetric_closure(m);
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) CHECK(closed[a][b] == (m[a][b] && m[b][a]));
      }
    }
  }
}

TEST_CASE("split output is byte-identical across runs") {
  const fs::path base = fs::temp_directory_path() / "clustertab_synth_test";
  fs::remove_all(base);
  GenConfig g = GenConfig::desk();
  g.seed = 77;
  generate_split(g, 5, base / "a");
  generate_split(g, 5, base / "b");
  const auto files = list_page_files(base / "a");
  CHECK(files.size() == 5);
  for (const auto& f : files) CHECK(slurp(f) == slurp(base / "b" / f.filename()));
  const auto manifest = read_json_file(base / "a" / "manifest.json");
  CHECK(manifest["n_pages"] == 5);
  CHECK(manifest["seed"] == 77);
  CHECK(manifest["config_hash"] == config_hash(g));
  CHECK(gen_config_from_json(manifest["config"]) == g);
  CHECK(to_json(load_annotated_page(files[2])) == to_json(generate_page(g, 2)));
  fs::remove_all(base);
}
