#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "clustertab/ingest.hpp"
#include "clustertab/labels.hpp"

using namespace clustertab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string object(const std::string& name, double x0, double y0, double x1, double y1) {
  std::ostringstream os;
  os << "<object><name>" << name << "</name><bndbox><xmin>" << x0 << "</xmin><ymin>" << y0 << "</ymin><xmax>" << x1
     << "</xmax><ymax>" << y1 << "</ymax></bndbox></object>";
  return os.str();
}

std::string voc(const std::string& objects, double w = 200, double h = 100) {
  std::ostringstream os;
  os << "<annotation><filename>p.jpg</filename><size><width>" << w << "</width><height>" << h
     << "</height><depth>3</depth></size>" << objects << "</annotation>";
  return os.str();
}

// Three rows by two columns, with a cell over rows 1-2 of column 0.
std::string voc_with_span() {
  return voc(object("table", 10, 10, 110, 70) + object("table row", 10, 10, 110, 30) +
             object("table row", 10, 30, 110, 50) + object("table row", 10, 50, 110, 70) +
             object("table column", 10, 10, 60, 70) + object("table column", 60, 10, 110, 70) +
             object("table column header", 10, 10, 110, 30) + object("table spanning cell", 10, 30, 60, 70));
}

std::vector<Word> grid_words() {
  return {{"a", {15, 15, 30, 25}}, {"b", {65, 15, 80, 25}}, {"c", {15, 45, 30, 55}},
          {"d", {65, 35, 80, 45}}, {"e", {65, 55, 80, 65}}};
}

json html_record(const std::vector<std::string>& tokens, const json& cells) {
  return {{"filename", "doc.png"}, {"table_id", 3}, {"html", {{"structure", {{"tokens", tokens}}}, {"cells", cells}}}};
}

json cell(const std::string& text, double x0, double y0, double x1, double y1) {
  return {{"tokens", json::array({text})}, {"bbox", {x0, y0, x1, y1}}};
}

json two_by_two() {
  return html_record({"<thead>", "<tr>", "<td>", "</td>", "<td>", "</td>", "</tr>", "</thead>", "<tbody>", "<tr>",
                      "<td>", "</td>", "<td>", "</td>", "</tr>", "</tbody>"},
                     {cell("A", 0, 0, 10, 10), cell("B", 20, 0, 30, 10), cell("1", 0, 20, 10, 30),
                      cell("2", 20, 20, 30, 30)});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("pascal voc document") {
  const auto r = convert_voc_document(voc_with_span(), grid_words());
  REQUIRE(r.error_type.empty());
  REQUIRE(r.page);
  const auto& a = r.page->annotation;
  REQUIRE(a.tables.size() == 1);
  const auto& t = a.tables[0];
  CHECK(t.rows.size() == 3);
  CHECK(t.columns.size() == 2);
  CHECK(t.headers.size() == 1);
  REQUIRE(t.spanning_cells.size() == 1);
  CHECK(t.spanning_cells[0].row_indices == std::vector<int>{1, 2});
  CHECK(t.spanning_cells[0].column_indices == std::vector<int>{0});
  CHECK(r.page->page.words.size() == 5);
  CHECK(r.warnings.empty());

  const ClusterSets sets = ground_truth_clusters(r.page->page.words, a);
  CHECK(sets[ClassId::Table].size() == 1);
  CHECK(sets[ClassId::Cell].size() == 5);
}

TEST_CASE("pascal voc warnings and errors") {
  SUBCASE("clamped and inverted boxes") {
    const auto r = convert_voc_document(voc(object("table", 150, 10, 250, 60) + object("table row", 150, 60, 250, 10)),
                                        {{"x", {160, 20, 170, 30}}});
    REQUIRE(r.page);
    CHECK(r.warnings.at("clamped_box") == 2);
    CHECK(r.warnings.at("inverted_box") == 1);
    CHECK(r.page->annotation.tables[0].box.x1 == 200);
  }
  SUBCASE("orphans, unknown labels and empty words") {
    const auto r = convert_voc_document(
        voc(object("table", 0, 0, 50, 50) + object("table row", 100, 60, 150, 90) + object("figure", 0, 0, 5, 5)),
        {{" ", {1, 1, 2, 2}}, {"w", {1, 1, 4, 4}}});
    REQUIRE(r.page);
    CHECK(r.warnings.at("orphan_element") == 1);
    CHECK(r.warnings.at("unmapped_label:figure") == 1);
    CHECK(r.warnings.at("empty_word") == 1);
    CHECK(r.page->page.words.size() == 1);
  }
  SUBCASE("strict mode fails on the first warning") {
    ConvertOptions strict;
    strict.strict = true;
    const auto r = convert_voc_document(voc(object("table", 0, 0, 50, 50) + object("figure", 0, 0, 5, 5)), {}, strict);
    CHECK(!r.page);
    CHECK(r.error_type == "strict:unmapped_label:figure");
  }
  CHECK(convert_voc_document("<annotation><size>", {}).error_type == "malformed_xml");
  CHECK(convert_voc_document(voc("", 0, 100), {}).error_type == "bad_size");
  ConvertOptions fin;
  fin.dataset = "fintabnet";
  const auto masked = convert_voc_document(voc_with_span(), grid_words(), fin);
  REQUIRE(masked.page);
  CHECK(masked.page->annotation.is_masked(ClassId::Header));
}

TEST_CASE("html cell record") {
  const auto r = convert_html_record(two_by_two());
  REQUIRE(r.error_type.empty());
  REQUIRE(r.page);
  CHECK(r.name == "doc_3");
  const auto& t = r.page->annotation.tables.at(0);
  CHECK(t.rows.size() == 2);
  CHECK(t.columns.size() == 2);
  CHECK(t.headers.size() == 1);
  CHECK(t.spanning_cells.empty());
  CHECK(r.page->page.words.size() == 4);
  const ClusterSets sets = ground_truth_clusters(r.page->page.words, r.page->annotation);
  CHECK(sets[ClassId::Cell].size() == 4);
  CHECK(sets[ClassId::Row].size() == 2);
  CHECK(sets[ClassId::Column].size() == 2);
  CHECK(sets[ClassId::Header].size() == 1);
  CHECK(sets[ClassId::Header][0].members.size() == 2);
}

TEST_CASE("html spans and failures") {
  SUBCASE("column span in the header") {
    const json rec = html_record({"<thead>", "<tr>", "<td", " colspan=\"2\"", ">", "</td>", "</tr>", "</thead>",
                                  "<tr>", "<td>", "</td>", "<td>", "</td>", "</tr>"},
                                 {cell("Head", 0, 0, 30, 10), cell("1", 0, 20, 10, 30), cell("2", 20, 20, 30, 30)});
    const auto r = convert_html_record(rec);
    REQUIRE(r.page);
    const auto& t = r.page->annotation.tables.at(0);
    REQUIRE(t.spanning_cells.size() == 1);
    CHECK(t.spanning_cells[0].row_indices == std::vector<int>{0});
    CHECK(t.spanning_cells[0].column_indices == std::vector<int>{0, 1});
    CHECK(t.rows.size() == 2);
  }
  SUBCASE("row span past the last row") {
    const json rec = html_record({"<tr>", "<td rowspan=\"3\">", "</td>", "<td>", "</td>", "</tr>", "<tr>", "<td>",
                                  "</td>", "</tr>"},
                                 {cell("a", 0, 0, 1, 1), cell("b", 0, 0, 1, 1), cell("c", 0, 0, 1, 1)});
    CHECK(convert_html_record(rec).error_type == "inconsistent_grid");
  }
  SUBCASE("cell count mismatch") {
    json rec = two_by_two();
    rec["html"]["cells"].erase(0);
    CHECK(convert_html_record(rec).error_type == "inconsistent_grid");
  }
  SUBCASE("malformed and empty") {
    CHECK(convert_html_record(json::array()).error_type == "malformed_record");
    CHECK(convert_html_record({{"html", {{"cells", json::array()}}}}).error_type == "malformed_record");
    CHECK(convert_html_record(html_record({"<tr>", "<td>", "</td>", "</tr>"}, {{{"tokens", {"x"}}}})).error_type ==
          "empty_table");
  }
  SUBCASE("dataset field masks headers") {
    json rec = two_by_two();
    rec["dataset"] = "FinTabNet";
    const auto r = convert_html_record(rec);
    REQUIRE(r.page);
    CHECK(r.page->annotation.is_masked(ClassId::Header));
  }
}

TEST_CASE("words_from_json accepts both layouts") {
  const json list = json::array({{{"text", "a"}, {"bbox", {0, 0, 1, 1}}}, {{"text", "b"}, {"box", {2, 2, 1, 1}}}});
  const auto w = words_from_json(list);
  REQUIRE(w.size() == 2);
  CHECK(w[1].box.x0 == 1);
  CHECK(words_from_json(json{{"words", list}}).size() == 2);
  CHECK_THROWS(words_from_json(json{{"words", 3}}));
}

TEST_CASE("directory conversion summary and idempotence") {
  const fs::path base = fs::temp_directory_path() / "clustertab_ingest_test";
  fs::remove_all(base);
  fs::create_directories(base / "voc" / "words");
  fs::create_directories(base / "html");
  {
    std::ofstream(base / "voc" / "good.xml") << voc_with_span();
    json words = json::array();
    for (const auto& w : grid_words())
      words.push_back({{"text", w.text}, {"bbox", {w.box.x0, w.box.y0, w.box.x1, w.box.y1}}});
    std::ofstream(base / "voc" / "words" / "good_words.json") << words.dump();
    std::ofstream(base / "voc" / "nowords.xml") << voc_with_span();
    std::ofstream(base / "voc" / "broken.xml") << "<annotation>";
    std::ofstream(base / "voc" / "broken_words.json") << "[]";
  }
  const auto s = convert_pascal_voc(base / "voc", base / "out_voc");
  CHECK(s.input_records == 3);
  CHECK(s.emitted == 1);
  CHECK(s.skipped == 2);
  CHECK(s.input_records == s.emitted + s.skipped);
  CHECK(s.errors.at("missing_words") == 1);
  CHECK(s.errors.at("malformed_xml") == 1);
  CHECK(fs::exists(base / "out_voc" / "good.json"));
  CHECK(fs::exists(base / "out_voc" / "summary.json"));
  const json sj = to_json(s);
  CHECK(sj["format"] == "pascal-voc");
  CHECK(sj["failures"].size() == 2);

  {
    std::ofstream out(base / "html" / "tables.jsonl");
    out << two_by_two().dump() << "\n\n{not json\n";
    json bad = two_by_two();
    bad["html"]["cells"].erase(0);
    bad["table_id"] = 4;
    out << bad.dump() << "\n";
  }
  ConvertOptions opt;
  opt.jobs = 2;
  const auto h1 = convert_html_cells(base / "html", base / "out_a", opt);
  const auto h2 = convert_html_cells(base / "html", base / "out_b", opt);
  CHECK(h1.input_records == 3);
  CHECK(h1.emitted == 1);
  CHECK(h1.errors.at("malformed_json") == 1);
  CHECK(h1.errors.at("inconsistent_grid") == 1);
  CHECK(to_json(h1) == to_json(h2));
  CHECK(slurp(base / "out_a" / "doc_3.json") == slurp(base / "out_b" / "doc_3.json"));
  const AnnotatedPage back = load_annotated_page(base / "out_a" / "doc_3.json");
  CHECK(back.page.words.size() == 4);
  fs::remove_all(base);
}
