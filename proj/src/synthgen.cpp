#include "clustertab/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include "clustertab/errors.hpp"
#include "clustertab/nn/tensor.hpp"

namespace clustertab {

namespace {

constexpr int kSchemaVersion = 1;
constexpr int kMaxAttempts = 64;
constexpr double kMargin = 36;

// Small counter-keyed generator with library-independent draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  int integer(int lo, int hi) {
    if (hi <= lo) return lo;
    return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  int integer(const IntRange& r) { return integer(r.min, r.max); }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
};

enum class Role { Header, Stub, Body, Noise };

std::string draw_text(Rng& rng, const AlphabetWeights& base, Role role) {
  AlphabetWeights w = base;
  switch (role) {
    case Role::Header: w.number = 0; w.punct = 0; w.lower *= 0.3; break;
    case Role::Stub: w.number *= 0.2; w.upper = 0; w.punct = 0; break;
    case Role::Body: w.lower = 0; w.capital = 0; w.upper = 0; w.punct *= 0.5; break;
    case Role::Noise: break;
  }
  double weights[5] = {w.lower, w.capital, w.upper, w.number, w.punct};
  double total = 0;
  for (double x : weights) total += x;
  if (total <= 0) {
    weights[0] = base.lower, weights[1] = base.capital, weights[2] = base.upper, weights[3] = base.number,
    weights[4] = base.punct;
    total = 0;
    for (double x : weights) total += x;
  }
  double u = rng.uniform() * total;
  int kind = 0;
  for (; kind < 4; ++kind) {
    if (u < weights[kind]) break;
    u -= weights[kind];
  }
  switch (kind) {
    case 0: return std::string(static_cast<std::size_t>(rng.integer(2, 9)), 'a');
    case 1: return "A" + std::string(static_cast<std::size_t>(rng.integer(1, 8)), 'a');
    case 2: return std::string(static_cast<std::size_t>(rng.integer(2, 4)), 'A');
    case 3: {
      switch (rng.integer(0, 3)) {
        case 0: return std::string(static_cast<std::size_t>(rng.integer(1, 3)), '1');
        case 1: return std::string(static_cast<std::size_t>(rng.integer(1, 3)), '1') + ",111";
        case 2: return std::string(static_cast<std::size_t>(rng.integer(1, 2)), '1') + ",1";
        default: return "," + std::string(static_cast<std::size_t>(rng.integer(1, 2)), '1') + ",";
      }
    }
    default: return ",";
  }
}

struct Cell {
  int r0, r1, c0, c1;  // inclusive
  Role role;
  std::vector<std::string> texts;
  bool spanning() const { return r1 > r0 || c1 > c0; }
};

struct Layout {
  std::vector<Word> words;
  PageAnnotation annotation;
};

struct Font {
  double size;
  double char_w() const { return 0.5 * size; }
  double gap() const { return 0.35 * size; }
  double width(const std::vector<std::string>& texts) const {
    double w = 0;
    for (std::size_t i = 0; i < texts.size(); ++i) w += (i ? gap() : 0) + char_w() * static_cast<double>(texts[i].size());
    return w;
  }
};

struct TablePlan {
  int rows = 0, cols = 0, header_rows = 0;
  std::vector<Cell> cells;
  Font font{10};
  std::vector<double> col_w;
  double row_h = 0;
  double width() const {
    double w = 0;
    for (double c : col_w) w += c;
    return w;
  }
  double height() const { return row_h * rows; }
};

TablePlan plan_table(Rng& rng, const GenConfig& cfg) {
  TablePlan t;
  t.rows = rng.integer(cfg.rows);
  t.cols = rng.integer(cfg.columns);
  t.header_rows = rng.bernoulli(cfg.header_prob) ? 1 : 0;
  if (t.rows - t.header_rows < 1) t.header_rows = 0;
  t.font.size = rng.uniform(8, 11);

  std::vector<std::vector<int>> owner(t.rows, std::vector<int>(t.cols, -1));
  auto add = [&](Cell c) {
    for (int r = c.r0; r <= c.r1; ++r)
      for (int col = c.c0; col <= c.c1; ++col) owner[r][col] = static_cast<int>(t.cells.size());
    t.cells.push_back(std::move(c));
  };
  if (t.header_rows > 0 && t.cols >= 2 && rng.bernoulli(cfg.header_span_prob)) {
    const int lo = t.cols >= 3 ? 1 : 0;
    const int w = rng.integer(2, t.cols - lo);
    const int c0 = rng.integer(lo, t.cols - w);
    add({0, 0, c0, c0 + w - 1, Role::Header, {}});
  }
  const int body = t.rows - t.header_rows;
  if (body >= 2 && t.cols >= 2 && rng.bernoulli(cfg.row_span_prob)) {
    const int h = rng.integer(2, std::min(3, body));
    const int r0 = rng.integer(t.header_rows, t.rows - h);
    add({r0, r0 + h - 1, 0, 0, Role::Stub, {}});
  }
  for (int r = 0; r < t.rows; ++r)
    for (int c = 0; c < t.cols; ++c)
      if (owner[r][c] < 0) {
        Role role = r < t.header_rows ? Role::Header : (c == 0 ? Role::Stub : Role::Body);
        add({r, r, c, c, role, {}});
      }
  for (auto& cell : t.cells) {
    const int n = rng.integer(cfg.words_per_cell);
    for (int i = 0; i < n; ++i) cell.texts.push_back(draw_text(rng, cfg.alphabet, cell.role));
  }

  const double pad = cfg.cell_padding;
  t.col_w.assign(t.cols, 2 * pad);
  for (const auto& cell : t.cells)
    if (cell.c0 == cell.c1) t.col_w[cell.c0] = std::max(t.col_w[cell.c0], t.font.width(cell.texts) + 2 * pad);
  for (const auto& cell : t.cells) {
    if (cell.c0 == cell.c1) continue;
    double have = 0;
    for (int c = cell.c0; c <= cell.c1; ++c) have += t.col_w[c];
    const double need = t.font.width(cell.texts) + 2 * pad;
    if (need > have) t.col_w[cell.c1] += need - have;
  }
  t.row_h = t.font.size + 2 * pad;
  return t;
}

Box hull_of(const std::vector<Word>& words, const std::vector<int>& idx) {
  Box b = words[idx.front()].box;
  for (int i : idx) b = b.united(words[i].box);
  return b;
}

// Places a planned table with its top-left corner at (x, y), appending words
// and returning the annotation.
TableAnnotation place_table(Rng& rng, const GenConfig& cfg, const TablePlan& t, double x, double y,
                            std::vector<Word>& words) {
  const double pad = cfg.cell_padding;
  std::vector<double> col_x(t.cols + 1, x);
  for (int c = 0; c < t.cols; ++c) col_x[c + 1] = col_x[c] + t.col_w[c];
  std::vector<std::vector<int>> cell_words(t.cells.size());

  for (std::size_t k = 0; k < t.cells.size(); ++k) {
    const Cell& cell = t.cells[k];
    const double cx0 = col_x[cell.c0], cx1 = col_x[cell.c1 + 1];
    const double cy0 = y + t.row_h * cell.r0, cy1 = y + t.row_h * (cell.r1 + 1);
    const double content = t.font.width(cell.texts);
    double start;
    if (cell.c1 > cell.c0) start = 0.5 * (cx0 + cx1 - content);
    else if (cell.role == Role::Body) start = cx1 - pad - content;
    else start = cx0 + pad;
    const double top = 0.5 * (cy0 + cy1) - 0.5 * t.font.size;
    double cursor = start;
    for (const auto& text : cell.texts) {
      const double w = t.font.char_w() * static_cast<double>(text.size());
      const double jx = rng.uniform(-cfg.jitter, cfg.jitter);
      const double jy = rng.uniform(-cfg.jitter, cfg.jitter);
      cell_words[k].push_back(static_cast<int>(words.size()));
      words.push_back({text, Box{cursor + jx, top + jy, cursor + w + jx, top + t.font.size + jy}});
      cursor += w + t.font.gap();
    }
  }

  TableAnnotation ann;
  std::vector<int> all;
  for (const auto& cw : cell_words) all.insert(all.end(), cw.begin(), cw.end());
  ann.box = hull_of(words, all);

  // Rows grow along x by row-spanning cells, columns along y by column-spanning cells.
  for (int r = 0; r < t.rows; ++r) {
    std::vector<int> members, ext;
    for (std::size_t k = 0; k < t.cells.size(); ++k) {
      const Cell& c = t.cells[k];
      if (c.r0 == r && c.r1 == r) members.insert(members.end(), cell_words[k].begin(), cell_words[k].end());
      else if (c.r0 <= r && r <= c.r1) ext.insert(ext.end(), cell_words[k].begin(), cell_words[k].end());
    }
    Box b = hull_of(words, members);
    for (int w : ext) {
      b.x0 = std::min(b.x0, words[w].box.x0);
      b.x1 = std::max(b.x1, words[w].box.x1);
    }
    ann.rows.push_back(b);
  }
  for (int col = 0; col < t.cols; ++col) {
    std::vector<int> members, ext;
    for (std::size_t k = 0; k < t.cells.size(); ++k) {
      const Cell& c = t.cells[k];
      if (c.c0 == col && c.c1 == col) members.insert(members.end(), cell_words[k].begin(), cell_words[k].end());
      else if (c.c0 <= col && col <= c.c1) ext.insert(ext.end(), cell_words[k].begin(), cell_words[k].end());
    }
    Box b = hull_of(words, members);
    for (int w : ext) {
      b.y0 = std::min(b.y0, words[w].box.y0);
      b.y1 = std::max(b.y1, words[w].box.y1);
    }
    ann.columns.push_back(b);
  }
  if (t.header_rows > 0) {
    std::vector<int> header;
    for (std::size_t k = 0; k < t.cells.size(); ++k)
      if (t.cells[k].r1 < t.header_rows) header.insert(header.end(), cell_words[k].begin(), cell_words[k].end());
    ann.headers.push_back(hull_of(words, header));
  }
  for (std::size_t k = 0; k < t.cells.size(); ++k) {
    const Cell& c = t.cells[k];
    if (!c.spanning()) continue;
    SpanningCell s;
    s.box = hull_of(words, cell_words[k]);
    for (int r = c.r0; r <= c.r1; ++r) s.row_indices.push_back(r);
    for (int col = c.c0; col <= c.c1; ++col) s.column_indices.push_back(col);
    ann.spanning_cells.push_back(std::move(s));
  }
  return ann;
}

double place_noise(Rng& rng, const GenConfig& cfg, int count, double y, std::vector<Word>& words) {
  if (count == 0) return y;
  Font font{rng.uniform(8, 11)};
  const double line_h = 1.4 * font.size;
  const double right = cfg.page_width - kMargin;
  double x = kMargin + rng.uniform(0, 40);
  for (int i = 0; i < count; ++i) {
    std::string text = draw_text(rng, cfg.alphabet, Role::Noise);
    const double w = font.char_w() * static_cast<double>(text.size());
    if (x + w > right) {
      x = kMargin;
      y += line_h;
    }
    const double jx = rng.uniform(-cfg.jitter, cfg.jitter);
    const double jy = rng.uniform(-cfg.jitter, cfg.jitter);
    words.push_back({std::move(text), Box{x + jx, y + jy, x + w + jx, y + font.size + jy}});
    x += w + font.gap();
  }
  return y + line_h;
}

std::optional<Layout> try_layout(Rng& rng, const GenConfig& cfg, std::string& why) {
  Layout out;
  const int n_tables = rng.integer(cfg.tables);
  const int n_noise = rng.integer(cfg.noise_words);
  std::vector<int> noise_blocks(static_cast<std::size_t>(n_tables) + 1, 0);
  for (int i = 0; i < n_noise; ++i) ++noise_blocks[static_cast<std::size_t>(rng.integer(0, n_tables))];

  double y = kMargin + rng.uniform(0, 20);
  for (int t = 0; t <= n_tables; ++t) {
    if (noise_blocks[t] > 0) {
      y = place_noise(rng, cfg, noise_blocks[t], y, out.words);
      y += rng.uniform(8, 24);
    }
    if (t == n_tables) break;
    TablePlan plan = plan_table(rng, cfg);
    const double avail = cfg.page_width - 2 * kMargin;
    if (plan.width() > avail) {
      why = "table width exceeds the page width";
      return std::nullopt;
    }
    const double x = kMargin + rng.uniform(0, avail - plan.width());
    out.annotation.tables.push_back(place_table(rng, cfg, plan, x, y, out.words));
    y += plan.height() + rng.uniform(10, 30);
  }
  for (const auto& w : out.words)
    if (w.box.y1 > cfg.page_height - kMargin / 2 || w.box.x1 > cfg.page_width - kMargin / 2) {
      why = "content exceeds the page bounds";
      return std::nullopt;
    }
  if (cfg.max_words > 0 && static_cast<int>(out.words.size()) > cfg.max_words) {
    why = "page exceeds max_words";
    return std::nullopt;
  }
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json range_json(const IntRange& r) { return nlohmann::json::array({r.min, r.max}); }

IntRange range_from(const nlohmann::json& j, const char* key) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    throw ConfigError(std::string("gen config: '") + key + "' must be [min, max]");
  return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

void GenConfig::validate() const {
  auto check_range = [](const IntRange& r, int lowest, const char* name) {
    if (r.min < lowest || r.max < r.min)
      throw ConfigError(std::string("gen config: ") + name + " range [" + std::to_string(r.min) + "," +
                        std::to_string(r.max) + "] is invalid (minimum " + std::to_string(lowest) + ")");
  };
  check_range(tables, 0, "tables");
  check_range(rows, 1, "rows");
  check_range(columns, 1, "columns");
  check_range(words_per_cell, 1, "words_per_cell");
  check_range(noise_words, 0, "noise_words");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0 && p <= 1)) throw ConfigError(std::string("gen config: ") + name + " must lie in [0,1]");
  };
  prob(header_prob, "header_prob");
  prob(header_span_prob, "header_span_prob");
  prob(row_span_prob, "row_span_prob");
  if (!(page_width > 2 * kMargin) || !(page_height > 2 * kMargin))
    throw ConfigError("gen config: page size too small");
  if (!(cell_padding > 0)) throw ConfigError("gen config: cell_padding must be positive");
  if (!(jitter >= 0 && jitter < cell_padding / 2))
    throw ConfigError("gen config: jitter must lie in [0, cell_padding/2)");
  if (max_words < 0) throw ConfigError("gen config: max_words must be non-negative");
  const double weights[] = {alphabet.lower, alphabet.capital, alphabet.upper, alphabet.number, alphabet.punct};
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0)) throw ConfigError("gen config: alphabet weights must be non-negative");
    total += w;
  }
  if (!(total > 0)) throw ConfigError("gen config: alphabet weights must not all be zero");
}

GenConfig GenConfig::desk() {
  GenConfig c;
  c.tables = {0, 2};
  c.rows = {2, 6};
  c.columns = {2, 5};
  c.words_per_cell = {1, 2};
  c.noise_words = {0, 20};
  c.max_words = 128;
  return c;
}

nlohmann::json to_json(const GenConfig& c) {
  return {{"seed", c.seed},
          {"page_width", c.page_width},
          {"page_height", c.page_height},
          {"tables", range_json(c.tables)},
          {"rows", range_json(c.rows)},
          {"columns", range_json(c.columns)},
          {"header_prob", c.header_prob},
          {"header_span_prob", c.header_span_prob},
          {"row_span_prob", c.row_span_prob},
          {"words_per_cell", range_json(c.words_per_cell)},
          {"cell_padding", c.cell_padding},
          {"jitter", c.jitter},
          {"noise_words", range_json(c.noise_words)},
          {"alphabet",
           {{"lower", c.alphabet.lower},
            {"capital", c.alphabet.capital},
            {"upper", c.alphabet.upper},
            {"number", c.alphabet.number},
            {"punct", c.alphabet.punct}}},
          {"max_words", c.max_words}};
}

GenConfig gen_config_from_json(const nlohmann::json& j, GenConfig c) {
  const nlohmann::json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw ConfigError("gen config: unknown key '" + it.key() + "'");
  try {
    c.seed = j.value("seed", c.seed);
    c.page_width = j.value("page_width", c.page_width);
    c.page_height = j.value("page_height", c.page_height);
    if (j.contains("tables")) c.tables = range_from(j["tables"], "tables");
    if (j.contains("rows")) c.rows = range_from(j["rows"], "rows");
    if (j.contains("columns")) c.columns = range_from(j["columns"], "columns");
    c.header_prob = j.value("header_prob", c.header_prob);
    c.header_span_prob = j.value("header_span_prob", c.header_span_prob);
    c.row_span_prob = j.value("row_span_prob", c.row_span_prob);
    if (j.contains("words_per_cell")) c.words_per_cell = range_from(j["words_per_cell"], "words_per_cell");
    c.cell_padding = j.value("cell_padding", c.cell_padding);
    c.jitter = j.value("jitter", c.jitter);
    if (j.contains("noise_words")) c.noise_words = range_from(j["noise_words"], "noise_words");
    if (j.contains("alphabet")) {
      const auto& a = j["alphabet"];
      for (auto it = a.begin(); it != a.end(); ++it)
        if (!known["alphabet"].contains(it.key()))
          throw ConfigError("gen config: unknown key 'alphabet." + it.key() + "'");
      c.alphabet.lower = a.value("lower", c.alphabet.lower);
      c.alphabet.capital = a.value("capital", c.alphabet.capital);
      c.alphabet.upper = a.value("upper", c.alphabet.upper);
      c.alphabet.number = a.value("number", c.alphabet.number);
      c.alphabet.punct = a.value("punct", c.alphabet.punct);
    }
    c.max_words = j.value("max_words", c.max_words);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("gen config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_hash(const GenConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

AnnotatedPage generate_page(const GenConfig& config, std::uint64_t index) {
  config.validate();
  std::string why = "no attempt made";
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(nn::mix_seed(config.seed, index, static_cast<std::uint64_t>(attempt)));
    auto layout = try_layout(rng, config, why);
    if (!layout) continue;
    AnnotatedPage ap;
    ap.page.width = config.page_width;
    ap.page.height = config.page_height;
    ap.page.words = std::move(layout->words);
    ap.annotation = std::move(layout->annotation);
    return ap;
  }
  throw GenerationError("page " + std::to_string(index) + ": " + why + " after " + std::to_string(kMaxAttempts) +
                        " attempts");
}

std::vector<AnnotatedPage> generate_pages(const GenConfig& config, int n_pages, std::uint64_t first_index) {
  std::vector<AnnotatedPage> out;
  out.reserve(static_cast<std::size_t>(std::max(n_pages, 0)));
  for (int i = 0; i < n_pages; ++i) out.push_back(generate_page(config, first_index + static_cast<std::uint64_t>(i)));
  return out;
}

void generate_split(const GenConfig& config, int n_pages, const std::filesystem::path& dir) {
  if (n_pages < 1) throw ConfigError("gen-data: page count must be at least 1");
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
  for (int i = 0; i < n_pages; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "page_%05d.json", i);
    save_annotated_page(generate_page(config, static_cast<std::uint64_t>(i)), dir / name);
  }
  nlohmann::json manifest{{"config", to_json(config)},
                          {"config_hash", config_hash(config)},
                          {"seed", config.seed},
                          {"n_pages", n_pages},
                          {"schema_version", kSchemaVersion}};
  write_json_file(manifest, dir / "manifest.json");
}

}  // namespace clustertab
