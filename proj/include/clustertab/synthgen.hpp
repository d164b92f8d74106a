#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "clustertab/docmodel.hpp"

namespace clustertab {

struct IntRange {
  int min = 0;
  int max = 0;
  bool operator==(const IntRange&) const = default;
};

/// Weights over the word shapes drawn for cell and noise text.
struct AlphabetWeights {
  double lower = 1.0;    // "aaaa"
  double capital = 1.0;  // "Aaaa"
  double upper = 0.3;    // "AAA"
  double number = 1.5;   // "1,111", "11,1"
  double punct = 0.1;    // ","
  bool operator==(const AlphabetWeights&) const = default;
};

struct GenConfig {
  std::uint64_t seed = 0;
  double page_width = 612;
  double page_height = 792;
  IntRange tables{0, 3};
  IntRange rows{2, 8};  // including the header row
  IntRange columns{2, 6};
  double header_prob = 0.7;
  double header_span_prob = 0.3;  // column-spanning header cell
  double row_span_prob = 0.2;     // row-spanning cell in the first body column
  IntRange words_per_cell{1, 3};
  double cell_padding = 4;
  double jitter = 0.5;
  IntRange noise_words{0, 40};
  AlphabetWeights alphabet;
  /// Pages above this many words are redrawn (0 = no limit).
  int max_words = 0;

  void validate() const;
  bool operator==(const GenConfig&) const = default;

  /// Short pages for desk-scale training: at most 128 words.
  static GenConfig desk();
};

nlohmann::json to_json(const GenConfig& c);
GenConfig gen_config_from_json(const nlohmann::json& j, GenConfig base = {});
/// Hex FNV-1a of the serialised config.
std::string config_hash(const GenConfig& c);

/// Pure function of (config, index). Annotation boxes are word hulls, rows
/// and headers widened along x (columns along y) by the spanning cells they
/// meet. Throws GenerationError when no layout fits after bounded retries.
AnnotatedPage generate_page(const GenConfig& config, std::uint64_t index);

/// Writes page_00000.json ... and manifest.json into `dir`.
void generate_split(const GenConfig& config, int n_pages, const std::filesystem::path& dir);

std::vector<AnnotatedPage> generate_pages(const GenConfig& config, int n_pages, std::uint64_t first_index = 0);

}  // namespace clustertab
