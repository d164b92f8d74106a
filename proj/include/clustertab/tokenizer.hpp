#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "clustertab/docmodel.hpp"

namespace clustertab {

inline constexpr int kCoordBins = 1024;
inline constexpr int kDefaultVocabSize = 30015;

/// Maps text onto the four-letter alphabet {a, A, 1, ','}: Unicode canonical
/// decomposition, combining marks dropped, whitespace removed, lowercase -> 'a',
/// uppercase -> 'A', digit -> '1', anything else -> ','.
std::string normalize_word(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::string_view kUnkToken = "<UNK>";

  /// Vocabulary holding only UNK.
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);

  int lookup(std::string_view normalized) const;
  int unk_id() const { return unk_id_; }
  /// Number of ids including UNK.
  int size() const { return static_cast<int>(tokens_.size()) + 1; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int unk_id_ = 0;
};

/// Frequency-ranked vocabulary over already-normalised strings. Ties are
/// broken by ascending byte order; UNK takes the id after the last token.
Vocabulary build_vocab(const std::vector<std::string>& corpus, int max_size = kDefaultVocabSize);

/// clamp(floor(1024 * value / extent), 0, 1023). Throws InvalidInput on a
/// non-finite value or a non-positive extent.
int quantize_coord(double value, double extent);

struct TokenFeatures {
  int word_id = 0;
  int qx0 = 0;
  int qy0 = 0;
  int qx1 = 0;
  int qy1 = 0;

  bool operator==(const TokenFeatures&) const = default;
};

/// Reading order used everywhere words are sequenced: y-center bucket
/// (32 quantisation steps per bucket), then x0. Returns original word indices.
std::vector<int> canonical_order(const Page& page);

/// Copy of `ap` with words in canonical order.
AnnotatedPage to_canonical(const AnnotatedPage& ap);
Page to_canonical(const Page& page);

/// Features for each word, in canonical order.
std::vector<TokenFeatures> encode_page(const Page& page, const Vocabulary& vocab);

/// Features for each word, keeping the page's word order.
std::vector<TokenFeatures> encode_words(const Page& page, const Vocabulary& vocab);

}  // namespace clustertab
