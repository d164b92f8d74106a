#include "clustertab/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "clustertab/errors.hpp"

namespace clustertab {

std::string normalize_word(std::string_view text) {
  if (text.empty()) return {};

  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfd = icu::Normalizer2::getNFDInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFD normalizer unavailable");
  icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString decomposed = nfd->normalize(src, status);
  if (U_FAILURE(status)) throw Error("ICU normalization failed");

  std::string out;
  out.reserve(static_cast<std::size_t>(decomposed.length()));
  for (int32_t i = 0; i < decomposed.length();) {
    UChar32 c = decomposed.char32At(i);
    i += U16_LENGTH(c);
    if (u_getIntPropertyValue(c, UCHAR_GENERAL_CATEGORY_MASK) & (U_GC_MN_MASK | U_GC_ME_MASK))
      continue;
    if (u_isUWhiteSpace(c)) continue;
    if (c >= 'a' && c <= 'z') {
      out.push_back('a');
    } else if (c >= 'A' && c <= 'Z') {
      out.push_back('A');
    } else if (c >= '0' && c <= '9') {
      out.push_back('1');
    } else {
      out.push_back(',');
    }
  }
  return out;
}

Vocabulary::Vocabulary() = default;

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw InvalidInput("duplicate vocabulary token '" + tokens_[i] + "'");
  }
  unk_id_ = static_cast<int>(tokens_.size());
}

int Vocabulary::lookup(std::string_view normalized) const {
  auto it = ids_.find(std::string(normalized));
  return it == ids_.end() ? unk_id_ : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  out << kUnkToken << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.empty() || lines.back() != kUnkToken)
    throw InvalidInput(path.string() + ": vocabulary must end with " + std::string(kUnkToken));
  lines.pop_back();
  return Vocabulary(std::move(lines));
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, int max_size) {
  if (max_size < 0) throw InvalidInput("vocabulary size must be non-negative");
  std::map<std::string, long long> counts;
  for (const auto& s : corpus)
    if (!s.empty()) ++counts[s];
  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  // std::map iteration is already byte-ascending, so a stable sort on count
  // alone realises the tie rule.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > static_cast<std::size_t>(max_size)) ranked.resize(max_size);
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocabulary(std::move(tokens));
}

int quantize_coord(double value, double extent) {
  if (!std::isfinite(value)) throw InvalidInput("non-finite coordinate");
  if (!std::isfinite(extent) || extent <= 0) throw InvalidInput("page extent must be positive");
  double q = std::floor(static_cast<double>(kCoordBins) * value / extent);
  return static_cast<int>(std::clamp(q, 0.0, static_cast<double>(kCoordBins - 1)));
}

std::vector<int> canonical_order(const Page& page) {
  constexpr int kBucket = 32;
  std::vector<int> order(page.words.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> bucket(page.words.size());
  for (std::size_t i = 0; i < page.words.size(); ++i)
    bucket[i] = quantize_coord(page.words[i].box.cy(), page.height) / kBucket;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (bucket[a] != bucket[b]) return bucket[a] < bucket[b];
    const Box& ba = page.words[a].box;
    const Box& bb = page.words[b].box;
    if (ba.x0 != bb.x0) return ba.x0 < bb.x0;
    if (ba.y0 != bb.y0) return ba.y0 < bb.y0;
    if (ba.x1 != bb.x1) return ba.x1 < bb.x1;
    if (ba.y1 != bb.y1) return ba.y1 < bb.y1;
    return page.words[a].text < page.words[b].text;
  });
  return order;
}

Page to_canonical(const Page& page) {
  Page out{page.width, page.height, {}};
  out.words.reserve(page.words.size());
  for (int i : canonical_order(page)) out.words.push_back(page.words[i]);
  return out;
}

AnnotatedPage to_canonical(const AnnotatedPage& ap) {
  return AnnotatedPage{to_canonical(ap.page), ap.annotation};
}

std::vector<TokenFeatures> encode_words(const Page& page, const Vocabulary& vocab) {
  std::vector<TokenFeatures> out;
  out.reserve(page.words.size());
  for (const auto& w : page.words) {
    TokenFeatures f;
    f.word_id = vocab.lookup(normalize_word(w.text));
    f.qx0 = quantize_coord(w.box.x0, page.width);
    f.qy0 = quantize_coord(w.box.y0, page.height);
    f.qx1 = quantize_coord(w.box.x1, page.width);
    f.qy1 = quantize_coord(w.box.y1, page.height);
    out.push_back(f);
  }
  return out;
}

std::vector<TokenFeatures> encode_page(const Page& page, const Vocabulary& vocab) {
  return encode_words(to_canonical(page), vocab);
}

}  // namespace clustertab
