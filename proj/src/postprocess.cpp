#include "clustertab/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>

#include "clustertab/errors.hpp"

namespace clustertab {

namespace {

class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<int> parent_;
};

int resolve_n(int num_words, std::size_t rows) {
  return num_words < 0 ? static_cast<int>(rows) : std::min(num_words, static_cast<int>(rows));
}

// Clusters of one class in local indices, with the strong-edge statistics
// needed for confidence after merging.
struct LocalDecode {
  std::vector<std::vector<int>> clusters;
  std::vector<std::vector<int>> extensions;
  std::vector<double> edge_sum;
  std::vector<long> edge_count;
};

LocalDecode decode_local(const ProbMatrix& prob, int n, ClassId cls, double k) {
  LocalDecode d;
  BinaryMatrix strong = strong_matrix(prob, k, n);
  d.clusters = connected_components(strong, n);
  if (admits_extensions(cls)) {
    d.extensions = resolve_weak(prob, strong, d.clusters, n);
  } else {
    d.extensions.assign(d.clusters.size(), {});
  }
  d.edge_sum.assign(d.clusters.size(), 0.0);
  d.edge_count.assign(d.clusters.size(), 0);
  for (std::size_t c = 0; c < d.clusters.size(); ++c) {
    const auto& m = d.clusters[c];
    for (std::size_t a = 0; a < m.size(); ++a)
      for (std::size_t b = a + 1; b < m.size(); ++b)
        if (strong(m[a], m[b])) {
          d.edge_sum[c] += 0.5 * (prob(m[a], m[b]) + prob(m[b], m[a]));
          ++d.edge_count[c];
        }
  }
  return d;
}

// Merges window-level decodes (already mapped to page indices) into page clusters.
ClassClusters merge_windows(const std::vector<LocalDecode>& windows, int n, const std::vector<Word>& words,
                            ClassId cls) {
  UnionFind uf(n);
  std::vector<bool> clustered(n, false);
  for (const auto& w : windows)
    for (const auto& c : w.clusters)
      for (int i : c) {
        clustered[i] = true;
        uf.unite(c.front(), i);
      }

  std::map<int, int> root_to_cluster;  // ordered by root = smallest member
  for (int i = 0; i < n; ++i)
    if (clustered[i]) root_to_cluster.emplace(uf.find(i), 0);
  int next = 0;
  for (auto& [root, idx] : root_to_cluster) idx = next++;

  std::vector<std::vector<int>> clusters(next), extensions(next);
  std::vector<double> sum(next, 0.0);
  std::vector<long> count(next, 0);
  for (int i = 0; i < n; ++i)
    if (clustered[i]) clusters[root_to_cluster[uf.find(i)]].push_back(i);
  for (const auto& w : windows)
    for (std::size_t c = 0; c < w.clusters.size(); ++c) {
      int idx = root_to_cluster[uf.find(w.clusters[c].front())];
      extensions[idx].insert(extensions[idx].end(), w.extensions[c].begin(), w.extensions[c].end());
      sum[idx] += w.edge_sum[c];
      count[idx] += w.edge_count[c];
    }

  ClassClusters out;
  for (int c = 0; c < next; ++c) {
    auto& ext = extensions[c];
    std::sort(ext.begin(), ext.end());
    ext.erase(std::unique(ext.begin(), ext.end()), ext.end());
    std::vector<int> kept;
    std::set_difference(ext.begin(), ext.end(), clusters[c].begin(), clusters[c].end(), std::back_inserter(kept));
    out.clusters.push_back(std::move(clusters[c]));
    out.extensions.push_back(std::move(kept));
    out.confidence.push_back(count[c] > 0 ? sum[c] / static_cast<double>(count[c]) : 1.0);
  }
  out.boxes = clusters_to_boxes(out.clusters, out.extensions, words, cls);
  out.spanning = spanning_flags(out.clusters, out.extensions);
  return out;
}

ClassClusters relabel(const ClassClusters& in, const std::vector<int>& to_original, const std::vector<Word>& words,
                      ClassId cls) {
  std::vector<std::size_t> order(in.size());
  std::vector<std::vector<int>> clusters(in.size()), extensions(in.size());
  for (std::size_t c = 0; c < in.size(); ++c) {
    for (int i : in.clusters[c]) clusters[c].push_back(to_original[i]);
    for (int i : in.extensions[c]) extensions[c].push_back(to_original[i]);
    std::sort(clusters[c].begin(), clusters[c].end());
    std::sort(extensions[c].begin(), extensions[c].end());
  }
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return clusters[a].front() < clusters[b].front(); });
  ClassClusters out;
  for (std::size_t c : order) {
    out.clusters.push_back(std::move(clusters[c]));
    out.extensions.push_back(std::move(extensions[c]));
    out.confidence.push_back(in.confidence[c]);
  }
  out.boxes = clusters_to_boxes(out.clusters, out.extensions, words, cls);
  out.spanning = spanning_flags(out.clusters, out.extensions);
  return out;
}

}  // namespace

ProbMatrix sigmoid(const Matrix<double>& logits) {
  ProbMatrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double x = logits.values()[i];
    p.values()[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return p;
}

ProbSet sigmoid(const LogitSet& logits) {
  ProbSet out;
  for (ClassId c : kAllClasses) out[c] = sigmoid(logits[c]);
  return out;
}

BinaryMatrix strong_matrix(const ProbMatrix& prob, double k, int num_words) {
  if (prob.rows() != prob.cols()) throw ShapeError("strong_matrix: probability matrix must be square");
  const int n = resolve_n(num_words, prob.rows());
  BinaryMatrix s = BinaryMatrix::square(prob.rows(), 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s(i, j) = 0.5 * (prob(i, j) + prob(j, i)) >= k ? 1 : 0;
  return s;
}

std::vector<std::vector<int>> connected_components(const BinaryMatrix& strong, int num_words) {
  const int n = resolve_n(num_words, strong.rows());
  UnionFind uf(n);
  std::vector<bool> clustered(n, false);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (!strong(i, j)) continue;
      clustered[i] = clustered[j] = true;
      if (i != j) uf.unite(i, j);
    }
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i)
    if (clustered[i]) groups[uf.find(i)].push_back(i);
  std::vector<std::vector<int>> out;
  out.reserve(groups.size());
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  return out;
}

std::vector<std::vector<int>> resolve_weak(const ProbMatrix& prob, const BinaryMatrix& strong,
                                           const std::vector<std::vector<int>>& clusters, int num_words) {
  const int n = resolve_n(num_words, prob.rows());
  std::vector<std::vector<int>> out(clusters.size());
  std::vector<char> in_cluster(n, 0);
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto& members = clusters[c];
    for (int i : members) in_cluster[i] = 1;
    for (int j = 0; j < n; ++j) {
      if (in_cluster[j]) continue;
      std::size_t votes = 0;
      for (int i : members) {
        double raw = strong(i, j) ? 0.0 : prob(i, j);
        if (raw > kWeakThreshold) ++votes;
      }
      if (2 * votes > members.size()) out[c].push_back(j);
    }
    for (int i : members) in_cluster[i] = 0;
  }
  return out;
}

bool admits_extensions(ClassId cls) {
  return cls == ClassId::Row || cls == ClassId::Column || cls == ClassId::Header;
}

std::vector<Box> clusters_to_boxes(const std::vector<std::vector<int>>& clusters,
                                   const std::vector<std::vector<int>>& extensions, const std::vector<Word>& words,
                                   ClassId cls) {
  std::vector<Box> out;
  out.reserve(clusters.size());
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (clusters[c].empty()) throw Error("clusters_to_boxes: empty cluster");
    Box b = words.at(clusters[c].front()).box;
    for (int i : clusters[c]) b = b.united(words.at(i).box);
    if (admits_extensions(cls) && c < extensions.size()) {
      for (int i : extensions[c]) {
        const Box& e = words.at(i).box;
        if (cls == ClassId::Column) {
          b.y0 = std::min(b.y0, e.y0);
          b.y1 = std::max(b.y1, e.y1);
        } else {
          b.x0 = std::min(b.x0, e.x0);
          b.x1 = std::max(b.x1, e.x1);
        }
      }
    }
    out.push_back(b);
  }
  return out;
}

std::vector<bool> spanning_flags(const std::vector<std::vector<int>>& clusters,
                                 const std::vector<std::vector<int>>& extensions) {
  std::map<int, std::vector<std::size_t>> attached_to;
  for (std::size_t c = 0; c < extensions.size(); ++c)
    for (int i : extensions[c]) attached_to[i].push_back(c);
  std::vector<bool> out(clusters.size(), false);
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    bool all = !clusters[c].empty();
    for (int i : clusters[c]) {
      auto it = attached_to.find(i);
      bool elsewhere = false;
      if (it != attached_to.end())
        for (std::size_t owner : it->second) elsewhere = elsewhere || owner != c;
      if (!elsewhere) {
        all = false;
        break;
      }
    }
    out[c] = all;
  }
  return out;
}

ClusterPrediction decode(const ProbSet& probs, const std::vector<Word>& words, const DecodeOptions& options) {
  const int n = static_cast<int>(words.size());
  ClusterPrediction out;
  for (ClassId c : kAllClasses) {
    if (static_cast<int>(probs[c].rows()) < n)
      throw ShapeError("decode: probability matrix smaller than the word count");
    std::vector<LocalDecode> one{decode_local(probs[c], n, c, options.threshold[c])};
    out[c] = merge_windows(one, n, words, c);
  }
  return out;
}

ProbabilityProvider model_provider(const Model& model, const Vocabulary& vocab) {
  return [&model, &vocab](const Page& canonical, std::span<const int> positions) {
    Page sub{canonical.width, canonical.height, {}};
    sub.words.reserve(positions.size());
    for (int p : positions) sub.words.push_back(canonical.words.at(p));
    auto features = encode_words(sub, vocab);
    return sigmoid(model.forward(features));
  };
}

ProbabilityProvider oracle_provider(const PageAnnotation& annotation) {
  return [annotation](const Page& canonical, std::span<const int> positions) {
    const int n = static_cast<int>(canonical.words.size());
    const ClusterSets clusters = ground_truth_clusters(canonical.words, annotation);
    const std::size_t m = positions.size();
    ProbSet out;
    for (ClassId c : kAllClasses) {
      BinaryMatrix full = clusters_to_adjacency(clusters[c], n);
      ProbMatrix p = ProbMatrix::square(m, 0.0);
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b) p(a, b) = full(positions[a], positions[b]);
      out[c] = std::move(p);
    }
    return out;
  };
}

ProbabilityProvider caching_provider(ProbabilityProvider inner) {
  struct Cache {
    std::mutex mutex;
    std::map<std::string, ProbSet> entries;
  };
  auto cache = std::make_shared<Cache>();
  return [inner = std::move(inner), cache](const Page& canonical, std::span<const int> positions) {
    // Keyed by content so distinct pages never collide.
    std::string key;
    for (int p : positions) {
      const Word& w = canonical.words.at(p);
      key += std::to_string(p) + '|' + w.text + '|' + std::to_string(w.box.x0) + ',' + std::to_string(w.box.y0) +
             ',' + std::to_string(w.box.x1) + ',' + std::to_string(w.box.y1) + '\n';
    }
    {
      std::lock_guard<std::mutex> lock(cache->mutex);
      auto it = cache->entries.find(key);
      if (it != cache->entries.end()) return it->second;
    }
    ProbSet probs = inner(canonical, positions);
    std::lock_guard<std::mutex> lock(cache->mutex);
    cache->entries.emplace(std::move(key), probs);
    return probs;
  };
}

std::vector<int> window_starts(int n, int max_seq_len) {
  if (max_seq_len <= 0) throw ConfigError("max_seq_len must be positive");
  if (n <= max_seq_len) return {0};
  const int stride = std::max(1, max_seq_len / 2);
  std::vector<int> starts;
  for (int s = 0;; s += stride) {
    if (s + max_seq_len >= n) {
      starts.push_back(n - max_seq_len);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

ClusterPrediction predict_page(const Page& page, const ProbabilityProvider& provider,
                               const DecodeOptions& options) {
  const int n = static_cast<int>(page.words.size());
  ClusterPrediction out;
  if (n == 0) return out;
  const std::vector<int> order = canonical_order(page);
  Page canonical{page.width, page.height, {}};
  canonical.words.reserve(n);
  for (int i : order) canonical.words.push_back(page.words[i]);

  const int len = std::min(n, options.max_seq_len);
  PerClass<std::vector<LocalDecode>> windows;
  for (int start : window_starts(n, options.max_seq_len)) {
    std::vector<int> positions(len);
    std::iota(positions.begin(), positions.end(), start);
    ProbSet probs = provider(canonical, positions);
    for (ClassId c : kAllClasses) {
      if (static_cast<int>(probs[c].rows()) < len || static_cast<int>(probs[c].cols()) < len)
        throw ShapeError("predict_page: provider returned a matrix smaller than the window");
      LocalDecode d = decode_local(probs[c], len, c, options.threshold[c]);
      for (auto& cl : d.clusters)
        for (int& i : cl) i += start;
      for (auto& ext : d.extensions)
        for (int& i : ext) i += start;
      windows[c].push_back(std::move(d));
    }
  }
  for (ClassId c : kAllClasses) {
    ClassClusters merged = merge_windows(windows[c], n, canonical.words, c);
    out[c] = relabel(merged, order, page.words, c);
  }
  return out;
}

std::vector<ClusterSpec> to_cluster_specs(const ClassClusters& cc) {
  std::vector<ClusterSpec> out;
  out.reserve(cc.size());
  for (std::size_t c = 0; c < cc.size(); ++c)
    out.push_back({cc.clusters[c], c < cc.extensions.size() ? cc.extensions[c] : std::vector<int>{},
                   c < cc.spanning.size() && cc.spanning[c]});
  return out;
}

nlohmann::json prediction_to_json(const ClusterPrediction& p, int num_words) {
  nlohmann::json j;
  j["num_words"] = num_words;
  for (ClassId c : kAllClasses) {
    auto arr = nlohmann::json::array();
    const auto& cc = p[c];
    for (std::size_t i = 0; i < cc.size(); ++i)
      arr.push_back({{"word_indices", cc.clusters[i]},
                     {"extension_indices", cc.extensions[i]},
                     {"box", to_json(cc.boxes[i])},
                     {"confidence", cc.confidence[i]},
                     {"spanning", static_cast<bool>(cc.spanning[i])}});
    j[std::string(to_string(c))] = std::move(arr);
  }
  return j;
}

ClusterPrediction prediction_from_json(const nlohmann::json& j) {
  ClusterPrediction p;
  try {
    for (ClassId c : kAllClasses) {
      const std::string key(to_string(c));
      if (!j.contains(key)) continue;
      auto& cc = p[c];
      for (const auto& e : j.at(key)) {
        cc.clusters.push_back(e.at("word_indices").get<std::vector<int>>());
        cc.extensions.push_back(e.value("extension_indices", std::vector<int>{}));
        cc.boxes.push_back(box_from_json(e.at("box")));
        cc.confidence.push_back(e.value("confidence", 1.0));
        cc.spanning.push_back(e.value("spanning", false));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("prediction JSON: ") + e.what());
  }
  return p;
}

}  // namespace clustertab
