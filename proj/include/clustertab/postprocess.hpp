#pragma once

#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "clustertab/docmodel.hpp"
#include "clustertab/labels.hpp"
#include "clustertab/matrix.hpp"
#include "clustertab/model.hpp"
#include "clustertab/tokenizer.hpp"

namespace clustertab {

inline constexpr double kDefaultThreshold = 0.9;
inline constexpr double kWeakThreshold = 0.5;

/// Decoded clusters of one class. All vectors are parallel, one entry per cluster.
struct ClassClusters {
  std::vector<std::vector<int>> clusters;    // sorted word indices, pairwise disjoint
  std::vector<std::vector<int>> extensions;  // weakly attached words, disjoint from the owner
  std::vector<Box> boxes;
  std::vector<double> confidence;
  std::vector<bool> spanning;  // every member is attached to another cluster

  std::size_t size() const { return clusters.size(); }
  bool operator==(const ClassClusters&) const = default;
};

using ClusterPrediction = PerClass<ClassClusters>;
using ProbSet = PerClass<ProbMatrix>;

ProbMatrix sigmoid(const Matrix<double>& logits);
ProbSet sigmoid(const LogitSet& logits);

/// S[i,j] = ((p[i,j] + p[j,i]) / 2 >= k) for i, j < num_words; false elsewhere.
BinaryMatrix strong_matrix(const ProbMatrix& prob, double k, int num_words = -1);

/// Components over off-diagonal edges plus self-edge singletons; isolated
/// words without a self-edge stay unclustered. Clusters are ordered by their
/// smallest member.
std::vector<std::vector<int>> connected_components(const BinaryMatrix& strong, int num_words = -1);

/// Words attached to each cluster by majority vote of raw one-directional
/// probabilities above 0.5, ignoring strong entries.
std::vector<std::vector<int>> resolve_weak(const ProbMatrix& prob, const BinaryMatrix& strong,
                                           const std::vector<std::vector<int>>& clusters, int num_words = -1);

/// Member hull, grown by extension words along x for rows and headers and
/// along y for columns. Tables and cells ignore extensions.
std::vector<Box> clusters_to_boxes(const std::vector<std::vector<int>>& clusters,
                                   const std::vector<std::vector<int>>& extensions, const std::vector<Word>& words,
                                   ClassId cls);

/// True for clusters whose every member is an extension of some other cluster.
std::vector<bool> spanning_flags(const std::vector<std::vector<int>>& clusters,
                                 const std::vector<std::vector<int>>& extensions);

bool admits_extensions(ClassId cls);

struct DecodeOptions {
  PerClass<double> threshold{{kDefaultThreshold, kDefaultThreshold, kDefaultThreshold, kDefaultThreshold,
                              kDefaultThreshold}};
  int max_seq_len = 1000;

  void set_threshold(double k) {
    for (auto& t : threshold) t = k;
  }
};

/// Full decode of one page's probabilities (indices refer to `words`).
ClusterPrediction decode(const ProbSet& probs, const std::vector<Word>& words, const DecodeOptions& options);

/// Supplies probabilities for a subset of a canonical-order page. `positions`
/// are increasing indices into `canonical.words`; the result is indexed by
/// position within the subset.
using ProbabilityProvider = std::function<ProbSet(const Page& canonical, std::span<const int> positions)>;

ProbabilityProvider model_provider(const Model& model, const Vocabulary& vocab);
/// Ground-truth adjacency served as 0/1 probabilities.
ProbabilityProvider oracle_provider(const PageAnnotation& annotation);
/// Memoises another provider by position list, for repeated decoding at several thresholds.
ProbabilityProvider caching_provider(ProbabilityProvider inner);

/// Start offsets of the windows covering n words: stride max/2, the last
/// window ending at n.
std::vector<int> window_starts(int n, int max_seq_len);

/// Decodes a page of any length. Pages longer than max_seq_len are split into
/// canonical-order windows; window clusters sharing a word are merged and
/// extensions unioned. Word indices in the result refer to `page.words`.
ClusterPrediction predict_page(const Page& page, const ProbabilityProvider& provider, const DecodeOptions& options);

/// Converts a decoded class into the ClusterSpec form used by the label builder.
std::vector<ClusterSpec> to_cluster_specs(const ClassClusters& cc);

nlohmann::json prediction_to_json(const ClusterPrediction& p, int num_words);
ClusterPrediction prediction_from_json(const nlohmann::json& j);

}  // namespace clustertab
