#pragma once

#include <utility>
#include <vector>

#include "clustertab/docmodel.hpp"
#include "clustertab/matrix.hpp"

namespace clustertab {

/// A ground-truth group of words for one class. `extensions` are words that
/// receive one-directional edges from every member (spanning-cell words seen
/// from a row, column or header they span). `spanning` marks a group that is
/// itself a spanning cell attached to some other group of the same class.
struct ClusterSpec {
  std::vector<int> members;     // sorted
  std::vector<int> extensions;  // sorted, disjoint from members
  bool spanning = false;

  bool operator==(const ClusterSpec&) const = default;
};

using ClusterSets = PerClass<std::vector<ClusterSpec>>;

/// Exclusive word placement inside the annotation: each word goes to the
/// qualifying region with the largest overlap (ties to the lower ordinal).
struct WordPlacement {
  std::vector<int> table;   // per word, -1 when outside every table
  std::vector<int> row;     // ordinal within its table, or -1
  std::vector<int> column;
  std::vector<int> header;
  std::vector<int> span;    // spanning-cell ordinal within its table, or -1
};

WordPlacement place_words(const std::vector<Word>& words, const PageAnnotation& annotation);

/// Clusters implied by the annotation for the given words (in the order given).
/// Throws InvalidAnnotation when a spanning cell references a missing row or column.
ClusterSets ground_truth_clusters(const std::vector<Word>& words, const PageAnnotation& annotation);

struct LabelSet {
  int num_words = 0;
  int seq_len = 0;
  PerClass<BinaryMatrix> adjacency;   // seq_len x seq_len, pad rows/cols zero
  PerClass<bool> class_mask{};        // false: class excluded from the loss
  std::vector<unsigned char> pad_mask;  // 1 for real positions
};

/// Adjacency targets for the first min(words, seq_len) words of `page`, which
/// must already be in canonical order.
LabelSet build_labels(const Page& page, const PageAnnotation& annotation, int seq_len);

/// Adjacency matrix (n x n, or `size` x `size` when larger) induced by clusters.
BinaryMatrix clusters_to_adjacency(const std::vector<ClusterSpec>& clusters, int n, int size = -1);

/// Entries with M[i,j] = 1 and M[j,i] = 0, per class.
PerClass<std::vector<std::pair<int, int>>> symmetrize_check(const LabelSet& labels);

/// Per-class list of [i, j] pairs holding a 1.
nlohmann::json labels_to_json(const LabelSet& labels);

}  // namespace clustertab
