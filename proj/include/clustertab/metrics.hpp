#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "clustertab/docmodel.hpp"
#include "clustertab/labels.hpp"
#include "clustertab/matrix.hpp"
#include "clustertab/postprocess.hpp"

namespace clustertab {

/// Recognition classes scored by default; the table class is the detection task.
inline constexpr std::array<ClassId, 4> kRecognitionClasses = {ClassId::Cell, ClassId::Row, ClassId::Column,
                                                               ClassId::Header};

struct DiceCounts {
  long long intersection = 0;
  long long predicted = 0;
  long long truth = 0;

  void add(const DiceCounts& other);
  /// 1.0 when both matrices are empty.
  double score() const;
};

/// Counts over the top-left num_words x num_words block (whole matrix when negative).
DiceCounts dice_counts(const BinaryMatrix& pred, const BinaryMatrix& gt, int num_words = -1);
double dice(const BinaryMatrix& pred, const BinaryMatrix& gt, int num_words = -1);

/// Each box replaced by the hull of its member words; boxes without words are dropped.
std::vector<Box> shrink_boxes(const std::vector<Box>& boxes, const std::vector<Word>& words);

/// Ground-truth boxes for evaluation: one hull per non-spanning label cluster,
/// rows and headers grown along x by spanning words, columns along y.
PerClass<std::vector<Box>> gt_regions(const std::vector<Word>& words, const PageAnnotation& annotation);

struct PageDetections {
  std::vector<Box> truth;
  std::vector<Box> predicted;
  std::vector<double> scores;
};

struct ApResult {
  double ap = 0;
  double ap50 = 0;
  double ar = 0;
  long long num_truth = 0;
  long long num_predicted = 0;
  /// False when there is no ground truth; the scores are then meaningless.
  bool defined = false;
};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

/// Single-class COCO protocol: per page the top `max_detections` by score are
/// greedily matched (highest IoU first among unmatched truths) at each
/// threshold; detections are then ranked across pages and precision is
/// interpolated at 101 recall points. AR is the mean final recall.
ApResult average_precision(const std::vector<PageDetections>& pages, int max_detections = 100);

/// Detections of one decoded class, spanning clusters excluded.
PageDetections detections_for(const ClassClusters& predicted, const std::vector<Box>& truth);

struct ClassReport {
  double dice = 1.0;
  DiceCounts counts;
  ApResult ap;
  long long pages = 0;  // pages where the class was scored
};

struct PageScore {
  std::string page;
  ClassId cls;
  double dice;
  std::size_t num_truth;
  std::size_t num_predicted;
};

struct EvalReport {
  PerClass<ClassReport> classes;
  std::size_t num_pages = 0;
  std::vector<PageScore> page_scores;

  double mean_dice(std::span<const ClassId> which) const;
  double mean_ap50(std::span<const ClassId> which) const;
};

nlohmann::json to_json(const EvalReport& report);
std::string page_scores_csv(const EvalReport& report);

/// Accumulates counts and detections over pages; classes masked on a page are skipped for it.
class Evaluator {
 public:
  /// `page` may be in any word order; prediction indices must refer to it.
  void add_page(const AnnotatedPage& page, const ClusterPrediction& prediction, const std::string& name = {});
  EvalReport report() const;

 private:
  PerClass<DiceCounts> counts_;
  PerClass<std::vector<PageDetections>> detections_;
  PerClass<long long> pages_{};
  std::vector<PageScore> page_scores_;
  std::size_t num_pages_ = 0;
};

}  // namespace clustertab
