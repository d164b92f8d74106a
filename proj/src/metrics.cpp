#include "clustertab/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "clustertab/errors.hpp"

namespace clustertab {

void DiceCounts::add(const DiceCounts& other) {
  intersection += other.intersection;
  predicted += other.predicted;
  truth += other.truth;
}

double DiceCounts::score() const {
  if (predicted + truth == 0) return 1.0;
  return 2.0 * static_cast<double>(intersection) / static_cast<double>(predicted + truth);
}

DiceCounts dice_counts(const BinaryMatrix& pred, const BinaryMatrix& gt, int num_words) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeError("dice: matrices differ in shape");
  const std::size_t n = num_words < 0 ? pred.rows() : std::min<std::size_t>(num_words, pred.rows());
  const std::size_t m = num_words < 0 ? pred.cols() : std::min<std::size_t>(num_words, pred.cols());
  DiceCounts c;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const bool p = pred(i, j) != 0;
      const bool g = gt(i, j) != 0;
      c.predicted += p;
      c.truth += g;
      c.intersection += p && g;
    }
  return c;
}

double dice(const BinaryMatrix& pred, const BinaryMatrix& gt, int num_words) {
  return dice_counts(pred, gt, num_words).score();
}

std::vector<Box> shrink_boxes(const std::vector<Box>& boxes, const std::vector<Word>& words) {
  const auto members = assign_words_to_boxes(words, boxes);
  std::vector<Box> out;
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    if (members[r].empty()) continue;
    std::vector<Box> hulls;
    for (int w : members[r]) hulls.push_back(words[w].box);
    out.push_back(hull(hulls));
  }
  return out;
}

PerClass<std::vector<Box>> gt_regions(const std::vector<Word>& words, const PageAnnotation& annotation) {
  const ClusterSets clusters = ground_truth_clusters(words, annotation);
  PerClass<std::vector<Box>> out;
  for (ClassId c : kAllClasses) {
    std::vector<std::vector<int>> members, extensions;
    for (const auto& spec : clusters[c]) {
      if (spec.spanning) continue;
      members.push_back(spec.members);
      extensions.push_back(spec.extensions);
    }
    out[c] = clusters_to_boxes(members, extensions, words, c);
  }
  return out;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((10 + i) / 20.0);
  return t;
}

ApResult average_precision(const std::vector<PageDetections>& pages, int max_detections) {
  struct Det {
    double score;
    std::size_t page;
    std::size_t index;
  };
  std::vector<Det> dets;
  std::vector<std::vector<std::size_t>> kept(pages.size());
  ApResult result;
  for (std::size_t p = 0; p < pages.size(); ++p) {
    const auto& pg = pages[p];
    if (pg.scores.size() != pg.predicted.size())
      throw InvalidInput("average_precision: one score per predicted box required");
    result.num_truth += static_cast<long long>(pg.truth.size());
    std::vector<std::size_t> order(pg.predicted.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pg.scores[a] > pg.scores[b]; });
    if (max_detections >= 0 && order.size() > static_cast<std::size_t>(max_detections))
      order.resize(static_cast<std::size_t>(max_detections));
    kept[p] = order;
    for (std::size_t i : order) dets.push_back({pg.scores[i], p, i});
  }
  result.num_predicted = static_cast<long long>(dets.size());
  if (result.num_truth == 0) return result;
  result.defined = true;
  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });

  const auto thresholds = coco_iou_thresholds();
  double ap_sum = 0, recall_sum = 0;
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    const double t = thresholds[ti];
    // Per-page greedy matching in score order.
    std::vector<std::vector<char>> is_tp(pages.size());
    for (std::size_t p = 0; p < pages.size(); ++p) {
      const auto& pg = pages[p];
      std::vector<char> used(pg.truth.size(), 0);
      is_tp[p].assign(pg.predicted.size(), 0);
      for (std::size_t i : kept[p]) {
        int best = -1;
        double best_iou = t;
        for (std::size_t g = 0; g < pg.truth.size(); ++g) {
          if (used[g]) continue;
          double v = iou(pg.predicted[i], pg.truth[g]);
          if (v >= best_iou && (best < 0 || v > best_iou)) {
            best = static_cast<int>(g);
            best_iou = v;
          }
        }
        if (best >= 0) {
          used[best] = 1;
          is_tp[p][i] = 1;
        }
      }
    }
    std::vector<double> precision, recall;
    long long tp = 0, fp = 0;
    for (const Det& d : dets) {
      if (is_tp[d.page][d.index]) ++tp;
      else ++fp;
      precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(result.num_truth));
    }
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0;
    for (int r = 0; r <= 100; ++r) {
      const double level = r / 100.0;
      auto it = std::lower_bound(recall.begin(), recall.end(), level);
      if (it != recall.end()) ap += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    ap /= 101.0;
    const double final_recall = static_cast<double>(tp) / static_cast<double>(result.num_truth);
    ap_sum += ap;
    recall_sum += final_recall;
    if (ti == 0) result.ap50 = ap;
  }
  result.ap = ap_sum / static_cast<double>(thresholds.size());
  result.ar = recall_sum / static_cast<double>(thresholds.size());
  return result;
}

PageDetections detections_for(const ClassClusters& predicted, const std::vector<Box>& truth) {
  PageDetections d;
  d.truth = truth;
  for (std::size_t c = 0; c < predicted.size(); ++c) {
    if (c < predicted.spanning.size() && predicted.spanning[c]) continue;
    d.predicted.push_back(predicted.boxes[c]);
    d.scores.push_back(predicted.confidence[c]);
  }
  return d;
}

double EvalReport::mean_dice(std::span<const ClassId> which) const {
  if (which.empty()) return 0;
  double s = 0;
  for (ClassId c : which) s += classes[c].dice;
  return s / static_cast<double>(which.size());
}

double EvalReport::mean_ap50(std::span<const ClassId> which) const {
  double s = 0;
  int n = 0;
  for (ClassId c : which)
    if (classes[c].ap.defined) {
      s += classes[c].ap.ap50;
      ++n;
    }
  return n ? s / n : 0;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["num_pages"] = report.num_pages;
  nlohmann::json classes;
  for (ClassId c : kAllClasses) {
    const auto& r = report.classes[c];
    nlohmann::json e;
    e["dice"] = r.dice;
    e["pages"] = r.pages;
    e["num_gt"] = r.ap.num_truth;
    e["num_pred"] = r.ap.num_predicted;
    if (r.ap.defined) {
      e["ap"] = r.ap.ap;
      e["ap50"] = r.ap.ap50;
      e["ar"] = r.ap.ar;
    } else {
      e["ap"] = nullptr;
      e["ap50"] = nullptr;
      e["ar"] = nullptr;
    }
    classes[std::string(to_string(c))] = e;
  }
  j["classes"] = classes;
  j["detection_ap"] = report.classes[ClassId::Table].ap.defined ? nlohmann::json(report.classes[ClassId::Table].ap.ap)
                                                                 : nlohmann::json(nullptr);
  double ap = 0;
  int n = 0;
  for (ClassId c : kRecognitionClasses)
    if (report.classes[c].ap.defined) {
      ap += report.classes[c].ap.ap;
      ++n;
    }
  j["recognition_ap"] = n ? nlohmann::json(ap / n) : nlohmann::json(nullptr);
  return j;
}

std::string page_scores_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "page,class,dice,num_gt,num_pred\n";
  os << std::setprecision(10);
  for (const auto& s : report.page_scores)
    os << s.page << ',' << to_string(s.cls) << ',' << s.dice << ',' << s.num_truth << ',' << s.num_predicted
       << '\n';
  return os.str();
}

void Evaluator::add_page(const AnnotatedPage& page, const ClusterPrediction& prediction, const std::string& name) {
  const auto& words = page.page.words;
  const int n = static_cast<int>(words.size());
  const ClusterSets truth = ground_truth_clusters(words, page.annotation);
  const auto regions = gt_regions(words, page.annotation);
  for (ClassId c : kAllClasses) {
    if (page.annotation.is_masked(c)) continue;
    BinaryMatrix gt = clusters_to_adjacency(truth[c], n);
    BinaryMatrix pred = clusters_to_adjacency(to_cluster_specs(prediction[c]), n);
    DiceCounts dc = dice_counts(pred, gt, n);
    counts_[c].add(dc);
    PageDetections det = detections_for(prediction[c], regions[c]);
    page_scores_.push_back({name, c, dc.score(), det.truth.size(), det.predicted.size()});
    detections_[c].push_back(std::move(det));
    ++pages_[c];
  }
  ++num_pages_;
}

EvalReport Evaluator::report() const {
  EvalReport r;
  r.num_pages = num_pages_;
  r.page_scores = page_scores_;
  for (ClassId c : kAllClasses) {
    r.classes[c].counts = counts_[c];
    r.classes[c].dice = counts_[c].score();
    r.classes[c].ap = average_precision(detections_[c]);
    r.classes[c].pages = pages_[c];
  }
  return r;
}

}  // namespace clustertab
