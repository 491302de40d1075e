#include "ego/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

namespace ego::eval {

namespace {

void check_span(const Span& s, const char* what) {
  if (!(s.start_sec <= s.end_sec) || !std::isfinite(s.start_sec) ||
      !std::isfinite(s.end_sec)) {
    fail(ErrorKind::kValidation, std::string(what) + ": invalid span [" +
                                     std::to_string(s.start_sec) + ", " +
                                     std::to_string(s.end_sec) + "]");
  }
}

// Spans of one query pooled across lines and re-ranked by score. Stable:
// equal scores keep input order.
std::vector<ScoredSpan> ranked_spans_for_query(
    std::span<const TemporalPrediction> predictions,
    const std::string& query_id) {
  std::vector<ScoredSpan> spans;
  for (const auto& pred : predictions) {
    if (pred.query_id != query_id) continue;
    spans.insert(spans.end(), pred.spans.begin(), pred.spans.end());
  }
  std::stable_sort(spans.begin(), spans.end(),
                   [](const ScoredSpan& a, const ScoredSpan& b) {
                     return a.score > b.score;
                   });
  return spans;
}

struct Detection {
  std::string query_id;
  Span span;
  double score;
};

// All-point interpolated AP from per-detection TP flags already in rank
// order.
double average_precision(const std::vector<char>& is_tp, std::size_t num_gt) {
  std::vector<double> precision(is_tp.size());
  std::vector<double> recall(is_tp.size());
  double tp = 0.0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    if (is_tp[i]) tp += 1.0;
    precision[i] = tp / static_cast<double>(i + 1);
    recall[i] = tp / static_cast<double>(num_gt);
  }
  // Precision envelope, then area under the exact step curve.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace

double temporal_iou(const Span& a, const Span& b) {
  check_span(a, "temporal_iou");
  check_span(b, "temporal_iou");
  const double inter = std::max(
      0.0, std::min(a.end_sec, b.end_sec) - std::max(a.start_sec, b.start_sec));
  const double len_a = a.end_sec - a.start_sec;
  const double len_b = b.end_sec - b.start_sec;
  const double uni = len_a + len_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double recall_at_k_iou(std::span<const TemporalPrediction> predictions,
                       std::span<const GroundTruthSegment> ground_truth, int k,
                       double iou_threshold) {
  if (k < 1) {
    fail(ErrorKind::kInvalidInput, "recall_at_k_iou: k must be >= 1");
  }
  if (ground_truth.empty()) {
    fail(ErrorKind::kUndefinedMetric,
         "recall_at_k_iou: no ground-truth queries");
  }

  std::map<std::string, std::vector<Span>> gt_by_query;
  for (const auto& gt : ground_truth) {
    check_span(gt.span, "recall_at_k_iou ground truth");
    gt_by_query[gt.query_id].push_back(gt.span);
  }
  std::set<std::string> predicted_queries;
  for (const auto& pred : predictions) predicted_queries.insert(pred.query_id);
  for (const auto& [query_id, _] : gt_by_query) {
    if (!predicted_queries.count(query_id)) {
      fail(ErrorKind::kValidation,
           "recall_at_k_iou: no prediction entry for query '" + query_id + "'");
    }
  }

  std::size_t hits = 0;
  for (const auto& [query_id, gt_spans] : gt_by_query) {
    const auto ranked = ranked_spans_for_query(predictions, query_id);
    const std::size_t top_k =
        std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
    bool hit = false;
    for (std::size_t i = 0; i < top_k && !hit; ++i) {
      for (const Span& gt : gt_spans) {
        if (temporal_iou(ranked[i].span, gt) >= iou_threshold) {
          hit = true;
          break;
        }
      }
    }
    if (hit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gt_by_query.size());
}

MapResult mean_average_precision_iou(
    std::span<const TemporalPrediction> predictions,
    std::span<const GroundTruthSegment> ground_truth,
    std::span<const double> iou_thresholds) {
  if (iou_thresholds.empty()) {
    fail(ErrorKind::kInvalidInput, "mean_average_precision_iou: no thresholds");
  }
  if (ground_truth.empty()) {
    fail(ErrorKind::kUndefinedMetric,
         "mean_average_precision_iou: empty ground truth");
  }
  for (const auto& gt : ground_truth) {
    check_span(gt.span, "mean_average_precision_iou ground truth");
    if (!gt.label) {
      fail(ErrorKind::kSchema,
           "mean_average_precision_iou: ground truth for '" + gt.query_id +
               "' has no class label");
    }
  }

  // Detections bucketed per class, kept in input order for stable ranking.
  std::map<std::string, std::vector<Detection>> detections_by_class;
  for (const auto& pred : predictions) {
    if (!pred.label) {
      fail(ErrorKind::kSchema, "mean_average_precision_iou: prediction for '" +
                                   pred.query_id + "' has no class label");
    }
    for (const auto& scored : pred.spans) {
      check_span(scored.span, "mean_average_precision_iou prediction");
      detections_by_class[*pred.label].push_back(
          {pred.query_id, scored.span, scored.score});
    }
  }
  for (auto& [label, dets] : detections_by_class) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) {
                       return a.score > b.score;
                     });
  }

  // Ground truths per class, indexed by query for matching.
  std::map<std::string, std::vector<const GroundTruthSegment*>> gt_by_class;
  for (const auto& gt : ground_truth) gt_by_class[*gt.label].push_back(&gt);

  MapResult result;
  result.per_threshold.reserve(iou_thresholds.size());
  for (double threshold : iou_thresholds) {
    double ap_sum = 0.0;
    for (const auto& [label, gts] : gt_by_class) {
      std::vector<char> matched(gts.size(), 0);
      std::vector<char> is_tp;
      auto dets_it = detections_by_class.find(label);
      if (dets_it != detections_by_class.end()) {
        is_tp.reserve(dets_it->second.size());
        for (const Detection& det : dets_it->second) {
          // Best unmatched same-query ground truth at or above threshold.
          std::size_t best = gts.size();
          double best_iou = -1.0;
          for (std::size_t g = 0; g < gts.size(); ++g) {
            if (matched[g] || gts[g]->query_id != det.query_id) continue;
            const double iou = temporal_iou(det.span, gts[g]->span);
            if (iou >= threshold && iou > best_iou) {
              best_iou = iou;
              best = g;
            }
          }
          if (best < gts.size()) {
            matched[best] = 1;
            is_tp.push_back(1);
          } else {
            is_tp.push_back(0);
          }
        }
      }
      ap_sum += average_precision(is_tp, gts.size());
    }
    result.per_threshold.push_back(ap_sum /
                                   static_cast<double>(gt_by_class.size()));
  }
  double total = 0.0;
  for (double v : result.per_threshold) total += v;
  result.average = total / static_cast<double>(result.per_threshold.size());
  return result;
}

int mcq_predict(const McqQuestion& question) {
  if (question.candidates.size() < 2) {
    fail(ErrorKind::kValidation, "mcq question needs at least 2 candidates");
  }
  int best = 0;
  double best_score = question.query.dot(question.candidates[0]);
  for (std::size_t i = 1; i < question.candidates.size(); ++i) {
    const double score = question.query.dot(question.candidates[i]);
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(i);
    }
  }
  return best;
}

McqAccuracy mcq_accuracy(std::span<const McqQuestion> questions) {
  std::size_t inter_total = 0, inter_correct = 0;
  std::size_t intra_total = 0, intra_correct = 0;
  for (const auto& q : questions) {
    if (q.answer_index < 0 ||
        q.answer_index >= static_cast<int>(q.candidates.size())) {
      fail(ErrorKind::kValidation, "mcq answer_index out of range");
    }
    const bool correct = mcq_predict(q) == q.answer_index;
    if (q.kind == McqKind::kInterVideo) {
      ++inter_total;
      inter_correct += correct;
    } else {
      ++intra_total;
      intra_correct += correct;
    }
  }
  McqAccuracy acc;
  acc.inter_count = inter_total;
  acc.intra_count = intra_total;
  if (inter_total > 0) {
    acc.inter = static_cast<double>(inter_correct) /
                static_cast<double>(inter_total);
  }
  if (intra_total > 0) {
    acc.intra = static_cast<double>(intra_correct) /
                static_cast<double>(intra_total);
  }
  return acc;
}

double binary_accuracy(std::span<const int> predicted,
                       std::span<const int> actual) {
  if (predicted.size() != actual.size()) {
    fail(ErrorKind::kValidation, "binary_accuracy: length mismatch (" +
                                     std::to_string(predicted.size()) + " vs " +
                                     std::to_string(actual.size()) + ")");
  }
  if (predicted.empty()) {
    fail(ErrorKind::kUndefinedMetric, "binary_accuracy: no samples");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    correct += predicted[i] == actual[i];
  }
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

double pnr_error_seconds(int pred_frame, int gt_frame, double clip_fps) {
  if (!(clip_fps > 0.0)) {
    fail(ErrorKind::kInvalidInput, "pnr_error: clip_fps must be > 0");
  }
  return std::abs(pred_frame - gt_frame) / clip_fps;
}

namespace {

std::vector<double> pnr_errors(std::span<const int> pred_frames,
                               std::span<const int> gt_frames,
                               double clip_fps) {
  if (pred_frames.size() != gt_frames.size()) {
    fail(ErrorKind::kValidation, "pnr error: length mismatch");
  }
  if (pred_frames.empty()) {
    fail(ErrorKind::kUndefinedMetric, "pnr error: no clips");
  }
  std::vector<double> errors(pred_frames.size());
  for (std::size_t i = 0; i < pred_frames.size(); ++i) {
    errors[i] = pnr_error_seconds(pred_frames[i], gt_frames[i], clip_fps);
  }
  return errors;
}

}  // namespace

double pnr_mean_error(std::span<const int> pred_frames,
                      std::span<const int> gt_frames, double clip_fps) {
  const auto errors = pnr_errors(pred_frames, gt_frames, clip_fps);
  double total = 0.0;
  for (double e : errors) total += e;
  return total / static_cast<double>(errors.size());
}

double pnr_median_error(std::span<const int> pred_frames,
                        std::span<const int> gt_frames, double clip_fps) {
  auto errors = pnr_errors(pred_frames, gt_frames, clip_fps);
  std::sort(errors.begin(), errors.end());
  const std::size_t n = errors.size();
  return n % 2 == 1 ? errors[n / 2]
                    : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
}

}  // namespace ego::eval
