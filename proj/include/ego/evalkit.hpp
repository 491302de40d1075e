#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ego/error.hpp"

namespace ego::eval {

// Temporal span in seconds. Degenerate spans (start == end) are tolerated by
// the IoU convention; start > end is rejected.
struct Span {
  double start_sec = 0.0;
  double end_sec = 0.0;
};

struct ScoredSpan {
  Span span;
  double score = 0.0;
};

// One prediction line: a query and its ranked proposals. For class-labelled
// tasks the label applies to every span on the line, and one query may have
// several lines (one per class).
struct TemporalPrediction {
  std::string query_id;
  std::vector<ScoredSpan> spans;  // non-increasing by score
  std::optional<std::string> label;
};

struct GroundTruthSegment {
  std::string query_id;
  Span span;
  std::optional<std::string> label;
};

enum class McqKind { kInterVideo, kIntraVideo };

struct McqQuestion {
  Eigen::VectorXd query;
  std::vector<Eigen::VectorXd> candidates;  // >= 2
  int answer_index = 0;
  McqKind kind = McqKind::kInterVideo;
};

// |a intersect b| / |a union b|; 0 when the union has zero length.
double temporal_iou(const Span& a, const Span& b);

// Fraction of ground-truth queries whose top-k predicted spans contain at
// least one span with IoU >= iou_threshold against any of that query's
// ground-truth segments. Every gt query must have a prediction entry, which
// may be empty.
double recall_at_k_iou(std::span<const TemporalPrediction> predictions,
                       std::span<const GroundTruthSegment> ground_truth, int k,
                       double iou_threshold);

struct MapResult {
  std::vector<double> per_threshold;  // aligned with the input threshold list
  double average = 0.0;
};

// Detection-style mAP: per class and IoU threshold, predictions are matched
// greedily in score order against unmatched same-class, same-query ground
// truths; AP is the all-point interpolated area under precision-recall and
// mAP averages over classes that have at least one ground truth. Labels are
// required on every record; an empty ground-truth set has no defined value.
MapResult mean_average_precision_iou(
    std::span<const TemporalPrediction> predictions,
    std::span<const GroundTruthSegment> ground_truth,
    std::span<const double> iou_thresholds);

struct McqAccuracy {
  std::optional<double> inter;  // absent when no questions of the kind exist
  std::optional<double> intra;
  std::size_t inter_count = 0;
  std::size_t intra_count = 0;
};

// Argmax of query . candidate, ties to the lowest index.
int mcq_predict(const McqQuestion& question);

McqAccuracy mcq_accuracy(std::span<const McqQuestion> questions);

double binary_accuracy(std::span<const int> predicted,
                       std::span<const int> actual);

// |pred_frame - gt_frame| / clip_fps, in seconds.
double pnr_error_seconds(int pred_frame, int gt_frame, double clip_fps);

double pnr_mean_error(std::span<const int> pred_frames,
                      std::span<const int> gt_frames, double clip_fps);

double pnr_median_error(std::span<const int> pred_frames,
                        std::span<const int> gt_frames, double clip_fps);

}  // namespace ego::eval
