#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "ego/corpus.hpp"
#include "ego/egonce.hpp"
#include "ego/evalkit.hpp"

namespace ego::train {

// Linear map from precomputed features into the shared embedding space.
// Output rows are L2-normalized by forward().
struct ProjectionHead {
  Eigen::MatrixXd weight;  // d_in x d_out
  Eigen::VectorXd bias;    // d_out

  Eigen::Index input_dim() const { return weight.rows(); }
  Eigen::Index output_dim() const { return weight.cols(); }

  static ProjectionHead init(Eigen::Index d_in, Eigen::Index d_out,
                             std::uint64_t seed);
};

struct DualHeads {
  ProjectionHead video;
  ProjectionHead text;
};

// features * weight + bias, rows L2-normalized.
nce::EmbeddingMatrix forward(const ProjectionHead& head,
                             const Eigen::MatrixXd& features);

struct AdamConfig {
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment accumulators for one (weight, bias) pair.
struct AdamState {
  AdamConfig config;
  Eigen::MatrixXd m_weight, v_weight;
  Eigen::VectorXd m_bias, v_bias;
  long step = 0;

  static AdamState init(Eigen::Index d_in, Eigen::Index d_out,
                        const AdamConfig& config);
};

// One bias-corrected Adam update, applied in place.
void adam_step(Eigen::MatrixXd& weight, Eigen::VectorXd& bias, AdamState& state,
               const Eigen::MatrixXd& grad_weight,
               const Eigen::VectorXd& grad_bias);

enum class Objective { kEgoNce, kInfoNce };

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

// Desk-scale corpus with controllable noun/verb cluster structure. Each clip
// belongs to one (noun, verb) cluster; its video and text features are the
// cluster centroids from two independent centroid families plus seeded
// Gaussian noise. Clips are spaced 10 s apart so scene negatives always
// exist under the default 60 s gap.
struct SyntheticCorpusSpec {
  int num_videos = 20;
  int clips_per_video = 30;
  int noun_cluster_count = 4;
  int verb_cluster_count = 3;
  int feature_dim = 64;
  double noise_scale = 0.25;
  std::uint64_t seed = 0;
};

// Precomputed features plus the clip metadata needed for sampling. Row i of
// both feature matrices belongs to pairs[i].
struct FeatureCorpus {
  std::vector<corpus::ClipTextPair> pairs;
  Eigen::MatrixXd video_features;  // num_clips x d_in
  Eigen::MatrixXd text_features;
  corpus::SceneAdjacencyIndex adjacency;
  std::unordered_map<std::string, int> row_by_pair_id;

  Eigen::Index size() const { return video_features.rows(); }
  Eigen::Index feature_dim() const { return video_features.cols(); }
  nce::RowTags tags_of(int row) const;

  // Rebuilds adjacency and the pair_id -> row lookup from `pairs`.
  void index_rows();
};

struct SyntheticCorpus {
  FeatureCorpus corpus;
  std::vector<int> noun_label;  // per clip
  std::vector<int> verb_label;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

// ---------------------------------------------------------------------------
// Contrastive training
// ---------------------------------------------------------------------------

struct StepGradients {
  nce::LossResult loss;
  Eigen::MatrixXd grad_video_weight;
  Eigen::VectorXd grad_video_bias;
  Eigen::MatrixXd grad_text_weight;
  Eigen::VectorXd grad_text_bias;
  double missing_partner_fraction = 0.0;
};

// Loss and exact parameter gradients for one batch: embedding gradients are
// chained through the row-normalization Jacobian (I - u u^T)/||y|| and the
// linear map. Scene partners (EgoNCE only) are drawn per row from the
// adjacency index, deterministically in step_seed and independent of the
// head parameters. Non-finite loss raises a numeric error naming the
// offending anchor.
StepGradients compute_step_gradients(
    const DualHeads& heads, const FeatureCorpus& corpus,
    std::span<const int> batch_rows, Objective objective, double tau,
    double max_gap_sec, std::uint64_t step_seed,
    nce::AnchorMode mode = nce::AnchorMode::kAugmented);

// Loss value under the same batch assembly; used by parameter-level
// finite-difference tests.
double step_loss_value(const DualHeads& heads, const FeatureCorpus& corpus,
                       std::span<const int> batch_rows, Objective objective,
                       double tau, double max_gap_sec, std::uint64_t step_seed,
                       nce::AnchorMode mode = nce::AnchorMode::kAugmented);

struct DualAdam {
  AdamState video;
  AdamState text;
};

// compute_step_gradients + one Adam update per head (video weight, video
// bias, text weight, text bias — fixed order).
nce::LossResult train_step(DualHeads& heads, DualAdam& opt,
                           const FeatureCorpus& corpus,
                           std::span<const int> batch_rows, Objective objective,
                           double tau, double max_gap_sec,
                           std::uint64_t step_seed,
                           nce::AnchorMode mode = nce::AnchorMode::kAugmented);

// ---------------------------------------------------------------------------
// Full training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  Objective objective = Objective::kEgoNce;
  nce::AnchorMode anchor_mode = nce::AnchorMode::kAugmented;
  int epochs = 10;
  int batch_size = 64;
  int embed_dim = 256;  // common feature space
  double tau = 0.05;
  AdamConfig adam;  // learning_rate 3e-5 unless overridden
  double holdout_fraction = 0.2;
  int mcq_options = 5;
  double max_gap_sec = 60.0;
  std::uint64_t seed = 0;
};

// MCQ question at the clip-index level; embeddings are materialized against
// whatever checkpoint is being evaluated.
struct McqIndexQuestion {
  int query_row = 0;                // the clip whose narration is the query
  std::vector<int> candidate_rows;  // candidate_rows[answer_index] == query_row
  int answer_index = 0;
  eval::McqKind kind = eval::McqKind::kInterVideo;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double mcq_inter = 0.0;
  double mcq_intra = 0.0;
  double missing_partner_fraction = 0.0;
};

struct TrainResult {
  DualHeads init_heads;
  std::vector<DualHeads> epoch_heads;  // checkpoint series, one per epoch
  std::vector<EpochMetrics> metrics;
  int best_epoch = -1;  // -1 selects the initialization (epochs == 0)
  std::vector<int> holdout_rows;
  std::vector<McqIndexQuestion> questions;

  const DualHeads& best_heads() const {
    return best_epoch < 0 ? init_heads
                          : epoch_heads[static_cast<std::size_t>(best_epoch)];
  }
};

// Splits videos into train/holdout, builds the MCQ question set once, then
// runs `epochs` epochs of seeded mini-batch training with an MCQ evaluation
// after each. The best checkpoint is the epoch with the highest intra-video
// accuracy; ties go to the earliest epoch.
TrainResult train(const TrainConfig& config, const FeatureCorpus& corpus);

// One intra-video and one inter-video question per holdout clip that has
// enough distractors.
std::vector<McqIndexQuestion> build_mcq_questions(const FeatureCorpus& corpus,
                                                  std::span<const int> holdout,
                                                  int options,
                                                  std::uint64_t seed);

// Question embeddings under the given heads: the query is the clip's text
// embedding, candidates are clip video embeddings.
std::vector<eval::McqQuestion> materialize_mcq(
    const DualHeads& heads, const FeatureCorpus& corpus,
    std::span<const McqIndexQuestion> questions);

// ---------------------------------------------------------------------------
// Transfer heads
// ---------------------------------------------------------------------------

// Linear classification head fine-tuned with softmax cross-entropy. The two
// built-in tasks use 2 classes (state-change classification) and 16 classes
// (per-frame localization over 16-frame clips).
struct TransferHead {
  Eigen::MatrixXd weight;  // d_in x num_classes
  Eigen::VectorXd bias;

  Eigen::Index input_dim() const { return weight.rows(); }
  Eigen::Index num_classes() const { return weight.cols(); }

  static TransferHead init(Eigen::Index d_in, Eigen::Index num_classes,
                           std::uint64_t seed);
};

TransferHead make_oscc_head(Eigen::Index d_in, std::uint64_t seed);
TransferHead make_pnr_head(Eigen::Index d_in, std::uint64_t seed);

struct CrossEntropyResult {
  double loss = 0.0;
  Eigen::MatrixXd grad_logits;  // n x C, mean-reduced
  double accuracy = 0.0;        // argmax vs labels, ties to lowest index
};

CrossEntropyResult softmax_cross_entropy(const Eigen::MatrixXd& logits,
                                         std::span<const int> labels);

struct FinetuneResult {
  std::vector<double> accuracy_curve;  // training accuracy per epoch
  std::vector<double> loss_curve;
};

// Full-batch Adam on softmax cross-entropy. Labels must lie in
// [0, num_classes).
FinetuneResult finetune_classifier(TransferHead& head,
                                   const Eigen::MatrixXd& features,
                                   std::span<const int> labels, int epochs,
                                   double learning_rate);

}  // namespace ego::train
