#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ego/error.hpp"

namespace ego::nce {

// Row-major batch of embeddings. `normalized` records that every row has
// been passed through l2_normalize; the loss entry points that require unit
// rows check the flag, not the numbers.
struct EmbeddingMatrix {
  Eigen::MatrixXd values;  // rows x dim
  bool normalized = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

// Canonical noun/verb tags attached to one batch row.
struct RowTags {
  std::set<std::string> nouns;
  std::set<std::string> verbs;
};

// A contrastive batch of N clip-text pairs plus, optionally, one sampled
// scene partner per row. Partner matrices keep the N-row layout: slot i is
// the partner of row i and scene_present[i] says whether it exists. tags[i]
// and scene_tags[i] carry the narration tags of row i and its partner.
struct AugmentedBatch {
  EmbeddingMatrix video;  // N x d
  EmbeddingMatrix text;   // N x d
  std::optional<EmbeddingMatrix> scene_video;
  std::optional<EmbeddingMatrix> scene_text;
  std::vector<char> scene_present;  // size N when scene matrices are present
  std::vector<RowTags> tags;        // size N
  std::vector<RowTags> scene_tags;  // size N when scene matrices are present

  Eigen::Index base_rows() const { return video.rows(); }
  Eigen::Index present_rows() const;
};

// Dense layout the loss kernels run on: the N base rows first, then the
// present scene partners in base-row order.
struct PackedBatch {
  Eigen::MatrixXd video;  // M x d
  Eigen::MatrixXd text;   // M x d
  std::vector<RowTags> tags;
  Eigen::Index base_rows = 0;  // N; rows >= N are scene partners

  Eigen::Index rows() const { return video.rows(); }
};

// Validates the AugmentedBatch invariants and gathers it into packed form.
PackedBatch pack(const AugmentedBatch& batch);

// Symmetric M x M boolean relation: bits(i, j) says rows i and j count as
// positives of each other.
struct PositiveMask {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> bits;

  Eigen::Index size() const { return bits.rows(); }
  static PositiveMask identity(Eigen::Index n);
};

// Which rows the outer sum of the loss runs over. The augmented-batch sum
// uses every present row (scene partners are anchors with their own
// positives); the base-only mode restricts anchors to the original N rows
// for ablation. Denominators always range over every present row.
enum class AnchorMode { kAugmented, kBase };

// One direction of the objective (video-to-text or text-to-video).
struct DirectionalLoss {
  double value = 0.0;
  Eigen::MatrixXd grad_video;  // d value / d video entries, packed layout
  Eigen::MatrixXd grad_text;
  Eigen::VectorXd per_anchor;  // per-anchor -log ratio terms, each >= 0
};

struct LossResult {
  double total = 0.0;  // v2t + t2v
  double v2t = 0.0;
  double t2v = 0.0;
  Eigen::MatrixXd grad_video;  // packed layout, both directions summed
  Eigen::MatrixXd grad_text;
  Eigen::VectorXd per_anchor_v2t;
  Eigen::VectorXd per_anchor_t2v;
};

// Divides each row by max(norm, epsilon). Zero rows stay zero; when
// zero_row_count is given it receives how many rows hit the epsilon guard.
EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m, double epsilon = 1e-12,
                             int* zero_row_count = nullptr);

// anchors * targets^T. Shape error when dims differ.
Eigen::MatrixXd similarity_matrix(const EmbeddingMatrix& anchors,
                                  const EmbeddingMatrix& targets);

// bits(i, j) = rows i and j share at least one noun AND at least one verb.
// A row with an empty noun or verb set cannot share tags with anything, so
// its diagonal bit is forced true to keep every positive set non-empty.
PositiveMask build_positive_mask(std::span<const RowTags> tags);

// Negative mean log of the positive-mass softmax ratio, computed over the
// v2t similarity z(i,k) = video_i . text_k / tau:
//
//   value = (1/|A|) sum_{i in A} [ logsumexp_k(z(i,:)) -
//                                  logsumexp_{k in P_i}(z(i,:)) ]
//
// with A the anchor set picked by `mode`. The minimization form is used: the
// printed sum-of-log-ratios would be unbounded below as a maximization
// target, so the per-anchor terms here are >= 0 with equality when the
// positive set carries all denominator mass. All softmax arithmetic is
// max-shifted; raw exponentials are never summed.
//
// The mask must be M x M over the packed rows; gradients come back in the
// packed layout.
DirectionalLoss egonce_v2t(const PackedBatch& batch, const PositiveMask& mask,
                           double tau, AnchorMode mode = AnchorMode::kAugmented);

// Mirror image: anchors are texts, targets are videos.
DirectionalLoss egonce_t2v(const PackedBatch& batch, const PositiveMask& mask,
                           double tau, AnchorMode mode = AnchorMode::kAugmented);

LossResult egonce_total(const PackedBatch& batch, const PositiveMask& mask,
                        double tau, AnchorMode mode = AnchorMode::kAugmented);

// Convenience overload that packs and validates the structured batch first.
LossResult egonce_total(const AugmentedBatch& batch, const PositiveMask& mask,
                        double tau, AnchorMode mode = AnchorMode::kAugmented);

// Loss value only, no gradient allocation. Used by the finite-difference
// checker, which calls it thousands of times.
double egonce_value(const PackedBatch& batch, const PositiveMask& mask,
                    double tau, AnchorMode mode = AnchorMode::kAugmented);

// Plain InfoNCE over N aligned pairs: the only positive of row i is row i
// and there are no scene partners. Kept as an independent implementation so
// the EgoNCE reduction identity is a real cross-check rather than a tautology.
LossResult infonce(const EmbeddingMatrix& video, const EmbeddingMatrix& text,
                   double tau);

// Central-difference check of the analytic gradients over every entry of
// both packed matrices. Returns the max relative error with denominator
// max(|analytic|, |numeric|, 1e-8).
double finite_difference_check(const PackedBatch& batch,
                               const PositiveMask& mask, double tau,
                               double h = 1e-5,
                               AnchorMode mode = AnchorMode::kAugmented);

}  // namespace ego::nce
