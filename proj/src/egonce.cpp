#include "ego/egonce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ego::nce {

namespace {

bool sets_intersect(const std::set<std::string>& a,
                    const std::set<std::string>& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      return true;
    }
  }
  return false;
}

void check_tau(double tau) {
  if (!(tau > 0.0)) {
    fail(ErrorKind::kInvalidInput, "temperature must be > 0");
  }
}

// Core of both loss directions: anchors are rows of `anchor`, targets rows
// of `target`, logits z = anchor * target^T / tau. Returns the value plus
// gradients w.r.t. the anchor and target matrices.
DirectionalLoss directional_loss(const Eigen::MatrixXd& anchor,
                                 const Eigen::MatrixXd& target,
                                 const PositiveMask& mask, double tau,
                                 Eigen::Index anchor_count) {
  check_tau(tau);
  const Eigen::Index m = anchor.rows();
  if (target.rows() != m) {
    fail(ErrorKind::kShape, "anchor/target row count mismatch");
  }
  if (anchor.cols() != target.cols()) {
    fail(ErrorKind::kShape, "anchor/target dim mismatch");
  }
  if (mask.size() != m) {
    fail(ErrorKind::kShape, "positive mask size " + std::to_string(mask.size()) +
                                " != batch rows " + std::to_string(m));
  }

  const Eigen::MatrixXd logits = (anchor * target.transpose()) / tau;

  DirectionalLoss out;
  out.per_anchor = Eigen::VectorXd::Zero(anchor_count);
  // d value / d logits; rows past the anchor set stay zero.
  Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(m, m);

  const double inv_anchors = 1.0 / static_cast<double>(anchor_count);
  for (Eigen::Index i = 0; i < anchor_count; ++i) {
    const auto z = logits.row(i);

    double max_all = -std::numeric_limits<double>::infinity();
    double max_pos = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < m; ++k) {
      max_all = std::max(max_all, z(k));
      if (mask.bits(i, k)) max_pos = std::max(max_pos, z(k));
    }
    if (!std::isfinite(max_pos)) {
      fail(ErrorKind::kConfig,
           "anchor " + std::to_string(i) + " has an empty positive set");
    }

    double sum_all = 0.0;
    double sum_pos = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      sum_all += std::exp(z(k) - max_all);
      if (mask.bits(i, k)) sum_pos += std::exp(z(k) - max_pos);
    }
    // -log(pos mass / all mass), both sides as max-shifted log-sum-exp.
    out.per_anchor(i) =
        (max_all + std::log(sum_all)) - (max_pos + std::log(sum_pos));

    for (Eigen::Index k = 0; k < m; ++k) {
      const double q = std::exp(z(k) - max_all) / sum_all;
      const double p =
          mask.bits(i, k) ? std::exp(z(k) - max_pos) / sum_pos : 0.0;
      dlogits(i, k) = inv_anchors * (q - p);
    }
  }

  out.value = out.per_anchor.sum() * inv_anchors;
  out.grad_video = (dlogits * target) / tau;             // d/d anchor
  out.grad_text = (dlogits.transpose() * anchor) / tau;  // d/d target
  return out;
}

double directional_value(const Eigen::MatrixXd& anchor,
                         const Eigen::MatrixXd& target,
                         const PositiveMask& mask, double tau,
                         Eigen::Index anchor_count) {
  const Eigen::Index m = anchor.rows();
  const Eigen::MatrixXd logits = (anchor * target.transpose()) / tau;
  double total = 0.0;
  for (Eigen::Index i = 0; i < anchor_count; ++i) {
    const auto z = logits.row(i);
    double max_all = -std::numeric_limits<double>::infinity();
    double max_pos = max_all;
    for (Eigen::Index k = 0; k < m; ++k) {
      max_all = std::max(max_all, z(k));
      if (mask.bits(i, k)) max_pos = std::max(max_pos, z(k));
    }
    double sum_all = 0.0;
    double sum_pos = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      sum_all += std::exp(z(k) - max_all);
      if (mask.bits(i, k)) sum_pos += std::exp(z(k) - max_pos);
    }
    total += (max_all + std::log(sum_all)) - (max_pos + std::log(sum_pos));
  }
  return total / static_cast<double>(anchor_count);
}

Eigen::Index anchor_count_for(const PackedBatch& batch, AnchorMode mode) {
  return mode == AnchorMode::kAugmented ? batch.rows() : batch.base_rows;
}

}  // namespace

Eigen::Index AugmentedBatch::present_rows() const {
  Eigen::Index n = base_rows();
  for (char flag : scene_present) {
    if (flag) ++n;
  }
  return n;
}

PositiveMask PositiveMask::identity(Eigen::Index n) {
  PositiveMask mask;
  mask.bits.setConstant(n, n, false);
  for (Eigen::Index i = 0; i < n; ++i) mask.bits(i, i) = true;
  return mask;
}

PackedBatch pack(const AugmentedBatch& batch) {
  const Eigen::Index n = batch.base_rows();
  const Eigen::Index d = batch.video.dim();
  if (batch.text.rows() != n) {
    fail(ErrorKind::kShape, "video/text row count mismatch");
  }
  if (batch.text.dim() != d) {
    fail(ErrorKind::kShape, "video/text dim mismatch");
  }
  if (batch.tags.size() != static_cast<std::size_t>(n)) {
    fail(ErrorKind::kShape, "tags size != batch rows");
  }
  if (!batch.video.normalized || !batch.text.normalized) {
    fail(ErrorKind::kInvalidInput, "batch embeddings must be L2-normalized");
  }
  const bool has_scene = batch.scene_video.has_value();
  if (has_scene != batch.scene_text.has_value()) {
    fail(ErrorKind::kShape, "scene_video and scene_text must come together");
  }
  if (has_scene) {
    if (batch.scene_video->rows() != n || batch.scene_text->rows() != n ||
        batch.scene_video->dim() != d || batch.scene_text->dim() != d) {
      fail(ErrorKind::kShape, "scene matrices must be N x d");
    }
    if (batch.scene_present.size() != static_cast<std::size_t>(n) ||
        batch.scene_tags.size() != static_cast<std::size_t>(n)) {
      fail(ErrorKind::kShape, "scene flags/tags size != batch rows");
    }
    if (!batch.scene_video->normalized || !batch.scene_text->normalized) {
      fail(ErrorKind::kInvalidInput, "scene embeddings must be L2-normalized");
    }
  }

  PackedBatch packed;
  packed.base_rows = n;
  const Eigen::Index m = batch.present_rows();
  packed.video.resize(m, d);
  packed.text.resize(m, d);
  packed.tags.reserve(static_cast<std::size_t>(m));

  packed.video.topRows(n) = batch.video.values;
  packed.text.topRows(n) = batch.text.values;
  packed.tags.assign(batch.tags.begin(), batch.tags.end());

  Eigen::Index row = n;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!batch.scene_present.empty() && batch.scene_present[i]) {
      packed.video.row(row) = batch.scene_video->values.row(i);
      packed.text.row(row) = batch.scene_text->values.row(i);
      packed.tags.push_back(batch.scene_tags[i]);
      ++row;
    }
  }
  return packed;
}

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m, double epsilon,
                             int* zero_row_count) {
  EmbeddingMatrix out;
  out.values = m.values;
  int zeros = 0;
  for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
    const double norm = out.values.row(i).norm();
    if (norm < epsilon) ++zeros;
    out.values.row(i) /= std::max(norm, epsilon);
  }
  out.normalized = true;
  if (zero_row_count) *zero_row_count = zeros;
  return out;
}

Eigen::MatrixXd similarity_matrix(const EmbeddingMatrix& anchors,
                                  const EmbeddingMatrix& targets) {
  if (anchors.dim() != targets.dim()) {
    fail(ErrorKind::kShape, "similarity_matrix: dim mismatch (" +
                                std::to_string(anchors.dim()) + " vs " +
                                std::to_string(targets.dim()) + ")");
  }
  return anchors.values * targets.values.transpose();
}

PositiveMask build_positive_mask(std::span<const RowTags> tags) {
  if (tags.empty()) {
    fail(ErrorKind::kInvalidInput, "build_positive_mask: empty tag list");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(tags.size());
  PositiveMask mask;
  mask.bits.setConstant(n, n, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const bool positive = sets_intersect(tags[i].nouns, tags[j].nouns) &&
                            sets_intersect(tags[i].verbs, tags[j].verbs);
      mask.bits(i, j) = positive;
      mask.bits(j, i) = positive;
    }
    // Self-positive floor for rows with no usable tags; keeps every
    // anchor's positive set non-empty so the log never sees zero mass.
    mask.bits(i, i) = true;
  }
  return mask;
}

DirectionalLoss egonce_v2t(const PackedBatch& batch, const PositiveMask& mask,
                           double tau, AnchorMode mode) {
  return directional_loss(batch.video, batch.text, mask, tau,
                          anchor_count_for(batch, mode));
}

DirectionalLoss egonce_t2v(const PackedBatch& batch, const PositiveMask& mask,
                           double tau, AnchorMode mode) {
  DirectionalLoss swapped = directional_loss(batch.text, batch.video, mask, tau,
                                             anchor_count_for(batch, mode));
  // directional_loss reports grads as (anchor, target); map back.
  std::swap(swapped.grad_video, swapped.grad_text);
  return swapped;
}

LossResult egonce_total(const PackedBatch& batch, const PositiveMask& mask,
                        double tau, AnchorMode mode) {
  DirectionalLoss v2t = egonce_v2t(batch, mask, tau, mode);
  DirectionalLoss t2v = egonce_t2v(batch, mask, tau, mode);

  LossResult result;
  result.v2t = v2t.value;
  result.t2v = t2v.value;
  result.total = v2t.value + t2v.value;
  result.grad_video = v2t.grad_video + t2v.grad_video;
  result.grad_text = v2t.grad_text + t2v.grad_text;
  result.per_anchor_v2t = std::move(v2t.per_anchor);
  result.per_anchor_t2v = std::move(t2v.per_anchor);
  return result;
}

LossResult egonce_total(const AugmentedBatch& batch, const PositiveMask& mask,
                        double tau, AnchorMode mode) {
  return egonce_total(pack(batch), mask, tau, mode);
}

double egonce_value(const PackedBatch& batch, const PositiveMask& mask,
                    double tau, AnchorMode mode) {
  check_tau(tau);
  if (mask.size() != batch.rows()) {
    fail(ErrorKind::kShape, "positive mask size != batch rows");
  }
  const Eigen::Index anchors = anchor_count_for(batch, mode);
  return directional_value(batch.video, batch.text, mask, tau, anchors) +
         directional_value(batch.text, batch.video, mask, tau, anchors);
}

LossResult infonce(const EmbeddingMatrix& video, const EmbeddingMatrix& text,
                   double tau) {
  check_tau(tau);
  const Eigen::Index n = video.rows();
  if (text.rows() != n) {
    fail(ErrorKind::kShape, "infonce: video/text row count mismatch");
  }
  if (video.dim() != text.dim()) {
    fail(ErrorKind::kShape, "infonce: video/text dim mismatch");
  }
  if (n == 0) {
    fail(ErrorKind::kInvalidInput, "infonce: empty batch");
  }

  const Eigen::MatrixXd logits = (video.values * text.values.transpose()) / tau;
  const double inv_n = 1.0 / static_cast<double>(n);

  LossResult result;
  result.per_anchor_v2t.resize(n);
  result.per_anchor_t2v.resize(n);
  Eigen::MatrixXd d_v2t(n, n);  // d v2t / d logits
  Eigen::MatrixXd d_t2v(n, n);  // d t2v / d logits^T, same index layout

  for (Eigen::Index i = 0; i < n; ++i) {
    // v2t: softmax over row i, positive at the diagonal.
    const auto row = logits.row(i);
    const double row_max = row.maxCoeff();
    const Eigen::ArrayXd row_exp = (row.array() - row_max).exp();
    const double row_sum = row_exp.sum();
    result.per_anchor_v2t(i) = std::log(row_sum) + row_max - logits(i, i);
    d_v2t.row(i) = (row_exp / row_sum).matrix() * inv_n;
    d_v2t(i, i) -= inv_n;

    // t2v: softmax over column i.
    const auto col = logits.col(i);
    const double col_max = col.maxCoeff();
    const Eigen::ArrayXd col_exp = (col.array() - col_max).exp();
    const double col_sum = col_exp.sum();
    result.per_anchor_t2v(i) = std::log(col_sum) + col_max - logits(i, i);
    d_t2v.col(i) = (col_exp / col_sum).matrix() * inv_n;
    d_t2v(i, i) -= inv_n;
  }

  result.v2t = result.per_anchor_v2t.sum() * inv_n;
  result.t2v = result.per_anchor_t2v.sum() * inv_n;
  result.total = result.v2t + result.t2v;
  const Eigen::MatrixXd d_logits = d_v2t + d_t2v;
  result.grad_video = (d_logits * text.values) / tau;
  result.grad_text = (d_logits.transpose() * video.values) / tau;
  return result;
}

double finite_difference_check(const PackedBatch& batch,
                               const PositiveMask& mask, double tau, double h,
                               AnchorMode mode) {
  const LossResult analytic = egonce_total(batch, mask, tau, mode);

  PackedBatch probe = batch;
  double worst = 0.0;
  auto scan = [&](Eigen::MatrixXd& values, const Eigen::MatrixXd& grad) {
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      for (Eigen::Index j = 0; j < values.cols(); ++j) {
        const double saved = values(i, j);
        values(i, j) = saved + h;
        const double plus = egonce_value(probe, mask, tau, mode);
        values(i, j) = saved - h;
        const double minus = egonce_value(probe, mask, tau, mode);
        values(i, j) = saved;

        const double numeric = (plus - minus) / (2.0 * h);
        const double denom =
            std::max({std::abs(grad(i, j)), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(grad(i, j) - numeric) / denom);
      }
    }
  };
  scan(probe.video, analytic.grad_video);
  scan(probe.text, analytic.grad_text);
  return worst;
}

}  // namespace ego::nce
