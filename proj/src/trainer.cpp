#include "ego/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "ego/rng.hpp"

namespace ego::train {

namespace {

constexpr double kNormEps = 1e-12;

Eigen::MatrixXd seeded_gaussian(Eigen::Index rows, Eigen::Index cols,
                                double scale, std::uint64_t seed) {
  auto engine = rng::engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = normal(engine) * scale;
    }
  }
  return m;
}

std::string zero_pad(long value, int width) {
  std::ostringstream out;
  out << std::setw(width) << std::setfill('0') << value;
  return out.str();
}

// Row normalization that keeps the pre-normalization norms around for the
// backward pass.
void normalize_rows(const Eigen::MatrixXd& raw, Eigen::MatrixXd& unit,
                    Eigen::VectorXd& norms) {
  unit = raw;
  norms.resize(raw.rows());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    norms(i) = raw.row(i).norm();
    unit.row(i) /= std::max(norms(i), kNormEps);
  }
}

// d loss / d raw rows given d loss / d unit rows. Rows at or below the
// epsilon guard get zero gradient.
Eigen::MatrixXd normalize_backward(const Eigen::MatrixXd& unit,
                                   const Eigen::VectorXd& norms,
                                   const Eigen::MatrixXd& grad_unit) {
  Eigen::MatrixXd grad_raw(unit.rows(), unit.cols());
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    if (norms(i) <= kNormEps) {
      grad_raw.row(i).setZero();
      continue;
    }
    const double radial = unit.row(i).dot(grad_unit.row(i));
    grad_raw.row(i) = (grad_unit.row(i) - radial * unit.row(i)) / norms(i);
  }
  return grad_raw;
}

// Everything one optimization step needs, assembled deterministically from
// (corpus, batch_rows, step_seed) and the current heads.
struct AssembledBatch {
  Eigen::MatrixXd video_inputs;  // M x d_in, base rows then partners
  Eigen::MatrixXd text_inputs;
  Eigen::MatrixXd video_unit;  // M x d_out, L2-normalized embeddings
  Eigen::MatrixXd text_unit;
  Eigen::VectorXd video_norms;
  Eigen::VectorXd text_norms;
  nce::PackedBatch packed;
  nce::PositiveMask mask;
  double missing_partner_fraction = 0.0;
};

AssembledBatch assemble_batch(const DualHeads& heads,
                              const FeatureCorpus& corpus,
                              std::span<const int> batch_rows,
                              Objective objective, double max_gap_sec,
                              std::uint64_t step_seed) {
  if (batch_rows.empty()) {
    fail(ErrorKind::kInvalidInput, "empty training batch");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(batch_rows.size());
  const Eigen::Index d_in = corpus.feature_dim();
  if (heads.video.input_dim() != d_in || heads.text.input_dim() != d_in) {
    fail(ErrorKind::kShape, "head input dim does not match corpus features");
  }
  for (int row : batch_rows) {
    if (row < 0 || row >= corpus.size()) {
      fail(ErrorKind::kInvalidInput,
           "batch row " + std::to_string(row) + " out of corpus range");
    }
  }

  // Scene partners, EgoNCE only. Sampling depends only on the adjacency
  // index and the step seed, never on the head parameters.
  std::vector<int> partner_rows;
  double missing = 0.0;
  if (objective == Objective::kEgoNce) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& pair = corpus.pairs[static_cast<std::size_t>(batch_rows[i])];
      auto partner_id = corpus::sample_scene_negative(
          corpus.adjacency, pair.pair_id, max_gap_sec,
          rng::derive(step_seed, static_cast<std::uint64_t>(i)));
      if (partner_id) {
        partner_rows.push_back(corpus.row_by_pair_id.at(*partner_id));
      } else {
        partner_rows.push_back(-1);
        missing += 1.0;
      }
    }
  }

  AssembledBatch out;
  out.missing_partner_fraction =
      objective == Objective::kEgoNce ? missing / static_cast<double>(n) : 0.0;

  Eigen::Index m = n;
  for (int p : partner_rows) {
    if (p >= 0) ++m;
  }
  out.video_inputs.resize(m, d_in);
  out.text_inputs.resize(m, d_in);
  out.packed.base_rows = n;
  out.packed.tags.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    out.video_inputs.row(i) = corpus.video_features.row(batch_rows[i]);
    out.text_inputs.row(i) = corpus.text_features.row(batch_rows[i]);
    out.packed.tags.push_back(corpus.tags_of(batch_rows[i]));
  }
  Eigen::Index next = n;
  for (int p : partner_rows) {
    if (p < 0) continue;
    out.video_inputs.row(next) = corpus.video_features.row(p);
    out.text_inputs.row(next) = corpus.text_features.row(p);
    out.packed.tags.push_back(corpus.tags_of(p));
    ++next;
  }

  normalize_rows(out.video_inputs * heads.video.weight +
                     Eigen::VectorXd::Ones(m) * heads.video.bias.transpose(),
                 out.video_unit, out.video_norms);
  normalize_rows(out.text_inputs * heads.text.weight +
                     Eigen::VectorXd::Ones(m) * heads.text.bias.transpose(),
                 out.text_unit, out.text_norms);
  out.packed.video = out.video_unit;
  out.packed.text = out.text_unit;
  if (objective == Objective::kEgoNce) {
    out.mask = nce::build_positive_mask(out.packed.tags);
  }
  return out;
}

nce::LossResult batch_loss(const AssembledBatch& batch, Objective objective,
                           double tau, nce::AnchorMode mode) {
  if (objective == Objective::kEgoNce) {
    return nce::egonce_total(batch.packed, batch.mask, tau, mode);
  }
  nce::EmbeddingMatrix video{batch.packed.video, true};
  nce::EmbeddingMatrix text{batch.packed.text, true};
  return nce::infonce(video, text, tau);
}

void check_finite_loss(const nce::LossResult& loss) {
  if (std::isfinite(loss.total)) return;
  for (Eigen::Index i = 0; i < loss.per_anchor_v2t.size(); ++i) {
    if (!std::isfinite(loss.per_anchor_v2t(i))) {
      fail(ErrorKind::kNumeric,
           "non-finite loss at v2t anchor " + std::to_string(i));
    }
  }
  for (Eigen::Index i = 0; i < loss.per_anchor_t2v.size(); ++i) {
    if (!std::isfinite(loss.per_anchor_t2v(i))) {
      fail(ErrorKind::kNumeric,
           "non-finite loss at t2v anchor " + std::to_string(i));
    }
  }
  fail(ErrorKind::kNumeric, "non-finite loss");
}

}  // namespace

ProjectionHead ProjectionHead::init(Eigen::Index d_in, Eigen::Index d_out,
                                    std::uint64_t seed) {
  if (d_in < 1 || d_out < 1) {
    fail(ErrorKind::kInvalidInput, "projection head dims must be positive");
  }
  ProjectionHead head;
  head.weight = seeded_gaussian(d_in, d_out, 1.0 / std::sqrt(double(d_in)),
                                rng::derive(seed, 0x11));
  head.bias = Eigen::VectorXd::Zero(d_out);
  return head;
}

nce::EmbeddingMatrix forward(const ProjectionHead& head,
                             const Eigen::MatrixXd& features) {
  if (features.cols() != head.input_dim()) {
    fail(ErrorKind::kShape,
         "forward: feature dim " + std::to_string(features.cols()) +
             " != head input dim " + std::to_string(head.input_dim()));
  }
  nce::EmbeddingMatrix raw;
  raw.values = features * head.weight +
               Eigen::VectorXd::Ones(features.rows()) * head.bias.transpose();
  return nce::l2_normalize(raw);
}

AdamState AdamState::init(Eigen::Index d_in, Eigen::Index d_out,
                          const AdamConfig& config) {
  AdamState state;
  state.config = config;
  state.m_weight = Eigen::MatrixXd::Zero(d_in, d_out);
  state.v_weight = Eigen::MatrixXd::Zero(d_in, d_out);
  state.m_bias = Eigen::VectorXd::Zero(d_out);
  state.v_bias = Eigen::VectorXd::Zero(d_out);
  return state;
}

void adam_step(Eigen::MatrixXd& weight, Eigen::VectorXd& bias, AdamState& state,
               const Eigen::MatrixXd& grad_weight,
               const Eigen::VectorXd& grad_bias) {
  if (grad_weight.rows() != weight.rows() ||
      grad_weight.cols() != weight.cols() || grad_bias.size() != bias.size()) {
    fail(ErrorKind::kShape, "adam_step: gradient shape mismatch");
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  state.m_weight = c.beta1 * state.m_weight + (1.0 - c.beta1) * grad_weight;
  state.v_weight = c.beta2 * state.v_weight +
                   (1.0 - c.beta2) * grad_weight.array().square().matrix();
  weight.array() -= c.learning_rate * (state.m_weight.array() / bc1) /
                    ((state.v_weight.array() / bc2).sqrt() + c.epsilon);

  state.m_bias = c.beta1 * state.m_bias + (1.0 - c.beta1) * grad_bias;
  state.v_bias = c.beta2 * state.v_bias +
                 (1.0 - c.beta2) * grad_bias.array().square().matrix();
  bias.array() -= c.learning_rate * (state.m_bias.array() / bc1) /
                  ((state.v_bias.array() / bc2).sqrt() + c.epsilon);
}

nce::RowTags FeatureCorpus::tags_of(int row) const {
  const auto& narration = pairs[static_cast<std::size_t>(row)].narration;
  return {narration.noun_set, narration.verb_set};
}

void FeatureCorpus::index_rows() {
  if (pairs.size() != static_cast<std::size_t>(video_features.rows()) ||
      pairs.size() != static_cast<std::size_t>(text_features.rows())) {
    fail(ErrorKind::kShape, "corpus pairs/features row count mismatch");
  }
  adjacency = corpus::build_adjacency_index(pairs);
  row_by_pair_id.clear();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    row_by_pair_id[pairs[i].pair_id] = static_cast<int>(i);
  }
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  if (spec.num_videos < 1 || spec.clips_per_video < 1 ||
      spec.noun_cluster_count < 1 || spec.verb_cluster_count < 1 ||
      spec.feature_dim < 1) {
    fail(ErrorKind::kInvalidInput, "synthetic corpus: counts must be positive");
  }
  if (spec.noise_scale < 0.0) {
    fail(ErrorKind::kInvalidInput, "synthetic corpus: noise scale must be >= 0");
  }

  const int num_clusters = spec.noun_cluster_count * spec.verb_cluster_count;
  const Eigen::Index d = spec.feature_dim;
  auto engine = rng::engine(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> pick_cluster(0, num_clusters - 1);

  // Two independent centroid families; drawing order is part of the
  // determinism contract.
  Eigen::MatrixXd video_centroids(num_clusters, d);
  Eigen::MatrixXd text_centroids(num_clusters, d);
  for (int k = 0; k < num_clusters; ++k) {
    for (Eigen::Index j = 0; j < d; ++j) video_centroids(k, j) = normal(engine);
  }
  for (int k = 0; k < num_clusters; ++k) {
    for (Eigen::Index j = 0; j < d; ++j) text_centroids(k, j) = normal(engine);
  }

  const int total_clips = spec.num_videos * spec.clips_per_video;
  SyntheticCorpus out;
  out.corpus.video_features.resize(total_clips, d);
  out.corpus.text_features.resize(total_clips, d);
  out.corpus.pairs.reserve(static_cast<std::size_t>(total_clips));
  out.noun_label.reserve(static_cast<std::size_t>(total_clips));
  out.verb_label.reserve(static_cast<std::size_t>(total_clips));

  const double duration = 10.0 * spec.clips_per_video + 10.0;
  int row = 0;
  for (int v = 0; v < spec.num_videos; ++v) {
    const std::string video_id = "video_" + zero_pad(v, 5);
    for (int c = 0; c < spec.clips_per_video; ++c, ++row) {
      const int cluster = pick_cluster(engine);
      const int noun = cluster / spec.verb_cluster_count;
      const int verb = cluster % spec.verb_cluster_count;
      for (Eigen::Index j = 0; j < d; ++j) {
        out.corpus.video_features(row, j) =
            video_centroids(cluster, j) + spec.noise_scale * normal(engine);
      }
      for (Eigen::Index j = 0; j < d; ++j) {
        out.corpus.text_features(row, j) =
            text_centroids(cluster, j) + spec.noise_scale * normal(engine);
      }

      corpus::TaggedNarration narration;
      narration.record.video_id = video_id;
      narration.record.timestamp_sec = 5.0 + 10.0 * c;
      narration.record.text =
          "verb_" + std::to_string(verb) + " noun_" + std::to_string(noun);
      narration.noun_set = {"noun_" + std::to_string(noun)};
      narration.verb_set = {"verb_" + std::to_string(verb)};
      out.corpus.pairs.push_back(corpus::pair_clip(
          narration, 2.0, duration, video_id + "#c" + zero_pad(c, 4)));
      out.noun_label.push_back(noun);
      out.verb_label.push_back(verb);
    }
  }
  out.corpus.index_rows();
  return out;
}

StepGradients compute_step_gradients(const DualHeads& heads,
                                     const FeatureCorpus& corpus,
                                     std::span<const int> batch_rows,
                                     Objective objective, double tau,
                                     double max_gap_sec,
                                     std::uint64_t step_seed,
                                     nce::AnchorMode mode) {
  AssembledBatch batch = assemble_batch(heads, corpus, batch_rows, objective,
                                        max_gap_sec, step_seed);
  StepGradients out;
  out.loss = batch_loss(batch, objective, tau, mode);
  check_finite_loss(out.loss);
  out.missing_partner_fraction = batch.missing_partner_fraction;

  const Eigen::MatrixXd d_video_raw = normalize_backward(
      batch.video_unit, batch.video_norms, out.loss.grad_video);
  const Eigen::MatrixXd d_text_raw =
      normalize_backward(batch.text_unit, batch.text_norms, out.loss.grad_text);

  out.grad_video_weight = batch.video_inputs.transpose() * d_video_raw;
  out.grad_video_bias = d_video_raw.colwise().sum();
  out.grad_text_weight = batch.text_inputs.transpose() * d_text_raw;
  out.grad_text_bias = d_text_raw.colwise().sum();
  return out;
}

double step_loss_value(const DualHeads& heads, const FeatureCorpus& corpus,
                       std::span<const int> batch_rows, Objective objective,
                       double tau, double max_gap_sec, std::uint64_t step_seed,
                       nce::AnchorMode mode) {
  AssembledBatch batch = assemble_batch(heads, corpus, batch_rows, objective,
                                        max_gap_sec, step_seed);
  return batch_loss(batch, objective, tau, mode).total;
}

nce::LossResult train_step(DualHeads& heads, DualAdam& opt,
                           const FeatureCorpus& corpus,
                           std::span<const int> batch_rows, Objective objective,
                           double tau, double max_gap_sec,
                           std::uint64_t step_seed, nce::AnchorMode mode) {
  StepGradients grads = compute_step_gradients(
      heads, corpus, batch_rows, objective, tau, max_gap_sec, step_seed, mode);
  adam_step(heads.video.weight, heads.video.bias, opt.video,
            grads.grad_video_weight, grads.grad_video_bias);
  adam_step(heads.text.weight, heads.text.bias, opt.text,
            grads.grad_text_weight, grads.grad_text_bias);
  return std::move(grads.loss);
}

std::vector<McqIndexQuestion> build_mcq_questions(const FeatureCorpus& corpus,
                                                  std::span<const int> holdout,
                                                  int options,
                                                  std::uint64_t seed) {
  if (options < 2) {
    fail(ErrorKind::kInvalidInput, "mcq options must be >= 2");
  }

  std::unordered_map<std::string, std::vector<int>> rows_by_video;
  for (int row : holdout) {
    rows_by_video[corpus.pairs[static_cast<std::size_t>(row)].clip.video_id]
        .push_back(row);
  }

  auto sample_distractors = [](std::vector<int> pool, int want,
                               std::mt19937_64& engine) {
    const int take = std::min<int>(want, static_cast<int>(pool.size()));
    for (int i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick(engine)]);
    }
    pool.resize(static_cast<std::size_t>(take));
    return pool;
  };

  std::vector<McqIndexQuestion> questions;
  for (int row : holdout) {
    const std::string& video =
        corpus.pairs[static_cast<std::size_t>(row)].clip.video_id;

    // Intra-video: distractors are other clips of the same video.
    {
      std::vector<int> pool;
      for (int other : rows_by_video[video]) {
        if (other != row) pool.push_back(other);
      }
      auto engine = rng::engine(
          rng::derive(seed, 0x1A, static_cast<std::uint64_t>(row)));
      auto distractors = sample_distractors(pool, options - 1, engine);
      if (!distractors.empty()) {
        McqIndexQuestion q;
        q.query_row = row;
        q.kind = eval::McqKind::kIntraVideo;
        std::uniform_int_distribution<int> slot(
            0, static_cast<int>(distractors.size()));
        q.answer_index = slot(engine);
        q.candidate_rows = distractors;
        q.candidate_rows.insert(q.candidate_rows.begin() + q.answer_index, row);
        questions.push_back(std::move(q));
      }
    }

    // Inter-video: distractors come from other holdout videos.
    {
      std::vector<int> pool;
      for (int other : holdout) {
        if (corpus.pairs[static_cast<std::size_t>(other)].clip.video_id !=
            video) {
          pool.push_back(other);
        }
      }
      auto engine = rng::engine(
          rng::derive(seed, 0x1E, static_cast<std::uint64_t>(row)));
      auto distractors = sample_distractors(pool, options - 1, engine);
      if (!distractors.empty()) {
        McqIndexQuestion q;
        q.query_row = row;
        q.kind = eval::McqKind::kInterVideo;
        std::uniform_int_distribution<int> slot(
            0, static_cast<int>(distractors.size()));
        q.answer_index = slot(engine);
        q.candidate_rows = distractors;
        q.candidate_rows.insert(q.candidate_rows.begin() + q.answer_index, row);
        questions.push_back(std::move(q));
      }
    }
  }
  return questions;
}

std::vector<eval::McqQuestion> materialize_mcq(
    const DualHeads& heads, const FeatureCorpus& corpus,
    std::span<const McqIndexQuestion> questions) {
  const nce::EmbeddingMatrix video_embed =
      forward(heads.video, corpus.video_features);
  const nce::EmbeddingMatrix text_embed =
      forward(heads.text, corpus.text_features);

  std::vector<eval::McqQuestion> out;
  out.reserve(questions.size());
  for (const auto& q : questions) {
    eval::McqQuestion materialized;
    materialized.query = text_embed.values.row(q.query_row).transpose();
    materialized.candidates.reserve(q.candidate_rows.size());
    for (int row : q.candidate_rows) {
      materialized.candidates.emplace_back(
          video_embed.values.row(row).transpose());
    }
    materialized.answer_index = q.answer_index;
    materialized.kind = q.kind;
    out.push_back(std::move(materialized));
  }
  return out;
}

TrainResult train(const TrainConfig& config, const FeatureCorpus& corpus) {
  if (config.epochs < 0) fail(ErrorKind::kConfig, "epochs must be >= 0");
  if (config.batch_size < 1) fail(ErrorKind::kConfig, "batch_size must be >= 1");
  if (config.embed_dim < 1) fail(ErrorKind::kConfig, "embed_dim must be >= 1");
  if (!(config.tau > 0.0)) fail(ErrorKind::kConfig, "tau must be > 0");
  if (config.mcq_options < 2) fail(ErrorKind::kConfig, "mcq_options must be >= 2");
  if (!(config.holdout_fraction > 0.0 && config.holdout_fraction < 1.0)) {
    fail(ErrorKind::kConfig, "holdout_fraction must lie in (0, 1)");
  }
  if (corpus.size() == 0) fail(ErrorKind::kConfig, "empty corpus");

  // Hold out whole videos so intra-video questions never mix splits.
  std::vector<std::string> videos;
  for (const auto& [video_id, _] : corpus.adjacency.per_video()) {
    videos.push_back(video_id);
  }
  if (videos.size() < 2) {
    fail(ErrorKind::kConfig, "need at least 2 videos to hold out a split");
  }
  {
    auto engine = rng::engine(rng::derive(config.seed, 0x5B17));
    for (std::size_t i = 0; i + 1 < videos.size(); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, videos.size() - 1);
      std::swap(videos[i], videos[pick(engine)]);
    }
  }
  std::size_t holdout_videos = static_cast<std::size_t>(
      std::lround(config.holdout_fraction * static_cast<double>(videos.size())));
  holdout_videos = std::clamp<std::size_t>(holdout_videos, 1, videos.size() - 1);
  std::set<std::string> holdout_set(videos.begin(),
                                    videos.begin() + holdout_videos);

  std::vector<int> train_rows;
  std::vector<int> holdout_rows;
  for (int row = 0; row < corpus.size(); ++row) {
    const auto& video = corpus.pairs[static_cast<std::size_t>(row)].clip.video_id;
    (holdout_set.count(video) ? holdout_rows : train_rows).push_back(row);
  }
  if (holdout_rows.empty()) fail(ErrorKind::kConfig, "empty held-out split");
  if (train_rows.empty()) fail(ErrorKind::kConfig, "empty training split");

  TrainResult result;
  result.holdout_rows = holdout_rows;
  result.questions =
      build_mcq_questions(corpus, holdout_rows, config.mcq_options,
                          rng::derive(config.seed, 0x3C0));
  bool any_intra = false;
  for (const auto& q : result.questions) {
    any_intra |= q.kind == eval::McqKind::kIntraVideo;
  }
  if (!any_intra) {
    fail(ErrorKind::kConfig,
         "held-out split yields no intra-video questions; checkpoint "
         "selection needs them");
  }

  DualHeads heads{
      ProjectionHead::init(corpus.feature_dim(), config.embed_dim,
                           rng::derive(config.seed, 1)),
      ProjectionHead::init(corpus.feature_dim(), config.embed_dim,
                           rng::derive(config.seed, 2))};
  result.init_heads = heads;
  DualAdam opt{AdamState::init(corpus.feature_dim(), config.embed_dim,
                               config.adam),
               AdamState::init(corpus.feature_dim(), config.embed_dim,
                               config.adam)};

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> order = train_rows;
    auto engine = rng::engine(
        rng::derive(config.seed, 0xE60C, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(engine)]);
    }

    double loss_sum = 0.0;
    double missing_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const int> batch(order.data() + start, end - start);
      const std::uint64_t step_seed =
          rng::derive(config.seed, 0x57E9 + static_cast<std::uint64_t>(epoch),
                      static_cast<std::uint64_t>(steps));
      StepGradients grads =
          compute_step_gradients(heads, corpus, batch, config.objective,
                                 config.tau, config.max_gap_sec, step_seed,
                                 config.anchor_mode);
      adam_step(heads.video.weight, heads.video.bias, opt.video,
                grads.grad_video_weight, grads.grad_video_bias);
      adam_step(heads.text.weight, heads.text.bias, opt.text,
                grads.grad_text_weight, grads.grad_text_bias);
      loss_sum += grads.loss.total;
      missing_sum += grads.missing_partner_fraction;
      ++steps;
    }

    const auto mcq =
        eval::mcq_accuracy(materialize_mcq(heads, corpus, result.questions));
    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.mean_loss = loss_sum / static_cast<double>(steps);
    metrics.mcq_inter =
        mcq.inter ? *mcq.inter : std::numeric_limits<double>::quiet_NaN();
    metrics.mcq_intra = *mcq.intra;  // intra questions are guaranteed above
    metrics.missing_partner_fraction =
        missing_sum / static_cast<double>(steps);
    result.metrics.push_back(metrics);
    result.epoch_heads.push_back(heads);
  }

  result.best_epoch = -1;
  double best_intra = -1.0;
  for (const auto& m : result.metrics) {
    if (m.mcq_intra > best_intra) {
      best_intra = m.mcq_intra;
      result.best_epoch = m.epoch;
    }
  }
  return result;
}

TransferHead TransferHead::init(Eigen::Index d_in, Eigen::Index num_classes,
                                std::uint64_t seed) {
  if (d_in < 1 || num_classes < 2) {
    fail(ErrorKind::kInvalidInput,
         "transfer head needs d_in >= 1 and >= 2 classes");
  }
  TransferHead head;
  head.weight = seeded_gaussian(d_in, num_classes, 1.0 / std::sqrt(double(d_in)),
                                rng::derive(seed, 0x7F));
  head.bias = Eigen::VectorXd::Zero(num_classes);
  return head;
}

TransferHead make_oscc_head(Eigen::Index d_in, std::uint64_t seed) {
  return TransferHead::init(d_in, 2, seed);
}

TransferHead make_pnr_head(Eigen::Index d_in, std::uint64_t seed) {
  return TransferHead::init(d_in, 16, seed);
}

CrossEntropyResult softmax_cross_entropy(const Eigen::MatrixXd& logits,
                                         std::span<const int> labels) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index num_classes = logits.cols();
  if (labels.size() != static_cast<std::size_t>(n)) {
    fail(ErrorKind::kShape, "cross entropy: labels/logits row mismatch");
  }
  if (n == 0) fail(ErrorKind::kInvalidInput, "cross entropy: empty batch");
  for (int label : labels) {
    if (label < 0 || label >= num_classes) {
      fail(ErrorKind::kValidation,
           "label " + std::to_string(label) + " outside [0, " +
               std::to_string(num_classes) + ")");
    }
  }

  CrossEntropyResult out;
  out.grad_logits.resize(n, num_classes);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    const double row_max = row.maxCoeff();
    const Eigen::ArrayXd shifted = (row.array() - row_max).exp();
    const double sum = shifted.sum();
    out.loss += (std::log(sum) + row_max - row(labels[i])) * inv_n;
    out.grad_logits.row(i) = (shifted / sum).matrix() * inv_n;
    out.grad_logits(i, labels[i]) -= inv_n;

    Eigen::Index argmax = 0;
    row.maxCoeff(&argmax);
    correct += static_cast<Eigen::Index>(labels[i]) == argmax;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

FinetuneResult finetune_classifier(TransferHead& head,
                                   const Eigen::MatrixXd& features,
                                   std::span<const int> labels, int epochs,
                                   double learning_rate) {
  if (features.cols() != head.input_dim()) {
    fail(ErrorKind::kShape, "finetune: feature dim != head input dim");
  }
  if (epochs < 0) fail(ErrorKind::kInvalidInput, "finetune: epochs must be >= 0");

  AdamConfig adam_config;
  adam_config.learning_rate = learning_rate;
  AdamState opt =
      AdamState::init(head.input_dim(), head.num_classes(), adam_config);

  FinetuneResult result;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(features.rows());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const Eigen::MatrixXd logits =
        features * head.weight + ones * head.bias.transpose();
    CrossEntropyResult ce = softmax_cross_entropy(logits, labels);
    if (!std::isfinite(ce.loss)) {
      fail(ErrorKind::kNumeric, "non-finite cross-entropy loss");
    }
    const Eigen::MatrixXd grad_weight = features.transpose() * ce.grad_logits;
    const Eigen::VectorXd grad_bias = ce.grad_logits.colwise().sum();
    adam_step(head.weight, head.bias, opt, grad_weight, grad_bias);
    result.accuracy_curve.push_back(ce.accuracy);
    result.loss_curve.push_back(ce.loss);
  }
  return result;
}

}  // namespace ego::train
