#include "survmil/mil.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "survmil/error.hpp"

namespace survmil {

// ---------------------------------------------------------------------------
// Bags

std::size_t CaseBag::PatchCount() const {
  std::size_t n = 0;
  for (const auto& s : slides) n += static_cast<std::size_t>(s.patches.rows());
  return n;
}

Eigen::MatrixXd CaseBag::AllPatches() const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(PatchCount()), feature_dim);
  Eigen::Index row = 0;
  for (const auto& s : slides) {
    out.middleRows(row, s.patches.rows()) = s.patches;
    row += s.patches.rows();
  }
  return out;
}

std::vector<std::string> CaseBag::PatchSlideIds() const {
  std::vector<std::string> out;
  out.reserve(PatchCount());
  for (const auto& s : slides) out.insert(out.end(), static_cast<std::size_t>(s.patches.rows()), s.slide_id);
  return out;
}

CaseBag GateBag(const CaseBag& bag,
                std::span<const std::vector<PatchCoord>> included) {
  if (included.size() != bag.slides.size()) {
    throw ValidationError("case " + bag.case_id + ": mask count does not match slide count");
  }
  CaseBag out;
  out.case_id = bag.case_id;
  out.feature_dim = bag.feature_dim;
  for (std::size_t s = 0; s < bag.slides.size(); ++s) {
    const Slide& slide = bag.slides[s];
    std::set<PatchCoord> keep(included[s].begin(), included[s].end());
    std::vector<Eigen::Index> rows;
    Slide gated;
    gated.slide_id = slide.slide_id;
    for (std::size_t r = 0; r < slide.coords.size(); ++r) {
      if (keep.count(slide.coords[r])) {
        rows.push_back(static_cast<Eigen::Index>(r));
        gated.coords.push_back(slide.coords[r]);
      }
    }
    gated.patches.resize(static_cast<Eigen::Index>(rows.size()), bag.feature_dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      gated.patches.row(static_cast<Eigen::Index>(r)) = slide.patches.row(rows[r]);
    }
    out.slides.push_back(std::move(gated));
  }
  return out;
}

namespace {

// Appends n draws from rows [0, count) of `source` into `dest` at `at`.
void DrawRows(const Eigen::MatrixXd& source, int n, Rng& rng,
              Eigen::MatrixXd& dest, Eigen::Index at) {
  const auto count = static_cast<std::size_t>(source.rows());
  if (count >= static_cast<std::size_t>(n)) {
    // Partial Fisher-Yates.
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {
      const std::size_t j = static_cast<std::size_t>(i) + UniformIndex(rng, count - static_cast<std::size_t>(i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
      dest.row(at + i) = source.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]));
    }
  } else {
    for (int i = 0; i < n; ++i) {
      dest.row(at + i) = source.row(static_cast<Eigen::Index>(UniformIndex(rng, count)));
    }
  }
}

}  // namespace

Eigen::MatrixXd SampleBag(const CaseBag& bag, int n, Rng& rng, BagSampling mode) {
  if (n < 1) throw ValidationError("bag size must be >= 1");
  if (bag.PatchCount() == 0) throw ValidationError("case " + bag.case_id + ": empty ROI");
  if (mode == BagSampling::kPerCase) {
    Eigen::MatrixXd out(n, bag.feature_dim);
    if (bag.slides.size() == 1) {
      DrawRows(bag.slides[0].patches, n, rng, out, 0);
    } else {
      DrawRows(bag.AllPatches(), n, rng, out, 0);
    }
    return out;
  }
  std::vector<const Slide*> nonempty;
  for (const auto& s : bag.slides) {
    if (s.patches.rows() > 0) nonempty.push_back(&s);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(nonempty.size()) * n, bag.feature_dim);
  for (std::size_t s = 0; s < nonempty.size(); ++s) {
    DrawRows(nonempty[s]->patches, n, rng, out, static_cast<Eigen::Index>(s) * n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

std::vector<int> EncoderShape::Widths() const {
  std::vector<int> out;
  double w = base_width;
  for (int l = 0; l < layers; ++l) {
    out.push_back(std::min(max_width, std::max(1, static_cast<int>(std::lround(w)))));
    w *= growth;
  }
  return out;
}

MilModel::MilModel(std::vector<DenseLayer> encoder, Eigen::VectorXd head_weights,
                   double head_bias)
    : encoder_(std::move(encoder)),
      head_weights_(std::move(head_weights)),
      head_bias_(head_bias) {
  for (std::size_t l = 1; l < encoder_.size(); ++l) {
    if (encoder_[l].weights.cols() != encoder_[l - 1].weights.rows()) {
      throw ValidationError("encoder layer dimensions do not compose");
    }
  }
  if (head_weights_.size() != embedding_dim()) {
    throw ValidationError("head dimension differs from encoder output");
  }
}

MilModel MilModel::Initialize(int input_dim, const EncoderShape& shape,
                              std::uint64_t seed) {
  Rng rng(DeriveSeed(seed, 0x1417));
  auto uniform = [&](double bound) { return (2.0 * UniformUnit(rng) - 1.0) * bound; };
  std::vector<DenseLayer> layers;
  int fan_in = input_dim;
  for (int width : shape.Widths()) {
    DenseLayer layer;
    layer.weights.resize(width, fan_in);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = uniform(bound);
    layer.bias = Eigen::VectorXd::Zero(width);
    layers.push_back(std::move(layer));
    fan_in = width;
  }
  Eigen::VectorXd head(fan_in);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < head.size(); ++i) head(i) = uniform(bound);
  return MilModel(std::move(layers), std::move(head), 0.0);
}

int MilModel::input_dim() const {
  return encoder_.empty() ? static_cast<int>(head_weights_.size())
                          : static_cast<int>(encoder_.front().weights.cols());
}

int MilModel::embedding_dim() const {
  return encoder_.empty() ? static_cast<int>(head_weights_.size())
                          : static_cast<int>(encoder_.back().weights.rows());
}

Eigen::MatrixXd MilModel::Embed(const Eigen::MatrixXd& patches) const {
  if (patches.cols() != input_dim()) {
    throw ValidationError("patch dimension " + std::to_string(patches.cols()) +
                          " does not match model input " + std::to_string(input_dim()));
  }
  Eigen::MatrixXd a = patches;
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    Eigen::MatrixXd z = a * encoder_[l].weights.transpose();
    z.rowwise() += encoder_[l].bias.transpose();
    if (l + 1 < encoder_.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

MilModel::Output MilModel::Forward(const Eigen::MatrixXd& bag) const {
  if (bag.rows() == 0) throw ValidationError("empty bag");
  const Eigen::MatrixXd e = Embed(bag);
  Output out;
  out.patch_scores = (e * head_weights_).array() + head_bias_;
  out.case_score = e.colwise().mean().dot(head_weights_.transpose()) + head_bias_;
  return out;
}

double MilModel::CaseScore(const Eigen::MatrixXd& bag) const {
  if (bag.rows() == 0) throw ValidationError("empty bag");
  return Embed(bag).colwise().mean().dot(head_weights_.transpose()) + head_bias_;
}

std::size_t MilModel::ParameterCount() const {
  std::size_t n = static_cast<std::size_t>(head_weights_.size()) + 1;
  for (const auto& l : encoder_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

Eigen::VectorXd MilModel::Flatten() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(ParameterCount()));
  Eigen::Index at = 0;
  for (const auto& l : encoder_) {
    out.segment(at, l.weights.size()) = l.weights.reshaped();
    at += l.weights.size();
    out.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  out.segment(at, head_weights_.size()) = head_weights_;
  at += head_weights_.size();
  out(at) = head_bias_;
  return out;
}

void MilModel::Unflatten(const Eigen::VectorXd& params) {
  if (static_cast<std::size_t>(params.size()) != ParameterCount()) {
    throw ValidationError("parameter vector size mismatch");
  }
  Eigen::Index at = 0;
  for (auto& l : encoder_) {
    l.weights.reshaped() = params.segment(at, l.weights.size());
    at += l.weights.size();
    l.bias = params.segment(at, l.bias.size());
    at += l.bias.size();
  }
  head_weights_ = params.segment(at, head_weights_.size());
  at += head_weights_.size();
  head_bias_ = params(at);
}

Eigen::VectorXd MilModel::WeightMask() const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ParameterCount()));
  Eigen::Index at = 0;
  for (const auto& l : encoder_) {
    out.segment(at, l.weights.size()).setOnes();
    at += l.weights.size() + l.bias.size();
  }
  out.segment(at, head_weights_.size()).setOnes();
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradient

double CoxPartialLikelihoodLoss::Evaluate(std::span<const double> case_scores,
                                          std::span<const SurvivalRecord> records,
                                          std::vector<double>* score_gradient) const {
  if (std::none_of(records.begin(), records.end(),
                   [](const SurvivalRecord& r) { return r.event; })) {
    throw ValidationError("uninformative batch");
  }
  const double loglik = BreslowLogLik(case_scores, records, score_gradient);
  if (score_gradient != nullptr) {
    for (auto& g : *score_gradient) g = -g;
  }
  return -loglik;
}

std::unique_ptr<SurvivalLoss> MakeLoss(const std::string& name) {
  if (name == "cox") return std::make_unique<CoxPartialLikelihoodLoss>();
  throw ValidationError("unknown survival loss '" + name + "'");
}

double BatchCoxLoss(std::span<const double> case_scores,
                    std::span<const SurvivalRecord> records) {
  return CoxPartialLikelihoodLoss().Evaluate(case_scores, records, nullptr);
}

LossAndGradient ComputeGradient(const MilModel& model,
                                std::span<const Eigen::MatrixXd> bags,
                                std::span<const SurvivalRecord> records,
                                double l2_weight, const SurvivalLoss& loss) {
  if (bags.size() != records.size()) throw ValidationError("bag/record count mismatch");
  const auto& layers = model.encoder();
  const int d = model.input_dim();

  Eigen::Index total = 0;
  for (const auto& b : bags) {
    if (b.rows() == 0) throw ValidationError("empty bag");
    if (b.cols() != d) throw ValidationError("patch dimension does not match model input");
    total += b.rows();
  }
  Eigen::MatrixXd input(total, d);
  std::vector<Eigen::Index> offset(bags.size() + 1, 0);
  for (std::size_t b = 0; b < bags.size(); ++b) {
    input.middleRows(offset[b], bags[b].rows()) = bags[b];
    offset[b + 1] = offset[b] + bags[b].rows();
  }

  // Forward, keeping every layer's output.
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(std::move(input));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = acts.back() * layers[l].weights.transpose();
    z.rowwise() += layers[l].bias.transpose();
    if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  const Eigen::MatrixXd& emb = acts.back();
  const Eigen::Index k = emb.cols();

  Eigen::MatrixXd case_emb(static_cast<Eigen::Index>(bags.size()), k);
  std::vector<double> scores(bags.size());
  for (std::size_t b = 0; b < bags.size(); ++b) {
    case_emb.row(static_cast<Eigen::Index>(b)) =
        emb.middleRows(offset[b], bags[b].rows()).colwise().mean();
    scores[b] = case_emb.row(static_cast<Eigen::Index>(b)).dot(model.head_weights().transpose()) +
                model.head_bias();
  }
  std::vector<double> dscore;
  LossAndGradient out;
  out.data_loss = loss.Evaluate(scores, records, &dscore);

  const Eigen::Map<const Eigen::VectorXd> ds(dscore.data(), static_cast<Eigen::Index>(dscore.size()));
  const Eigen::VectorXd d_head = case_emb.transpose() * ds;
  const double d_bias = ds.sum();

  // d(loss)/d(embedding row) = ds_b * w / n_b for rows of bag b.
  Eigen::MatrixXd grad_a(total, k);
  for (std::size_t b = 0; b < bags.size(); ++b) {
    const double scale = dscore[b] / static_cast<double>(bags[b].rows());
    grad_a.middleRows(offset[b], bags[b].rows()).rowwise() =
        (scale * model.head_weights()).transpose();
  }

  std::vector<Eigen::MatrixXd> d_weights(layers.size());
  std::vector<Eigen::VectorXd> d_biases(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    // grad_a holds d(loss)/dz for layer l here.
    d_weights[l] = grad_a.transpose() * acts[l];
    d_biases[l] = grad_a.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd prev = grad_a * layers[l].weights;
      prev = (acts[l].array() > 0.0).select(prev, 0.0);
      grad_a = std::move(prev);
    }
  }

  out.gradient.resize(static_cast<Eigen::Index>(model.ParameterCount()));
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out.gradient.segment(at, d_weights[l].size()) = d_weights[l].reshaped();
    at += d_weights[l].size();
    out.gradient.segment(at, d_biases[l].size()) = d_biases[l];
    at += d_biases[l].size();
  }
  out.gradient.segment(at, d_head.size()) = d_head;
  at += d_head.size();
  out.gradient(at) = d_bias;

  out.loss = out.data_loss;
  if (l2_weight > 0.0) {
    const Eigen::VectorXd params = model.Flatten();
    const Eigen::VectorXd mask = model.WeightMask();
    const Eigen::VectorXd penalized = params.cwiseProduct(mask);
    out.loss += l2_weight * penalized.squaredNorm();
    out.gradient += 2.0 * l2_weight * penalized;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

double LearningRateSchedule::At(std::int64_t step) const {
  return initial * std::pow(decay_rate, static_cast<double>(step / decay_steps));
}

void AdamStep(Eigen::VectorXd& params, const Eigen::VectorXd& grads,
              AdamState& state, const LearningRateSchedule& schedule,
              const AdamHyper& hyper) {
  if (grads.size() != params.size()) throw ValidationError("adam: shape mismatch");
  if (!grads.allFinite()) throw NumericalError("numerical blowup");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  const double lr = schedule.At(state.step);
  state.step += 1;
  const double t = static_cast<double>(state.step);
  state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grads;
  state.v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  params.array() -= lr * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + hyper.epsilon);
  if (!params.allFinite()) throw NumericalError("numerical blowup");
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::Validate() const {
  if (bag_size < 1 || batch_size < 1 || total_steps < 1 || eval_every < 1 ||
      eval_patches_per_case < 1 || rolling_window < 1 || schedule.decay_steps < 1 ||
      encoder.layers < 1 || encoder.base_width < 1 || encoder.max_width < 1) {
    throw ValidationError("train config: counts must be positive");
  }
  if (!(schedule.decay_rate > 0.0 && schedule.decay_rate <= 1.0)) {
    throw ValidationError("train config: decay_rate must lie in (0, 1]");
  }
  if (schedule.initial < 0.0 || l2_weight < 0.0) {
    throw ValidationError("train config: learning rate and l2 weight must be >= 0");
  }
}

std::vector<double> ScoreForEvaluation(const MilModel& model, const CaseSet& cases,
                                       int patches_per_case, std::uint64_t eval_seed) {
  std::vector<double> scores(cases.bags.size());
  for (std::size_t i = 0; i < cases.bags.size(); ++i) {
    const CaseBag& bag = cases.bags[i];
    if (bag.PatchCount() <= static_cast<std::size_t>(patches_per_case)) {
      scores[i] = model.CaseScore(bag.AllPatches());
    } else {
      Rng rng(DeriveSeed(eval_seed, i));
      scores[i] = model.CaseScore(SampleBag(bag, patches_per_case, rng));
    }
  }
  return scores;
}

namespace {

double TrailingMean(std::span<const double> metrics, std::size_t end, int window) {
  // Sorted summation makes equal multisets produce bit-equal means.
  std::vector<double> w(metrics.begin() + static_cast<std::ptrdiff_t>(end) - window,
                        metrics.begin() + static_cast<std::ptrdiff_t>(end));
  std::sort(w.begin(), w.end());
  return std::accumulate(w.begin(), w.end(), 0.0) / window;
}

std::vector<std::size_t> DrawBatch(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = std::min<std::size_t>(n, static_cast<std::size_t>(batch_size));
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(idx[i], idx[i + UniformIndex(rng, n - i)]);
  }
  idx.resize(take);
  return idx;
}

}  // namespace

TrainResult Train(const CaseSet& train, const CaseSet& tune, const TrainConfig& config,
                  const std::optional<TrainState>& resume) {
  config.Validate();
  if (train.bags.empty() || tune.bags.empty()) {
    throw ValidationError("train and tune splits must be nonempty");
  }
  if (train.bags.size() != train.records.size() || tune.bags.size() != tune.records.size()) {
    throw ValidationError("bag/record count mismatch");
  }
  const auto loss = MakeLoss(config.loss);
  TrainResult result;
  TrainState state;
  if (resume) {
    state = *resume;
  } else {
    state.model = MilModel::Initialize(train.bags.front().feature_dim, config.encoder, config.seed);
  }
  Eigen::VectorXd params = state.model.Flatten();

  double loss_sum = 0.0;
  int loss_count = 0;
  std::vector<Eigen::MatrixXd> bags;
  std::vector<SurvivalRecord> records;
  while (state.step < config.total_steps) {
    const std::int64_t step = state.step + 1;
    Rng rng(DeriveSeed(config.seed, static_cast<std::uint64_t>(step), 0xba7c));
    std::vector<std::size_t> batch;
    for (int attempt = 0; attempt < 10; ++attempt) {
      batch = DrawBatch(train.bags.size(), config.batch_size, rng);
      if (std::any_of(batch.begin(), batch.end(),
                      [&](std::size_t i) { return train.records[i].event; })) {
        break;
      }
      batch.clear();
    }
    if (batch.empty()) throw NumericalError("uninformative batch after 10 resamples");
    bags.clear();
    records.clear();
    for (std::size_t i : batch) {
      bags.push_back(SampleBag(train.bags[i], config.bag_size, rng, config.sampling));
      records.push_back(train.records[i]);
    }
    const LossAndGradient lg =
        ComputeGradient(state.model, bags, records, config.l2_weight, *loss);
    AdamStep(params, lg.gradient, state.adam, config.schedule, config.adam);
    state.model.Unflatten(params);
    state.step = step;
    loss_sum += lg.loss;
    ++loss_count;

    if (step % config.eval_every == 0) {
      const auto scores = ScoreForEvaluation(state.model, tune, config.eval_patches_per_case,
                                             config.eval_seed);
      const double c = ConcordanceIndex(scores, tune.records);
      state.metric_history.push_back(c);
      Checkpoint cp;
      cp.step = step;
      cp.model = state.model;
      cp.tune_metric = c;
      if (state.metric_history.size() >= static_cast<std::size_t>(config.rolling_window)) {
        cp.smoothed_metric = TrailingMean(state.metric_history, state.metric_history.size(),
                                          config.rolling_window);
      }
      result.log.push_back({step, loss_sum / loss_count, c, cp.smoothed_metric});
      result.checkpoints.push_back(std::move(cp));
      loss_sum = 0.0;
      loss_count = 0;
    }
  }
  result.final_state = std::move(state);
  return result;
}

std::size_t SelectCheckpointIndex(std::span<const double> metrics, int window) {
  if (window < 1 || metrics.size() < static_cast<std::size_t>(window)) {
    throw ValidationError("select_checkpoint: need at least " + std::to_string(window) +
                          " checkpoints, have " + std::to_string(metrics.size()));
  }
  std::size_t best = 0;
  double best_mean = -std::numeric_limits<double>::infinity();
  for (std::size_t end = static_cast<std::size_t>(window); end <= metrics.size(); ++end) {
    const double m = TrailingMean(metrics, end, window);
    if (m >= best_mean) {
      best_mean = m;
      best = end - 1;
    }
  }
  return best;
}

const Checkpoint& SelectCheckpoint(std::span<const Checkpoint> checkpoints, int window) {
  std::vector<double> metrics;
  metrics.reserve(checkpoints.size());
  for (const auto& c : checkpoints) metrics.push_back(c.tune_metric);
  return checkpoints[SelectCheckpointIndex(metrics, window)];
}

// ---------------------------------------------------------------------------
// Ensembling and inference

Ensemble EnsembleTop(std::span<const ScoredModel> candidates, int k) {
  if (k < 1) throw ValidationError("ensemble size must be >= 1");
  if (candidates.size() < static_cast<std::size_t>(k)) {
    throw ValidationError("ensemble: need " + std::to_string(k) + " models, have " +
                          std::to_string(candidates.size()));
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].tune_cindex > candidates[b].tune_cindex;
  });
  Ensemble out;
  for (int i = 0; i < k; ++i) {
    const ScoredModel& c = candidates[order[static_cast<std::size_t>(i)]];
    const auto n = c.tune_scores.size();
    if (n < 2) throw ValidationError("ensemble: need >= 2 tune scores to standardize");
    const double mean = std::accumulate(c.tune_scores.begin(), c.tune_scores.end(), 0.0) /
                        static_cast<double>(n);
    double ss = 0.0;
    for (double s : c.tune_scores) ss += (s - mean) * (s - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw NumericalError("ensemble member has constant tune scores");
    out.members.push_back({c.model, mean, sd, c.tune_cindex});
  }
  return out;
}

double EnsembleCaseScore(const Ensemble& ensemble, const Eigen::MatrixXd& bag) {
  if (ensemble.members.empty()) throw ValidationError("empty ensemble");
  double sum = 0.0;
  for (const auto& m : ensemble.members) {
    sum += (m.model.CaseScore(bag) - m.tune_mean) / m.tune_std;
  }
  return sum / static_cast<double>(ensemble.members.size());
}

CaseInference InferCase(const Ensemble& ensemble, const CaseBag& bag) {
  if (ensemble.members.empty()) throw ValidationError("empty ensemble");
  if (bag.PatchCount() == 0) throw ValidationError("case " + bag.case_id + ": no tumor patches");
  const Eigen::MatrixXd patches = bag.AllPatches();
  Eigen::VectorXd patch_sum = Eigen::VectorXd::Zero(patches.rows());
  double case_sum = 0.0;
  for (const auto& m : ensemble.members) {
    const auto out = m.model.Forward(patches);
    patch_sum += (out.patch_scores.array() - m.tune_mean).matrix() / m.tune_std;
    case_sum += (out.case_score - m.tune_mean) / m.tune_std;
  }
  const double members = static_cast<double>(ensemble.members.size());
  CaseInference out;
  out.case_score = case_sum / members;
  out.patch_scores.resize(static_cast<std::size_t>(patches.rows()));
  for (Eigen::Index i = 0; i < patches.rows(); ++i) {
    out.patch_scores[static_cast<std::size_t>(i)] = patch_sum(i) / members;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Search

std::size_t SearchSpace::Size() const {
  return layers.size() * base_width.size() * growth.size() * max_width.size() *
         l2_weight.size() * learning_rate.size() * decay_steps.size() * decay_rate.size();
}

TrainConfig SearchSpace::Apply(const TrainConfig& base, std::size_t combination) const {
  if (Size() == 0) throw ValidationError("search space is empty");
  TrainConfig c = base;
  auto pick = [&](const auto& options) {
    const auto& v = options[combination % options.size()];
    combination /= options.size();
    return v;
  };
  c.encoder.layers = pick(layers);
  c.encoder.base_width = pick(base_width);
  c.encoder.growth = pick(growth);
  c.encoder.max_width = pick(max_width);
  c.l2_weight = pick(l2_weight);
  c.schedule.initial = pick(learning_rate);
  c.schedule.decay_steps = pick(decay_steps);
  c.schedule.decay_rate = pick(decay_rate);
  return c;
}

TrainConfig SearchSpace::Sample(const TrainConfig& base, Rng& rng) const {
  if (Size() == 0) throw ValidationError("search space is empty");
  TrainConfig c = base;
  auto pick = [&](const auto& options) { return options[UniformIndex(rng, options.size())]; };
  c.encoder.layers = pick(layers);
  c.encoder.base_width = pick(base_width);
  c.encoder.growth = pick(growth);
  c.encoder.max_width = pick(max_width);
  c.l2_weight = pick(l2_weight);
  c.schedule.initial = pick(learning_rate);
  c.schedule.decay_steps = pick(decay_steps);
  c.schedule.decay_rate = pick(decay_rate);
  return c;
}

std::vector<SearchEntry> HyperparamSearch(const CaseSet& train, const CaseSet& tune,
                                          const TrainConfig& base,
                                          const SearchSpace& space, int n_configs,
                                          std::uint64_t seed, bool exhaustive,
                                          int threads) {
  if (space.Size() == 0) throw ValidationError("search space is empty");
  if (!exhaustive && n_configs < 1) throw ValidationError("n_configs must be >= 1");
  std::vector<SearchEntry> entries;
  if (exhaustive) {
    for (std::size_t i = 0; i < space.Size(); ++i) {
      entries.push_back({i, space.Apply(base, i), false, {}, 0.0, std::nullopt});
    }
  } else {
    for (int i = 0; i < n_configs; ++i) {
      Rng rng(DeriveSeed(seed, static_cast<std::uint64_t>(i), 0x5ea7c4));
      entries.push_back({static_cast<std::size_t>(i), space.Sample(base, rng), false, {}, 0.0,
                         std::nullopt});
    }
  }
  ParallelFor(entries.size(), threads, [&](std::size_t i) {
    SearchEntry& e = entries[i];
    try {
      const TrainResult r = Train(train, tune, e.config);
      const Checkpoint& best = SelectCheckpoint(r.checkpoints, e.config.rolling_window);
      e.best_smoothed = best.smoothed_metric.value_or(best.tune_metric);
      e.selected = best;
    } catch (const Error& err) {
      e.failed = true;
      e.reason = err.what();
    }
  });
  std::stable_sort(entries.begin(), entries.end(), [](const SearchEntry& a, const SearchEntry& b) {
    if (a.failed != b.failed) return !a.failed;
    if (a.failed) return false;
    return a.best_smoothed > b.best_smoothed;
  });
  return entries;
}

}  // namespace survmil
