#pragma once

// Weakly supervised prognostic model: a feedforward patch encoder shared
// across a bag, mean pooling, and a linear Cox head trained on the Breslow
// partial likelihood with Adam.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survmil/random.hpp"
#include "survmil/roi_mask.hpp"
#include "survmil/survival.hpp"

namespace survmil {

struct Slide {
  std::string slide_id;
  Eigen::MatrixXd patches;  // one row per patch
  std::vector<PatchCoord> coords;
};

struct CaseBag {
  std::string case_id;
  std::vector<Slide> slides;
  int feature_dim = 0;

  std::size_t PatchCount() const;
  // All patches stacked in slide order.
  Eigen::MatrixXd AllPatches() const;
  // Slide id for each row of AllPatches().
  std::vector<std::string> PatchSlideIds() const;
};

// Keeps only patches whose block coordinate is included by the slide's
// mask. `included` is indexed like bag.slides.
CaseBag GateBag(const CaseBag& bag,
                std::span<const std::vector<PatchCoord>> included);

enum class BagSampling { kPerCase, kPerSlide };

// n draws over the case's patches: without replacement when at least n
// exist, with replacement otherwise. kPerSlide draws n from every slide.
// Throws "empty ROI" when the case has no patches.
Eigen::MatrixXd SampleBag(const CaseBag& bag, int n, Rng& rng,
                          BagSampling mode = BagSampling::kPerCase);

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;
};

struct EncoderShape {
  int layers = 2;
  int base_width = 16;
  double growth = 1.5;
  int max_width = 64;

  std::vector<int> Widths() const;
};

class MilModel {
 public:
  MilModel() = default;
  MilModel(std::vector<DenseLayer> encoder, Eigen::VectorXd head_weights,
           double head_bias);

  // Weights uniform in +-1/sqrt(fan_in), biases zero.
  static MilModel Initialize(int input_dim, const EncoderShape& shape,
                             std::uint64_t seed);

  int input_dim() const;
  int embedding_dim() const;

  const std::vector<DenseLayer>& encoder() const { return encoder_; }
  const Eigen::VectorXd& head_weights() const { return head_weights_; }
  double head_bias() const { return head_bias_; }

  // Rectifier between layers, none after the last.
  Eigen::MatrixXd Embed(const Eigen::MatrixXd& patches) const;

  struct Output {
    Eigen::VectorXd patch_scores;
    double case_score = 0.0;
  };
  Output Forward(const Eigen::MatrixXd& bag) const;
  double CaseScore(const Eigen::MatrixXd& bag) const;

  std::size_t ParameterCount() const;
  Eigen::VectorXd Flatten() const;
  void Unflatten(const Eigen::VectorXd& params);
  // Mask of entries subject to L2 (weights, not biases), aligned with Flatten.
  Eigen::VectorXd WeightMask() const;

 private:
  std::vector<DenseLayer> encoder_;
  Eigen::VectorXd head_weights_;
  double head_bias_ = 0.0;
};

// Survival loss seam. Implementations return the loss and, when requested,
// d(loss)/d(score_i).
class SurvivalLoss {
 public:
  virtual ~SurvivalLoss() = default;
  virtual std::string name() const = 0;
  virtual double Evaluate(std::span<const double> case_scores,
                          std::span<const SurvivalRecord> records,
                          std::vector<double>* score_gradient) const = 0;
};

// Negative Breslow partial log-likelihood over the batch.
class CoxPartialLikelihoodLoss final : public SurvivalLoss {
 public:
  std::string name() const override { return "cox"; }
  double Evaluate(std::span<const double> case_scores,
                  std::span<const SurvivalRecord> records,
                  std::vector<double>* score_gradient) const override;
};

std::unique_ptr<SurvivalLoss> MakeLoss(const std::string& name);

// Throws "uninformative batch" when no record has an event.
double BatchCoxLoss(std::span<const double> case_scores,
                    std::span<const SurvivalRecord> records);

struct LossAndGradient {
  double loss = 0.0;  // including the L2 term
  double data_loss = 0.0;
  Eigen::VectorXd gradient;  // aligned with MilModel::Flatten
};

LossAndGradient ComputeGradient(const MilModel& model,
                                std::span<const Eigen::MatrixXd> bags,
                                std::span<const SurvivalRecord> records,
                                double l2_weight,
                                const SurvivalLoss& loss = CoxPartialLikelihoodLoss());

struct LearningRateSchedule {
  double initial = 5e-4;
  int decay_steps = 10000;
  double decay_rate = 0.95;

  // Staircase decay by decay_rate every decay_steps.
  double At(std::int64_t step) const;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update; throws "numerical blowup" on a
// non-finite gradient.
void AdamStep(Eigen::VectorXd& params, const Eigen::VectorXd& grads,
              AdamState& state, const LearningRateSchedule& schedule,
              const AdamHyper& hyper = {});

struct TrainConfig {
  int bag_size = 16;
  int batch_size = 64;
  LearningRateSchedule schedule;
  double l2_weight = 1e-4;
  AdamHyper adam;
  EncoderShape encoder;
  std::int64_t total_steps = 20000;
  int eval_every = 200;
  int eval_patches_per_case = 1024;
  int rolling_window = 10;
  BagSampling sampling = BagSampling::kPerCase;
  std::string loss = "cox";
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 0x5eed;

  void Validate() const;
};

struct Checkpoint {
  std::int64_t step = 0;
  MilModel model;
  double tune_metric = 0.0;
  std::optional<double> smoothed_metric;
};

struct TrainLogRow {
  std::int64_t step = 0;
  double loss = 0.0;  // mean batch loss since the previous evaluation
  double tune_cindex = 0.0;
  std::optional<double> smoothed;
};

// Cases with gated bags and aligned records.
struct CaseSet {
  std::vector<CaseBag> bags;
  std::vector<SurvivalRecord> records;
};

struct TrainState {
  MilModel model;
  AdamState adam;
  std::int64_t step = 0;
  std::vector<double> metric_history;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<TrainLogRow> log;
  TrainState final_state;
};

// Tune-set case scores used for checkpoint evaluation.
std::vector<double> ScoreForEvaluation(const MilModel& model, const CaseSet& cases,
                                       int patches_per_case, std::uint64_t eval_seed);

// Trains from `resume` when given, else from a fresh initialization.
TrainResult Train(const CaseSet& train, const CaseSet& tune,
                  const TrainConfig& config,
                  const std::optional<TrainState>& resume = std::nullopt);

// Position maximizing the trailing `window` mean of tune_metric; ties go to
// the latest position.
std::size_t SelectCheckpointIndex(std::span<const double> metrics, int window);
const Checkpoint& SelectCheckpoint(std::span<const Checkpoint> checkpoints,
                                   int window = 10);

struct EnsembleMember {
  MilModel model;
  double tune_mean = 0.0;
  double tune_std = 1.0;
  double tune_cindex = 0.0;
};

struct Ensemble {
  std::vector<EnsembleMember> members;
};

struct ScoredModel {
  MilModel model;
  double tune_cindex = 0.0;
  std::vector<double> tune_scores;  // standardization source
};

// Top-k by tune c-index (ties to the earlier candidate).
Ensemble EnsembleTop(std::span<const ScoredModel> candidates, int k = 5);

struct CaseInference {
  double case_score = 0.0;
  std::vector<double> patch_scores;  // AllPatches() order
};

// Exhaustive over every gated patch; throws "no tumor patches" if empty.
CaseInference InferCase(const Ensemble& ensemble, const CaseBag& bag);

// Mean of member-standardized case scores for an arbitrary bag.
double EnsembleCaseScore(const Ensemble& ensemble, const Eigen::MatrixXd& bag);

struct SearchSpace {
  std::vector<int> layers{1, 2};
  std::vector<int> base_width{8, 16, 32};
  std::vector<double> growth{1.25, 1.5, 2.0};
  std::vector<int> max_width{64, 256};
  std::vector<double> l2_weight{1e-3, 1e-4, 1e-5};
  std::vector<double> learning_rate{5e-3, 5e-4, 5e-5};
  std::vector<int> decay_steps{10000, 20000};
  std::vector<double> decay_rate{0.95, 0.99};

  std::size_t Size() const;
  TrainConfig Apply(const TrainConfig& base, std::size_t combination) const;
  TrainConfig Sample(const TrainConfig& base, Rng& rng) const;
};

struct SearchEntry {
  std::size_t config_index = 0;
  TrainConfig config;
  bool failed = false;
  std::string reason;
  double best_smoothed = 0.0;
  std::optional<Checkpoint> selected;
};

// Trains n_configs sampled (or, if exhaustive, all enumerated) configs and
// ranks them by best smoothed tune c-index; failures rank last.
std::vector<SearchEntry> HyperparamSearch(const CaseSet& train, const CaseSet& tune,
                                          const TrainConfig& base,
                                          const SearchSpace& space, int n_configs,
                                          std::uint64_t seed, bool exhaustive = false,
                                          int threads = 1);

}  // namespace survmil
