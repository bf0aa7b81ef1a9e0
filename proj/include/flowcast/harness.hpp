#pragma once

// Experiment orchestration: warp-training sets, instance forecasting over a
// horizon, evaluation, the end-to-end pipeline and the training-regime grid.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowcast/aggregate.hpp"
#include "flowcast/masknet.hpp"
#include "flowcast/metrics.hpp"
#include "flowcast/ofnet.hpp"
#include "flowcast/synthgen.hpp"
#include "flowcast/tracker.hpp"

namespace flowcast {

inline constexpr int kShortTermSteps = 3;
inline constexpr int kMidTermSteps = 9;

/// "short" -> 3, "mid" -> 9, or a positive integer.
int horizon_steps(const std::string& horizon);

enum class FlowSource { kOracle, kPredicted };
enum class FlowFeeding { kAutoregressive, kTeacherForced };
enum class ForecastMethod { kMaskNet, kCopy, kShift, kWarp };
enum class WarpMode { kPerStep, kSingleShot };

std::string to_string(FlowSource v);
std::string to_string(FlowFeeding v);
std::string to_string(ForecastMethod v);
std::string to_string(WarpMode v);
FlowSource parse_flow_source(const std::string& s);
FlowFeeding parse_flow_feeding(const std::string& s);
ForecastMethod parse_method(const std::string& s);
WarpMode parse_warp_mode(const std::string& s);

/// (flow_t, S_t, M_t, M_{t+1}) for every tracked instance and transition,
/// with ground-truth flows. Tracks that end early supervise an empty mask.
WarpDataset build_oracle_dataset(std::span<const SequenceSample> data, const TrackerConfig& tracker = {});

/// Future flows for steps [anchor, anchor + steps) of every sequence:
/// autoregressive rollout or one-step predictions from ground-truth windows.
std::vector<std::vector<FlowField>> predict_future_flows(std::span<const SequenceSample> data,
                                                         const FlowForecaster& forecaster, int anchor, int steps,
                                                         FlowFeeding feeding);

/// Ground-truth flows for steps [anchor, anchor + steps).
std::vector<std::vector<FlowField>> oracle_future_flows(std::span<const SequenceSample> data, int anchor, int steps);

/// Pairs each predicted flow at rollout step k with the ground-truth S, M at
/// anchor + k and the target at anchor + k + 1. Anchors start at T and
/// advance by anchor_stride; each rollout is cut to fit the sequence.
WarpDataset build_predicted_dataset(std::span<const SequenceSample> data, const FlowForecaster& forecaster, int steps,
                                    FlowFeeding feeding, int anchor_stride, const TrackerConfig& tracker = {});

struct ForecastOptions {
  ForecastMethod method = ForecastMethod::kMaskNet;
  WarpMode mode = WarpMode::kPerStep;
  RescoreConfig rescore = RescoreConfig::for_width(128);
};

struct InstanceForecast {
  std::vector<InstanceMask> instances;  // non-empty masks with rescored scores
  SemanticMap semantic;
};

/// Moves every tracked instance of frame `anchor` through future_flows.
/// Per-step MaskNet re-fuses the semantic input from the warped instances.
InstanceForecast forecast_instances(const SequenceSample& sample, int anchor, std::span<const FlowField> future_flows,
                                    const MaskWarper* warper, const ForecastOptions& opts);

struct EvalReport {
  int steps = 0;
  int anchor = 0;
  int sequences = 0;
  double ap = 0.0;
  double ap50 = 0.0;
  double iou = 0.0;
  std::vector<std::optional<double>> class_iou;
  std::vector<FlowMse> flow_mse;
  nlohmann::json config;
};

void to_json(nlohmann::json& j, const EvalReport& r);

EvalReport evaluate_forecasts(std::span<const SequenceSample> data, int anchor, int steps,
                              std::span<const InstanceForecast> forecasts,
                              const std::vector<std::vector<FlowField>>* flows = nullptr);

struct ExperimentConfig {
  std::string name = "experiment";
  std::string horizon = "short";  // "short", "mid", or a positive step count
  std::uint64_t seed = 0;          // model initialisation and sampling; data uses scene.seed
  int threads = 1;

  // data: an existing manifest, or a scene config + count to synthesise in memory
  std::string manifest;
  SceneConfig scene;
  int n_sequences = 200;

  ForecasterConfig ofnet;
  ForecasterHyper ofnet_hyper;
  std::string ofnet_checkpoint;  // loaded when set; otherwise trained

  WarperConfig masknet;
  WarperHyper pretrain_hyper;
  WarperHyper finetune_hyper;
  bool pretrain = true;
  bool finetune = true;
  std::string trainable_layers = "2";
  FlowFeeding finetune_feeding = FlowFeeding::kAutoregressive;
  int anchor_stride = 3;
  int finetune_steps = kMidTermSteps;  // rollout length behind each finetuning anchor
  int mask_train_sequences = 0;  // 0 uses every training sequence
  std::string masknet_checkpoint;  // loaded when set; otherwise trained

  FlowSource eval_flow = FlowSource::kPredicted;
  ForecastMethod method = ForecastMethod::kMaskNet;
  WarpMode warp_mode = WarpMode::kPerStep;
  TrackerConfig tracker;

  int steps() const;
  ForecastOptions forecast_options() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Desk-scale defaults used by the CLI quickstart and acceptance suite.
ExperimentConfig desk_config();

/// Shared state for many pipeline runs over one dataset: the data split, the
/// forecaster, and cached flow predictions and warp-training sets.
class Workbench {
 public:
  explicit Workbench(const ExperimentConfig& base);

  const ExperimentConfig& base() const { return base_; }
  const std::vector<SequenceSample>& train() const { return train_; }
  const std::vector<SequenceSample>& val() const { return val_; }
  std::span<const SequenceSample> mask_train() const;

  const FlowForecaster& forecaster();
  const TrainingLog* forecaster_log() const { return forecaster_log_ ? &*forecaster_log_ : nullptr; }
  void set_forecaster(FlowForecaster model);

  int anchor() const { return base_.ofnet.sequence_length; }
  const std::vector<std::vector<FlowField>>& eval_flows(int steps, FlowSource source);
  const WarpDataset& oracle_dataset();
  const WarpDataset& predicted_dataset(int steps, FlowFeeding feeding);

  /// Oracle-flow pretraining for one seed (cached).
  const MaskWarper& pretrained(std::uint64_t seed);

 private:
  ExperimentConfig base_;
  std::vector<SequenceSample> train_;
  std::vector<SequenceSample> val_;
  std::optional<FlowForecaster> forecaster_;
  std::optional<TrainingLog> forecaster_log_;
  std::map<std::pair<int, int>, std::vector<std::vector<FlowField>>> eval_flows_;
  std::unique_ptr<WarpDataset> oracle_;
  std::map<std::pair<int, int>, std::unique_ptr<WarpDataset>> predicted_;
  std::map<std::uint64_t, MaskWarper> pretrained_;
};

/// Trains the mask warper described by cfg (pretrain and/or finetune stages).
MaskWarper train_warper(Workbench& bench, const ExperimentConfig& cfg);

/// Evaluates cfg.method at cfg.horizon on the validation split.
EvalReport evaluate(Workbench& bench, const ExperimentConfig& cfg, const MaskWarper* warper);

/// Full pipeline: data, forecaster, warper stages, forecast, metrics.
EvalReport run_pipeline(Workbench& bench, const ExperimentConfig& cfg);
EvalReport run_pipeline(const ExperimentConfig& cfg);

struct Regime {
  std::string name;
  bool uses_masknet = true;
  bool pretrain = true;
  bool finetune = false;
  std::string trainable_layers = "all";
  FlowFeeding feeding = FlowFeeding::kAutoregressive;
};

/// Warping baseline, pretrain-only, predicted-only (all layers),
/// pretrain + finetune(3), pretrain + finetune(2).
std::vector<Regime> standard_regimes();

struct AblationRow {
  Regime regime;
  std::vector<EvalReport> short_term;  // one per seed
  std::vector<EvalReport> mid_term;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
};

void to_json(nlohmann::json& j, const AblationTable& t);

/// Mean of a metric over seeds.
double seed_mean(const std::vector<EvalReport>& reports, double EvalReport::*metric);

AblationTable run_ablation_grid(Workbench& bench, std::span<const Regime> regimes, std::span<const std::uint64_t> seeds);

/// Plain-text rendering of the grid.
std::string format_table(const AblationTable& table);

}  // namespace flowcast
