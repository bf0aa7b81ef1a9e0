#include "flowcast/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "flowcast/errors.hpp"
#include "flowcast/log.hpp"
#include "flowcast/tensor_io.hpp"
#include "flowcast/warpop.hpp"

namespace flowcast {

int horizon_steps(const std::string& horizon) {
  if (horizon == "short") return kShortTermSteps;
  if (horizon == "mid") return kMidTermSteps;
  try {
    std::size_t used = 0;
    const int n = std::stoi(horizon, &used);
    if (used == horizon.size() && n > 0) return n;
  } catch (const std::exception&) {
  }
  throw ConfigError("horizon must be 'short', 'mid' or a positive integer, got '" + horizon + "'");
}

std::string to_string(FlowSource v) { return v == FlowSource::kOracle ? "oracle" : "predicted"; }
std::string to_string(FlowFeeding v) { return v == FlowFeeding::kAutoregressive ? "autoregressive" : "teacher_forced"; }
std::string to_string(WarpMode v) { return v == WarpMode::kPerStep ? "per_step" : "single_shot"; }

std::string to_string(ForecastMethod v) {
  switch (v) {
    case ForecastMethod::kMaskNet: return "masknet";
    case ForecastMethod::kCopy: return "copy";
    case ForecastMethod::kShift: return "shift";
    case ForecastMethod::kWarp: return "warp";
  }
  return "?";
}

FlowSource parse_flow_source(const std::string& s) {
  if (s == "oracle") return FlowSource::kOracle;
  if (s == "predicted") return FlowSource::kPredicted;
  throw ConfigError("flow source must be 'oracle' or 'predicted', got '" + s + "'");
}

FlowFeeding parse_flow_feeding(const std::string& s) {
  if (s == "autoregressive") return FlowFeeding::kAutoregressive;
  if (s == "teacher_forced") return FlowFeeding::kTeacherForced;
  throw ConfigError("flow feeding must be 'autoregressive' or 'teacher_forced', got '" + s + "'");
}

ForecastMethod parse_method(const std::string& s) {
  if (s == "masknet") return ForecastMethod::kMaskNet;
  if (s == "copy") return ForecastMethod::kCopy;
  if (s == "shift") return ForecastMethod::kShift;
  if (s == "warp") return ForecastMethod::kWarp;
  throw ConfigError("method must be one of masknet, copy, shift, warp; got '" + s + "'");
}

WarpMode parse_warp_mode(const std::string& s) {
  if (s == "per_step") return WarpMode::kPerStep;
  if (s == "single_shot") return WarpMode::kSingleShot;
  throw ConfigError("warp mode must be 'per_step' or 'single_shot', got '" + s + "'");
}

namespace {

// Adds one example per (track, frame) for frames in [first, last), using
// flow_index[f - first] as the flow entry for frame f.
void add_track_examples(WarpDataset& out, const SequenceSample& sample, const TrackerConfig& tracker, int first,
                        int last, std::span<const int> flow_index) {
  const auto tracks = build_tracks(sample, tracker);
  std::vector<int> sem_index(static_cast<std::size_t>(last - first), -1);
  for (const auto& track : tracks) {
    int mask_prev = -1;
    for (int f = std::max(first, track.birth_frame); f < last && f <= track.last_frame(); ++f) {
      const auto& masks = sample.instances[static_cast<std::size_t>(f)];
      auto& sem = sem_index[static_cast<std::size_t>(f - first)];
      if (sem < 0) sem = out.add_semantic(sample.semantics[static_cast<std::size_t>(f)]);
      const int mask = mask_prev >= 0 ? mask_prev : out.add_mask(masks[static_cast<std::size_t>(*track.index_at(f))].mask);
      int target;
      if (const auto next = track.index_at(f + 1)) {
        target = out.add_mask(sample.instances[static_cast<std::size_t>(f + 1)][static_cast<std::size_t>(*next)].mask);
      } else {
        target = out.empty_mask(sample.height(), sample.width());
      }
      out.examples.push_back({flow_index[static_cast<std::size_t>(f - first)], sem, mask, target});
      mask_prev = target;
    }
  }
}

int uniform_frames(std::span<const SequenceSample> data) {
  if (data.empty()) throw ConfigError("no sequences");
  const int frames = data.front().frames();
  for (const auto& s : data) {
    if (s.frames() != frames) throw ShapeError("sequences must share one frame count");
  }
  return frames;
}

FlowField sum_flows(std::span<const FlowField> flows) {
  FlowField total(flows.front().height(), flows.front().width());
  for (const auto& f : flows) {
    require_same_shape(total.u, f.u, "flow sum");
    auto tu = total.u.values();
    auto tv = total.v.values();
    const auto fu = f.u.values();
    const auto fv = f.v.values();
    for (std::size_t i = 0; i < tu.size(); ++i) {
      tu[i] += fu[i];
      tv[i] += fv[i];
    }
  }
  return total;
}

std::vector<InstanceMask> rescored(std::span<const InstanceMask> instances, const RescoreConfig& cfg) {
  std::vector<InstanceMask> out;
  for (const auto& inst : instances) {
    if (inst.is_empty()) continue;
    auto copy = inst;
    copy.score = rescore(inst, cfg);
    out.push_back(std::move(copy));
  }
  return out;
}

// One learned warp of every non-empty instance; empty ones stay empty.
void masknet_step(std::vector<InstanceMask>& current, const FlowField& flow, const SemanticMap& sem,
                  const MaskWarper& warper) {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < current.size(); ++i) {
    if (!current[i].is_empty()) live.push_back(i);
  }
  if (live.empty()) return;
  const auto flow_t = nn::flow_to_tensor(flow);
  const auto sem_t = nn::grid_to_tensor(sem.labels) / static_cast<float>(kNumClasses);
  std::vector<torch::Tensor> inputs;
  for (const auto i : live) inputs.push_back(torch::cat({flow_t, sem_t, nn::grid_to_tensor(current[i].mask)}, 0));
  const auto prob = warper.predict_prob(torch::stack(inputs));
  const auto on = (prob > warper.config().threshold).to(torch::kUInt8).contiguous();
  const auto* bits = on.data_ptr<std::uint8_t>();
  const std::size_t plane = static_cast<std::size_t>(flow.height()) * static_cast<std::size_t>(flow.width());
  for (std::size_t k = 0; k < live.size(); ++k) {
    auto values = current[live[k]].mask.values();
    std::copy(bits + k * plane, bits + (k + 1) * plane, values.begin());
  }
}

}  // namespace

WarpDataset build_oracle_dataset(std::span<const SequenceSample> data, const TrackerConfig& tracker) {
  if (data.empty()) throw ConfigError("no sequences");
  for (const auto& s : data) {
    if (s.height() != data.front().height() || s.width() != data.front().width()) {
      throw ShapeError("sequences must share one resolution");
    }
  }
  WarpDataset out;
  for (const auto& sample : data) {
    const int last = sample.frames() - 1;
    std::vector<int> flow_index;
    for (int f = 0; f < last; ++f) flow_index.push_back(out.add_flow(sample.flows[static_cast<std::size_t>(f)]));
    add_track_examples(out, sample, tracker, 0, last, flow_index);
  }
  return out;
}

std::vector<std::vector<FlowField>> oracle_future_flows(std::span<const SequenceSample> data, int anchor, int steps) {
  std::vector<std::vector<FlowField>> out;
  for (const auto& s : data) {
    if (anchor < 0 || steps < 1 || anchor + steps > static_cast<int>(s.flows.size())) {
      throw ConfigError("horizon exceeds the sequence length");
    }
    out.emplace_back(s.flows.begin() + anchor, s.flows.begin() + anchor + steps);
  }
  return out;
}

std::vector<std::vector<FlowField>> predict_future_flows(std::span<const SequenceSample> data,
                                                         const FlowForecaster& forecaster, int anchor, int steps,
                                                         FlowFeeding feeding) {
  const int T = forecaster.config().sequence_length;
  const int frames = uniform_frames(data);
  if (anchor < T) throw ConfigError("anchor must leave T past flows");
  if (steps < 1 || anchor + steps > frames - 1) throw ConfigError("horizon exceeds the sequence length");
  const int first = anchor - T;
  const int count = feeding == FlowFeeding::kAutoregressive ? T : T + steps - 1;
  std::vector<torch::Tensor> windows;
  for (const auto& s : data) {
    windows.push_back(nn::stack_flows(std::span(s.flows).subspan(static_cast<std::size_t>(first),
                                                                 static_cast<std::size_t>(count))));
  }
  const auto batch = torch::stack(windows);
  const auto pred = feeding == FlowFeeding::kAutoregressive ? forecaster.rollout(batch, steps)
                                                            : forecaster.teacher_forced(batch, steps);
  std::vector<std::vector<FlowField>> out;
  for (int64_t i = 0; i < pred.size(0); ++i) out.push_back(nn::unstack_flows(pred[i]));
  return out;
}

WarpDataset build_predicted_dataset(std::span<const SequenceSample> data, const FlowForecaster& forecaster, int steps,
                                    FlowFeeding feeding, int anchor_stride, const TrackerConfig& tracker) {
  if (anchor_stride < 1 || steps < 1) throw ConfigError("anchor stride and steps must be positive");
  const int T = forecaster.config().sequence_length;
  const int frames = uniform_frames(data);
  WarpDataset out;
  for (int anchor = T; anchor < frames - 1; anchor += anchor_stride) {
    const int n = std::min(steps, frames - 1 - anchor);
    const auto flows = predict_future_flows(data, forecaster, anchor, n, feeding);
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::vector<int> flow_index;
      for (const auto& f : flows[i]) flow_index.push_back(out.add_flow(f));
      add_track_examples(out, data[i], tracker, anchor, anchor + n, flow_index);
    }
  }
  if (out.examples.empty()) throw ConfigError("no anchors fit the sequences; need more than T + 1 frames");
  return out;
}

InstanceForecast forecast_instances(const SequenceSample& sample, int anchor, std::span<const FlowField> future_flows,
                                    const MaskWarper* warper, const ForecastOptions& opts) {
  if (anchor < 0 || anchor >= sample.frames()) throw ConfigError("anchor outside the sequence");
  if (future_flows.empty()) throw ConfigError("forecast needs at least one future flow");
  const int h = sample.height(), w = sample.width();
  for (const auto& f : future_flows) {
    if (f.height() != h || f.width() != w) {
      throw ShapeError("flow " + std::to_string(f.height()) + "x" + std::to_string(f.width()) +
                       " does not match frames " + std::to_string(h) + "x" + std::to_string(w));
    }
  }
  std::vector<InstanceMask> current;
  for (const auto& inst : sample.instances[static_cast<std::size_t>(anchor)]) {
    if (!inst.is_empty()) current.push_back(inst);
  }
  const bool single = opts.mode == WarpMode::kSingleShot;
  const FlowField total = single ? sum_flows(future_flows) : FlowField{};
  const auto step_flows = single ? std::span<const FlowField>(&total, 1) : future_flows;

  switch (opts.method) {
    case ForecastMethod::kCopy:
      break;
    case ForecastMethod::kShift:
      for (auto& inst : current) inst = shift_iterated(inst, step_flows);
      break;
    case ForecastMethod::kWarp:
      for (auto& inst : current) inst = warp_iterated(inst, step_flows);
      break;
    case ForecastMethod::kMaskNet: {
      if (warper == nullptr) throw ConfigError("masknet forecasting needs a trained warper");
      SemanticMap sem = sample.semantics[static_cast<std::size_t>(anchor)];
      for (std::size_t k = 0; k < step_flows.size(); ++k) {
        masknet_step(current, step_flows[k], sem, *warper);
        if (k + 1 < step_flows.size()) sem = fuse_semantic(rescored(current, opts.rescore), h, w);
      }
      break;
    }
  }
  InstanceForecast out;
  out.instances = rescored(current, opts.rescore);
  out.semantic = fuse_semantic(out.instances, h, w);
  return out;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.class_iou) classes.push_back(c ? nlohmann::json(*c) : nlohmann::json(nullptr));
  nlohmann::json mse = nlohmann::json::array();
  for (std::size_t k = 0; k < r.flow_mse.size(); ++k) {
    mse.push_back({{"step", k + 1}, {"mse", r.flow_mse[k].mse}, {"mse_u", r.flow_mse[k].mse_u},
                   {"mse_v", r.flow_mse[k].mse_v}});
  }
  j = {{"report_version", 1}, {"steps", r.steps}, {"anchor", r.anchor}, {"sequences", r.sequences},
       {"ap", r.ap},          {"ap50", r.ap50},   {"iou", r.iou},       {"class_iou", classes},
       {"flow_mse", mse},     {"config", r.config}};
}

EvalReport evaluate_forecasts(std::span<const SequenceSample> data, int anchor, int steps,
                              std::span<const InstanceForecast> forecasts,
                              const std::vector<std::vector<FlowField>>* flows) {
  if (forecasts.size() != data.size()) throw ShapeError("one forecast per sequence is required");
  if (flows != nullptr && flows->size() != data.size()) throw ShapeError("one flow rollout per sequence is required");
  EvalReport report;
  report.steps = steps;
  report.anchor = anchor;
  report.sequences = static_cast<int>(data.size());
  const int target = anchor + steps;
  std::vector<std::vector<InstanceMask>> preds, gts;
  SemanticIouAccumulator acc;
  std::vector<FlowMse> mse_sum(static_cast<std::size_t>(flows ? steps : 0));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    if (target >= s.frames()) throw ConfigError("horizon exceeds the sequence length");
    preds.push_back(forecasts[i].instances);
    gts.push_back(s.instances[static_cast<std::size_t>(target)]);
    acc.add(forecasts[i].semantic, s.semantics[static_cast<std::size_t>(target)]);
    if (flows != nullptr) {
      const auto& p = (*flows)[i];
      if (static_cast<int>(p.size()) != steps) throw ShapeError("flow rollout length does not match the horizon");
      const auto m = flow_mse(p, std::span(s.flows).subspan(static_cast<std::size_t>(anchor),
                                                            static_cast<std::size_t>(steps)));
      for (std::size_t k = 0; k < m.size(); ++k) {
        mse_sum[k].mse += m[k].mse;
        mse_sum[k].mse_u += m[k].mse_u;
        mse_sum[k].mse_v += m[k].mse_v;
      }
    }
  }
  const auto ap = average_precision(preds, gts);
  report.ap = ap.ap;
  report.ap50 = ap.ap50;
  const auto iou = acc.result();
  report.iou = iou.mean;
  report.class_iou = iou.per_class;
  const double n = static_cast<double>(std::max<std::size_t>(data.size(), 1));
  for (auto& m : mse_sum) report.flow_mse.push_back({m.mse / n, m.mse_u / n, m.mse_v / n});
  return report;
}

int ExperimentConfig::steps() const { return horizon_steps(horizon); }

ForecastOptions ExperimentConfig::forecast_options() const {
  ForecastOptions o;
  o.method = method;
  o.mode = warp_mode;
  o.rescore = RescoreConfig::for_width(scene.width);
  return o;
}

void ExperimentConfig::validate() const {
  (void)steps();
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (manifest.empty()) {
    scene.validate();
    if (n_sequences < 2) throw ConfigError("need at least two sequences for a train/val split");
  }
  ofnet.validate();
  masknet.validate();
  if (anchor_stride < 1 || finetune_steps < 1) throw ConfigError("anchor_stride and finetune_steps must be positive");
  if (mask_train_sequences < 0) throw ConfigError("mask_train_sequences must be >= 0");
  (void)LayerSelection::parse(trainable_layers);
  if (method == ForecastMethod::kMaskNet && masknet_checkpoint.empty() && !pretrain && !finetune) {
    throw ConfigError("masknet needs a checkpoint or at least one training stage");
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"name", c.name},
       {"horizon", c.horizon},
       {"seed", c.seed},
       {"threads", c.threads},
       {"manifest", c.manifest},
       {"scene", c.scene},
       {"n_sequences", c.n_sequences},
       {"ofnet", c.ofnet},
       {"ofnet_hyper", c.ofnet_hyper},
       {"ofnet_checkpoint", c.ofnet_checkpoint},
       {"masknet", c.masknet},
       {"pretrain_hyper", c.pretrain_hyper},
       {"finetune_hyper", c.finetune_hyper},
       {"pretrain", c.pretrain},
       {"finetune", c.finetune},
       {"trainable_layers", c.trainable_layers},
       {"finetune_feeding", to_string(c.finetune_feeding)},
       {"anchor_stride", c.anchor_stride},
       {"finetune_steps", c.finetune_steps},
       {"mask_train_sequences", c.mask_train_sequences},
       {"masknet_checkpoint", c.masknet_checkpoint},
       {"eval_flow", to_string(c.eval_flow)},
       {"method", to_string(c.method)},
       {"warp_mode", to_string(c.warp_mode)},
       {"tracker", {{"iou_threshold", c.tracker.iou_threshold}, {"same_class_only", c.tracker.same_class_only}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  const ExperimentConfig d = desk_config();
  c = d;
  c.name = j.value("name", d.name);
  c.horizon = j.value("horizon", d.horizon);
  c.seed = j.value("seed", d.seed);
  c.threads = j.value("threads", d.threads);
  c.manifest = j.value("manifest", d.manifest);
  if (j.contains("scene")) c.scene = j.at("scene").get<SceneConfig>();
  c.n_sequences = j.value("n_sequences", d.n_sequences);
  if (j.contains("ofnet")) c.ofnet = j.at("ofnet").get<ForecasterConfig>();
  if (j.contains("ofnet_hyper")) c.ofnet_hyper = j.at("ofnet_hyper").get<ForecasterHyper>();
  c.ofnet_checkpoint = j.value("ofnet_checkpoint", d.ofnet_checkpoint);
  if (j.contains("masknet")) c.masknet = j.at("masknet").get<WarperConfig>();
  if (j.contains("pretrain_hyper")) c.pretrain_hyper = j.at("pretrain_hyper").get<WarperHyper>();
  if (j.contains("finetune_hyper")) c.finetune_hyper = j.at("finetune_hyper").get<WarperHyper>();
  c.pretrain = j.value("pretrain", d.pretrain);
  c.finetune = j.value("finetune", d.finetune);
  if (j.contains("trainable_layers")) {
    const auto& t = j.at("trainable_layers");
    c.trainable_layers = t.is_number_integer() ? std::to_string(t.get<int>()) : t.get<std::string>();
  }
  c.finetune_feeding = parse_flow_feeding(j.value("finetune_feeding", to_string(d.finetune_feeding)));
  c.anchor_stride = j.value("anchor_stride", d.anchor_stride);
  c.finetune_steps = j.value("finetune_steps", d.finetune_steps);
  c.mask_train_sequences = j.value("mask_train_sequences", d.mask_train_sequences);
  c.masknet_checkpoint = j.value("masknet_checkpoint", d.masknet_checkpoint);
  c.eval_flow = parse_flow_source(j.value("eval_flow", to_string(d.eval_flow)));
  c.method = parse_method(j.value("method", to_string(d.method)));
  c.warp_mode = parse_warp_mode(j.value("warp_mode", to_string(d.warp_mode)));
  if (j.contains("tracker")) {
    const auto& t = j.at("tracker");
    c.tracker.iou_threshold = t.value("iou_threshold", d.tracker.iou_threshold);
    c.tracker.same_class_only = t.value("same_class_only", d.tracker.same_class_only);
  }
  c.validate();
}

ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.name = "desk";
  c.scene.background_u = {-1.5, 1.5};
  c.scene.background_v = {-0.5, 0.5};
  c.n_sequences = 200;
  c.ofnet.hidden_channels = 8;
  c.ofnet_hyper.lr = 1e-3;
  c.ofnet_hyper.epochs = 1;
  c.ofnet_hyper.windows_per_epoch = 900;
  c.pretrain_hyper.lr = 1e-3;
  c.pretrain_hyper.epochs = 4;
  c.finetune_hyper.lr = 1e-3;
  c.finetune_hyper.epochs = 3;
  c.mask_train_sequences = 30;
  return c;
}

Workbench::Workbench(const ExperimentConfig& base) : base_(base) {
  base_.validate();
  torch::set_num_threads(base_.threads);
  if (!base_.manifest.empty()) {
    const auto manifest = load_manifest(base_.manifest);
    train_ = load_split(manifest, "train");
    val_ = load_split(manifest, "val");
  } else {
    for (int i = 0; i < base_.n_sequences; ++i) {
      SceneConfig cfg = base_.scene;
      cfg.seed = base_.scene.seed + static_cast<std::uint64_t>(i);
      auto sample = generate(cfg);
      (cfg.seed % 2 == 0 ? train_ : val_).push_back(std::move(sample));
    }
  }
  if (train_.empty() || val_.empty()) throw ConfigError("both train and val splits must be non-empty");
  const auto& first = train_.front();
  if (first.height() != base_.ofnet.height || first.width() != base_.ofnet.width ||
      first.height() != base_.masknet.height || first.width() != base_.masknet.width) {
    throw ShapeError("data resolution " + std::to_string(first.height()) + "x" + std::to_string(first.width()) +
                     " does not match the model configs");
  }
  log_event("workbench_ready", {{"train", train_.size()}, {"val", val_.size()}});
}

std::span<const SequenceSample> Workbench::mask_train() const {
  const std::size_t n = base_.mask_train_sequences > 0
                            ? std::min(train_.size(), static_cast<std::size_t>(base_.mask_train_sequences))
                            : train_.size();
  return std::span(train_).first(n);
}

const FlowForecaster& Workbench::forecaster() {
  if (!forecaster_) {
    if (!base_.ofnet_checkpoint.empty()) {
      if (!std::filesystem::exists(base_.ofnet_checkpoint)) {
        throw ConfigError("missing flow checkpoint: " + base_.ofnet_checkpoint);
      }
      forecaster_ = FlowForecaster::load(base_.ofnet_checkpoint);
    } else {
      FlowForecaster model(base_.ofnet, base_.ofnet_hyper.seed);
      forecaster_log_ = train_ofnet(model, train_, base_.ofnet_hyper);
      forecaster_ = std::move(model);
    }
  }
  return *forecaster_;
}

void Workbench::set_forecaster(FlowForecaster model) {
  forecaster_ = std::move(model);
  eval_flows_.clear();
  predicted_.clear();
}

const std::vector<std::vector<FlowField>>& Workbench::eval_flows(int steps, FlowSource source) {
  const auto key = std::make_pair(steps, static_cast<int>(source));
  auto it = eval_flows_.find(key);
  if (it == eval_flows_.end()) {
    auto flows = source == FlowSource::kOracle
                     ? oracle_future_flows(val_, anchor(), steps)
                     : predict_future_flows(val_, forecaster(), anchor(), steps, FlowFeeding::kAutoregressive);
    it = eval_flows_.emplace(key, std::move(flows)).first;
  }
  return it->second;
}

const WarpDataset& Workbench::oracle_dataset() {
  if (!oracle_) oracle_ = std::make_unique<WarpDataset>(build_oracle_dataset(mask_train(), base_.tracker));
  return *oracle_;
}

const WarpDataset& Workbench::predicted_dataset(int steps, FlowFeeding feeding) {
  auto& slot = predicted_[std::make_pair(steps, static_cast<int>(feeding))];
  if (!slot) {
    slot = std::make_unique<WarpDataset>(
        build_predicted_dataset(mask_train(), forecaster(), steps, feeding, base_.anchor_stride, base_.tracker));
    log_event("predicted_dataset", {{"steps", steps}, {"feeding", to_string(feeding)},
                                    {"examples", slot->examples.size()}});
  }
  return *slot;
}

const MaskWarper& Workbench::pretrained(std::uint64_t seed) {
  auto it = pretrained_.find(seed);
  if (it == pretrained_.end()) {
    MaskWarper model(base_.masknet, seed);
    auto hyper = base_.pretrain_hyper;
    hyper.seed = seed;
    train_masknet_pretrain(model, oracle_dataset(), hyper);
    it = pretrained_.emplace(seed, std::move(model)).first;
  }
  return it->second;
}

MaskWarper train_warper(Workbench& bench, const ExperimentConfig& cfg) {
  if (!cfg.masknet_checkpoint.empty()) {
    if (!std::filesystem::exists(cfg.masknet_checkpoint)) {
      throw ConfigError("missing mask checkpoint: " + cfg.masknet_checkpoint);
    }
    return MaskWarper::load(cfg.masknet_checkpoint);
  }
  if (!cfg.pretrain && !cfg.finetune) throw ConfigError("no warper training stage enabled");
  MaskWarper model = cfg.pretrain ? bench.pretrained(cfg.seed).clone() : MaskWarper(cfg.masknet, cfg.seed);
  if (cfg.finetune) {
    auto hyper = cfg.finetune_hyper;
    hyper.seed = cfg.seed;
    // Without pretraining, the predicted-flow stage is the only one and gets the pretraining budget.
    if (!cfg.pretrain) hyper = cfg.pretrain_hyper, hyper.seed = cfg.seed;
    train_masknet_finetune(model, bench.predicted_dataset(cfg.finetune_steps, cfg.finetune_feeding), hyper,
                           LayerSelection::parse(cfg.trainable_layers));
  }
  return model;
}

EvalReport evaluate(Workbench& bench, const ExperimentConfig& cfg, const MaskWarper* warper) {
  const int steps = cfg.steps();
  const auto& val = bench.val();
  const auto& flows = bench.eval_flows(steps, cfg.eval_flow);
  const auto opts = cfg.forecast_options();
  std::vector<InstanceForecast> forecasts;
  forecasts.reserve(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    forecasts.push_back(forecast_instances(val[i], bench.anchor(), flows[i], warper, opts));
  }
  const bool predicted = cfg.eval_flow == FlowSource::kPredicted;
  auto report = evaluate_forecasts(val, bench.anchor(), steps, forecasts, predicted ? &flows : nullptr);
  report.config = cfg;
  log_event("evaluate", {{"name", cfg.name}, {"steps", steps}, {"method", to_string(cfg.method)},
                         {"ap", report.ap}, {"ap50", report.ap50}, {"iou", report.iou}});
  return report;
}

EvalReport run_pipeline(Workbench& bench, const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.method == ForecastMethod::kMaskNet) {
    const auto warper = train_warper(bench, cfg);
    return evaluate(bench, cfg, &warper);
  }
  return evaluate(bench, cfg, nullptr);
}

EvalReport run_pipeline(const ExperimentConfig& cfg) {
  Workbench bench(cfg);
  return run_pipeline(bench, cfg);
}

std::vector<Regime> standard_regimes() {
  return {
      {"warping", false, false, false, "all", FlowFeeding::kAutoregressive},
      {"pretrain_only", true, true, false, "all", FlowFeeding::kAutoregressive},
      {"predicted_only_all", true, false, true, "all", FlowFeeding::kAutoregressive},
      {"pretrain_finetune_3", true, true, true, "3", FlowFeeding::kAutoregressive},
      {"pretrain_finetune_2", true, true, true, "2", FlowFeeding::kAutoregressive},
  };
}

void to_json(nlohmann::json& j, const AblationTable& t) {
  j = {{"seeds", t.seeds}, {"rows", nlohmann::json::array()}};
  for (const auto& row : t.rows) {
    j["rows"].push_back({{"regime", row.regime.name},
                         {"train_data", row.regime.pretrain ? (row.regime.finetune ? "oracle+predicted" : "oracle")
                                                            : (row.regime.finetune ? "predicted" : "none")},
                         {"finetuned_layers", row.regime.finetune ? row.regime.trainable_layers : "-"},
                         {"feeding", to_string(row.regime.feeding)},
                         {"short", {{"ap", seed_mean(row.short_term, &EvalReport::ap)},
                                    {"ap50", seed_mean(row.short_term, &EvalReport::ap50)},
                                    {"iou", seed_mean(row.short_term, &EvalReport::iou)}}},
                         {"mid", {{"ap", seed_mean(row.mid_term, &EvalReport::ap)},
                                  {"ap50", seed_mean(row.mid_term, &EvalReport::ap50)},
                                  {"iou", seed_mean(row.mid_term, &EvalReport::iou)}}},
                         {"short_reports", row.short_term},
                         {"mid_reports", row.mid_term}});
  }
}

double seed_mean(const std::vector<EvalReport>& reports, double EvalReport::*metric) {
  if (reports.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : reports) sum += r.*metric;
  return sum / static_cast<double>(reports.size());
}

AblationTable run_ablation_grid(Workbench& bench, std::span<const Regime> regimes,
                                std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("the grid needs at least one seed");
  AblationTable table;
  table.seeds.assign(seeds.begin(), seeds.end());
  for (const auto& regime : regimes) {
    AblationRow row{regime, {}, {}};
    for (const auto seed : seeds) {
      ExperimentConfig cfg = bench.base();
      cfg.name = regime.name;
      cfg.seed = seed;
      cfg.masknet_checkpoint.clear();
      cfg.method = regime.uses_masknet ? ForecastMethod::kMaskNet : ForecastMethod::kWarp;
      cfg.pretrain = regime.pretrain;
      cfg.finetune = regime.finetune;
      cfg.trainable_layers = regime.trainable_layers;
      cfg.finetune_feeding = regime.feeding;
      cfg.eval_flow = FlowSource::kPredicted;
      std::optional<MaskWarper> warper;
      if (regime.uses_masknet) warper = train_warper(bench, cfg);
      const MaskWarper* w = warper ? &*warper : nullptr;
      cfg.horizon = "short";
      row.short_term.push_back(evaluate(bench, cfg, w));
      cfg.horizon = "mid";
      row.mid_term.push_back(evaluate(bench, cfg, w));
      log_event("grid_cell", {{"regime", regime.name}, {"seed", seed},
                              {"short_iou", row.short_term.back().iou}, {"mid_iou", row.mid_term.back().iou}});
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string format_table(const AblationTable& table) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %-17s %-7s | %7s %7s %7s | %7s %7s %7s\n", "regime", "train data", "layers",
                "AP", "AP50", "IoU", "AP", "AP50", "IoU");
  out << "seeds:";
  for (const auto s : table.seeds) out << ' ' << s;
  out << "\n" << std::string(48, ' ') << "|      short-term         |       mid-term\n" << line;
  for (const auto& row : table.rows) {
    const auto& r = row.regime;
    const std::string data = r.pretrain ? (r.finetune ? "oracle+predicted" : "oracle") : (r.finetune ? "predicted" : "-");
    std::snprintf(line, sizeof line, "%-22s %-17s %-7s | %7.2f %7.2f %7.2f | %7.2f %7.2f %7.2f\n", r.name.c_str(),
                  data.c_str(), r.finetune ? r.trainable_layers.c_str() : "-",
                  100 * seed_mean(row.short_term, &EvalReport::ap), 100 * seed_mean(row.short_term, &EvalReport::ap50),
                  100 * seed_mean(row.short_term, &EvalReport::iou), 100 * seed_mean(row.mid_term, &EvalReport::ap),
                  100 * seed_mean(row.mid_term, &EvalReport::ap50), 100 * seed_mean(row.mid_term, &EvalReport::iou));
    out << line;
  }
  return out.str();
}

}  // namespace flowcast
