#include "flowcast/ofnet.hpp"

#include <cmath>
#include <random>

#include "flowcast/checkpoint.hpp"
#include "flowcast/log.hpp"
#include "flowcast/tensor_io.hpp"
#include "sampling.hpp"

namespace flowcast {

void ForecasterConfig::validate() const {
  if (sequence_length < 1) throw ConfigError("sequence_length must be >= 1");
  if (feature_channels < 1 || hidden_channels < 1 || base_width < 1) throw ConfigError("channel counts must be positive");
  if (unet_depth < 0) throw ConfigError("unet_depth must be >= 0");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
  const int div = 1 << unet_depth;
  if (height <= 0 || width <= 0 || height % div != 0 || width % div != 0) {
    throw ConfigError("resolution must be divisible by 2^unet_depth");
  }
}

void to_json(nlohmann::json& j, const ForecasterConfig& c) {
  j = {{"sequence_length", c.sequence_length}, {"feature_channels", c.feature_channels},
       {"unet_depth", c.unet_depth},           {"base_width", c.base_width},
       {"hidden_channels", c.hidden_channels}, {"kernel_size", c.kernel_size},
       {"height", c.height},                   {"width", c.width},
       {"init", "he_uniform_conv/orthogonal_recurrent/zero_bias"}};
}

void from_json(const nlohmann::json& j, ForecasterConfig& c) {
  const ForecasterConfig d;
  c.sequence_length = j.value("sequence_length", d.sequence_length);
  c.feature_channels = j.value("feature_channels", d.feature_channels);
  c.unet_depth = j.value("unet_depth", d.unet_depth);
  c.base_width = j.value("base_width", d.base_width);
  c.hidden_channels = j.value("hidden_channels", d.hidden_channels);
  c.kernel_size = j.value("kernel_size", d.kernel_size);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
}

void to_json(nlohmann::json& j, const ForecasterHyper& h) {
  j = {{"optimizer", "adam"},      {"lr", h.lr},     {"batch_size", h.batch_size},
       {"epochs", h.epochs},       {"seed", h.seed}, {"windows_per_epoch", h.windows_per_epoch}};
}

void from_json(const nlohmann::json& j, ForecasterHyper& h) {
  const ForecasterHyper d;
  h.lr = j.value("lr", d.lr);
  h.batch_size = j.value("batch_size", d.batch_size);
  h.epochs = j.value("epochs", d.epochs);
  h.seed = j.value("seed", d.seed);
  h.windows_per_epoch = j.value("windows_per_epoch", d.windows_per_epoch);
}

void to_json(nlohmann::json& j, const TrainingLog& log) {
  j = {{"probe_loss_before", log.probe_loss_before},
       {"probe_loss_after", log.probe_loss_after},
       {"epoch_loss", log.epoch_loss}};
}

namespace nn {

ConvLstmCellImpl::ConvLstmCellImpl(int in_channels, int hidden_channels, int kernel_size) : hidden_(hidden_channels) {
  gates_ = register_module(
      "gates", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels + hidden_channels, 4 * hidden_channels, kernel_size)
                                     .padding(kernel_size / 2)));
  torch::NoGradGuard guard;
  init_conv(gates_);
  // Recurrent slice gets an orthogonal init over its flattened fan-in.
  auto recurrent = torch::empty({4 * hidden_channels, hidden_channels * kernel_size * kernel_size});
  torch::nn::init::orthogonal_(recurrent);
  gates_->weight.narrow(1, in_channels, hidden_channels)
      .copy_(recurrent.view({4 * hidden_channels, hidden_channels, kernel_size, kernel_size}));
}

std::pair<torch::Tensor, torch::Tensor> ConvLstmCellImpl::forward(const torch::Tensor& x, const torch::Tensor& h,
                                                                  const torch::Tensor& c) {
  const auto gates = gates_(torch::cat({x, h}, 1)).chunk(4, 1);
  const auto i = torch::sigmoid(gates[0]);
  const auto f = torch::sigmoid(gates[1]);
  const auto o = torch::sigmoid(gates[2]);
  const auto g = torch::tanh(gates[3]);
  auto c_next = f * c + i * g;
  auto h_next = o * torch::tanh(c_next);
  return {std::move(h_next), std::move(c_next)};
}

ForecasterNetImpl::ForecasterNetImpl(const ForecasterConfig& cfg) {
  cfg.validate();
  backbone_ = register_module("backbone", UNet(2, cfg.base_width, cfg.unet_depth, cfg.feature_channels));
  cell_ = register_module("cell", ConvLstmCell(cfg.feature_channels, cfg.hidden_channels, cfg.kernel_size));
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.hidden_channels, 2, 1)));
  init_conv(head_);
}

torch::Tensor ForecasterNetImpl::features(const torch::Tensor& flows) { return backbone_(flows); }

torch::Tensor ForecasterNetImpl::forward(const torch::Tensor& flows) {
  if (flows.dim() != 5 || flows.size(2) != 2) throw ShapeError("forecaster expects [N,T,2,H,W]");
  const int64_t n = flows.size(0), steps = flows.size(1), h = flows.size(3), w = flows.size(4);
  const auto feats = backbone_(flows.reshape({n * steps, 2, h, w})).view({n, steps, -1, h, w});
  auto hidden = torch::zeros({n, cell_->hidden_channels(), h, w}, flows.options());
  auto cell = torch::zeros_like(hidden);
  std::vector<torch::Tensor> outputs;
  outputs.reserve(static_cast<std::size_t>(steps));
  for (int64_t t = 0; t < steps; ++t) {
    std::tie(hidden, cell) = cell_(feats.select(1, t), hidden, cell);
    outputs.push_back(head_(hidden));
  }
  return torch::stack(outputs, 1);
}

torch::Tensor sequence_l2(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (!pred.sizes().equals(gt.sizes())) throw ShapeError("sequence_l2: prediction and target shapes differ");
  // Per-step normalisation by H*W*2 then the mean over steps and batch is the plain mean.
  return (pred - gt).pow(2).mean();
}

}  // namespace nn

FlowForecaster::FlowForecaster(const ForecasterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  torch::manual_seed(seed);
  net_ = nn::ForecasterNet(cfg_);
}

FlowForecaster FlowForecaster::load(const std::filesystem::path& path) {
  const auto ckpt = nn::load_checkpoint(path);
  FlowForecaster model(ckpt.config.at("model").get<ForecasterConfig>(), 0);
  nn::restore(*model.net_, ckpt, "ofnet");
  return model;
}

void FlowForecaster::save(const std::filesystem::path& path) const {
  nn::save_checkpoint(nn::capture(*net_, "ofnet", {{"model", cfg_}}), path);
}

void FlowForecaster::check_flow(const FlowField& flow) const {
  if (flow.height() != cfg_.height || flow.width() != cfg_.width) {
    throw ShapeError("flow is " + std::to_string(flow.height()) + "x" + std::to_string(flow.width()) +
                     ", forecaster expects " + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width));
  }
  require_same_shape(flow.u, flow.v, "forecaster input");
}

torch::Tensor FlowForecaster::extract_features(const FlowField& flow) const {
  check_flow(flow);
  torch::NoGradGuard guard;
  return net_->features(nn::flow_to_tensor(flow).unsqueeze(0)).squeeze(0);
}

std::vector<FlowField> FlowForecaster::forward_sequence(std::span<const FlowField> flows) const {
  if (static_cast<int>(flows.size()) != cfg_.sequence_length) {
    throw ShapeError("forward_sequence needs exactly " + std::to_string(cfg_.sequence_length) + " flows, got " +
                     std::to_string(flows.size()));
  }
  for (const auto& f : flows) check_flow(f);
  torch::NoGradGuard guard;
  return nn::unstack_flows(net_->forward(nn::stack_flows(flows).unsqueeze(0)).squeeze(0));
}

std::vector<FlowField> FlowForecaster::rollout(std::span<const FlowField> past, int n) const {
  if (static_cast<int>(past.size()) != cfg_.sequence_length) {
    throw ShapeError("rollout needs exactly " + std::to_string(cfg_.sequence_length) + " past flows");
  }
  for (const auto& f : past) check_flow(f);
  return nn::unstack_flows(rollout(nn::stack_flows(past).unsqueeze(0), n).squeeze(0));
}

namespace {

// Inference over many sequences runs in slices to bound activation memory.
constexpr int64_t kInferenceChunk = 4;

template <typename Fn>
torch::Tensor chunked(const torch::Tensor& batch, Fn&& fn) {
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < batch.size(0); i += kInferenceChunk) {
    parts.push_back(fn(batch.narrow(0, i, std::min(kInferenceChunk, batch.size(0) - i))));
  }
  return torch::cat(parts, 0);
}

}  // namespace

torch::Tensor FlowForecaster::rollout(const torch::Tensor& past, int n) const {
  if (n < 1) throw ConfigError("rollout length must be >= 1");
  if (past.dim() != 5 || past.size(1) != cfg_.sequence_length || past.size(2) != 2 || past.size(3) != cfg_.height ||
      past.size(4) != cfg_.width) {
    throw ShapeError("rollout expects [N,T,2,H,W] matching the forecaster config");
  }
  torch::NoGradGuard guard;
  return chunked(past, [&](const torch::Tensor& part) {
    auto window = part;
    std::vector<torch::Tensor> preds;
    for (int k = 0; k < n; ++k) {
      auto next = net_->forward(window).select(1, cfg_.sequence_length - 1);
      preds.push_back(next);
      window = torch::cat({window.narrow(1, 1, cfg_.sequence_length - 1), next.unsqueeze(1)}, 1);
    }
    return torch::stack(preds, 1);
  });
}

torch::Tensor FlowForecaster::teacher_forced(const torch::Tensor& flows, int n) const {
  const int T = cfg_.sequence_length;
  if (n < 1) throw ConfigError("teacher-forced length must be >= 1");
  if (flows.dim() != 5 || flows.size(1) != T + n - 1) throw ShapeError("teacher_forced expects [N,T+n-1,2,H,W]");
  torch::NoGradGuard guard;
  return chunked(flows, [&](const torch::Tensor& part) {
    std::vector<torch::Tensor> preds;
    for (int k = 0; k < n; ++k) preds.push_back(net_->forward(part.narrow(1, k, T)).select(1, T - 1));
    return torch::stack(preds, 1);
  });
}

TrainingLog train_ofnet(FlowForecaster& model, std::span<const SequenceSample> data, const ForecasterHyper& hyper) {
  const ForecasterConfig& cfg = model.config();
  const int T = cfg.sequence_length;
  if (hyper.batch_size < 1 || hyper.epochs < 0 || !(hyper.lr > 0.0)) throw ConfigError("invalid forecaster hyperparameters");

  std::vector<torch::Tensor> seqs;
  std::vector<std::pair<int, int>> windows;  // (sequence, first flow)
  for (const auto& s : data) {
    if (static_cast<int>(s.flows.size()) < T + 1) continue;
    for (const auto& f : s.flows) {
      if (f.height() != cfg.height || f.width() != cfg.width) throw ShapeError("training flow resolution mismatch");
    }
    seqs.push_back(nn::stack_flows(s.flows));
    const int idx = static_cast<int>(seqs.size()) - 1;
    for (int start = 0; start + T + 1 <= static_cast<int>(s.flows.size()); ++start) windows.emplace_back(idx, start);
  }
  if (windows.empty()) throw ConfigError("no training sequence provides T+1 consecutive flows");

  auto batch_of = [&](std::span<const std::pair<int, int>> items) {
    std::vector<torch::Tensor> in, target;
    for (const auto& [s, start] : items) {
      in.push_back(seqs[static_cast<std::size_t>(s)].narrow(0, start, T));
      target.push_back(seqs[static_cast<std::size_t>(s)].narrow(0, start + 1, T));
    }
    return std::pair{torch::stack(in), torch::stack(target)};
  };

  const std::size_t probe_count = std::min<std::size_t>(windows.size(), 12);
  const std::vector<std::pair<int, int>> probe(windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(probe_count));
  auto probe_loss = [&]() {
    torch::NoGradGuard guard;
    double sum = 0.0;
    for (std::size_t i = 0; i < probe.size(); i += 3) {
      const auto len = std::min<std::size_t>(3, probe.size() - i);
      auto [in, target] = batch_of(std::span(probe).subspan(i, len));
      sum += nn::sequence_l2(model.net()->forward(in), target).item<double>() * static_cast<double>(len);
    }
    return sum / static_cast<double>(probe.size());
  };

  TrainingLog log;
  log.probe_loss_before = probe_loss();
  torch::optim::Adam optim(model.net()->parameters(), torch::optim::AdamOptions(hyper.lr));
  std::mt19937_64 rng(hyper.seed);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    auto order = windows;
    detail::shuffle(order, rng);
    if (hyper.windows_per_epoch > 0 && static_cast<std::size_t>(hyper.windows_per_epoch) < order.size()) {
      order.resize(static_cast<std::size_t>(hyper.windows_per_epoch));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(hyper.batch_size)) {
      const auto len = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch_size), order.size() - i);
      auto [in, target] = batch_of(std::span(order).subspan(i, len));
      optim.zero_grad();
      auto loss = nn::sequence_l2(model.net()->forward(in), target);
      loss.backward();
      optim.step();
      sum += loss.item<double>() * static_cast<double>(len);
    }
    const double mean = sum / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw ConfigError("forecaster training diverged");
    log.epoch_loss.push_back(mean);
    log_event("train_flow_epoch", {{"epoch", epoch + 1}, {"loss", mean}, {"windows", order.size()}});
  }
  log.probe_loss_after = probe_loss();
  return log;
}

}  // namespace flowcast
