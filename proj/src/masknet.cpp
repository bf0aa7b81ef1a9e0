#include "flowcast/masknet.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "flowcast/checkpoint.hpp"
#include "flowcast/log.hpp"
#include "flowcast/tensor_io.hpp"
#include "sampling.hpp"

namespace flowcast {

void WarperConfig::validate() const {
  if (unet_depth < 0 || base_width < 1) throw ConfigError("invalid warper UNet configuration");
  const int div = 1 << unet_depth;
  if (height <= 0 || width <= 0 || height % div != 0 || width % div != 0) {
    throw ConfigError("warper resolution must be divisible by 2^unet_depth");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
}

void to_json(nlohmann::json& j, const WarperConfig& c) {
  j = {{"unet_depth", c.unet_depth}, {"base_width", c.base_width}, {"height", c.height},
       {"width", c.width},           {"threshold", c.threshold},   {"channels", "u,v,semantic/8,mask"}};
}

void from_json(const nlohmann::json& j, WarperConfig& c) {
  const WarperConfig d;
  c.unet_depth = j.value("unet_depth", d.unet_depth);
  c.base_width = j.value("base_width", d.base_width);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.threshold = j.value("threshold", d.threshold);
}

void to_json(nlohmann::json& j, const WarperHyper& h) {
  j = {{"optimizer", "adam"},
       {"lr", h.lr},
       {"epochs", h.epochs},
       {"batch_size", h.batch_size},
       {"seed", h.seed},
       {"loss", h.loss == MaskLoss::kDice ? "dice" : "cross_entropy"},
       {"examples_per_epoch", h.examples_per_epoch}};
}

void from_json(const nlohmann::json& j, WarperHyper& h) {
  const WarperHyper d;
  h.lr = j.value("lr", d.lr);
  h.epochs = j.value("epochs", d.epochs);
  h.batch_size = j.value("batch_size", d.batch_size);
  h.seed = j.value("seed", d.seed);
  const std::string loss = j.value("loss", std::string("dice"));
  if (loss == "dice") {
    h.loss = MaskLoss::kDice;
  } else if (loss == "cross_entropy") {
    h.loss = MaskLoss::kCrossEntropy;
  } else {
    throw ConfigError("unknown mask loss '" + loss + "'");
  }
  h.examples_per_epoch = j.value("examples_per_epoch", d.examples_per_epoch);
}

void to_json(nlohmann::json& j, const MaskTrainingLog& log) { j = {{"epoch_loss", log.epoch_loss}}; }

LayerSelection LayerSelection::parse(const std::string& text) {
  if (text == "all") return all();
  try {
    std::size_t used = 0;
    const int k = std::stoi(text, &used);
    if (used == text.size() && k >= 1) return last(k);
  } catch (const std::exception&) {
  }
  throw ConfigError("layer selection must be 'all' or a positive integer, got '" + text + "'");
}

std::string LayerSelection::to_string() const { return suffix < 0 ? "all" : std::to_string(suffix); }

WarperInput prepare_input(const FlowField& flow, const SemanticMap& sem, const MaskGrid& mask) {
  require_same_shape(flow.u, flow.v, "prepare_input flow");
  require_same_shape(flow.u, sem.labels, "prepare_input semantic");
  require_same_shape(flow.u, mask, "prepare_input mask");
  WarperInput in{flow.height(), flow.width(), {}};
  const std::size_t n = flow.u.size();
  in.data.resize(n * kWarperChannels);
  for (std::size_t i = 0; i < n; ++i) {
    in.data[i] = flow.u.values()[i];
    in.data[n + i] = flow.v.values()[i];
    in.data[2 * n + i] = static_cast<float>(sem.labels.values()[i]) / static_cast<float>(kNumClasses);
    in.data[3 * n + i] = static_cast<float>(mask.values()[i]);
  }
  return in;
}

WarperInput prepare_input(const FlowField& flow, const SemanticMap& sem, const InstanceMask& inst) {
  return prepare_input(flow, sem, inst.mask);
}

int WarpDataset::add_flow(const FlowField& flow) {
  flows.push_back(nn::flow_to_tensor(flow));
  return static_cast<int>(flows.size()) - 1;
}

int WarpDataset::add_semantic(const SemanticMap& sem) {
  semantics.push_back(nn::grid_to_tensor(sem.labels) / static_cast<float>(kNumClasses));
  return static_cast<int>(semantics.size()) - 1;
}

int WarpDataset::add_mask(const MaskGrid& mask) {
  masks.push_back(nn::grid_to_tensor(mask));
  return static_cast<int>(masks.size()) - 1;
}

int WarpDataset::empty_mask(int height, int width) {
  if (empty_index_ < 0) empty_index_ = add_mask(MaskGrid(height, width, 0));
  return empty_index_;
}

std::pair<torch::Tensor, torch::Tensor> WarpDataset::batch(std::span<const Example> items) const {
  std::vector<torch::Tensor> in, target;
  for (const auto& e : items) {
    in.push_back(torch::cat({flows.at(static_cast<std::size_t>(e.flow)), semantics.at(static_cast<std::size_t>(e.semantic)),
                             masks.at(static_cast<std::size_t>(e.mask))},
                            0));
    target.push_back(masks.at(static_cast<std::size_t>(e.target)));
  }
  return {torch::stack(in), torch::stack(target)};
}

namespace nn {

WarperNetImpl::WarperNetImpl(const WarperConfig& cfg) {
  cfg.validate();
  unet_ = register_module("unet", UNet(kWarperChannels, cfg.base_width, cfg.unet_depth, cfg.base_width));
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.base_width, 1, 1)));
  init_conv(head_);
}

torch::Tensor WarperNetImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != kWarperChannels) throw ShapeError("warper expects [N,4,H,W]");
  return head_(unet_(x));
}

std::vector<std::string> WarperNetImpl::layer_names() const {
  auto names = unet_->block_names();
  names.push_back("head");
  return names;
}

std::vector<torch::Tensor> WarperNetImpl::layer_parameters(const std::string& layer) {
  const std::string prefix = layer == "head" ? "head." : "unet." + layer + ".";
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters()) {
    if (item.key().rfind(prefix, 0) == 0) out.push_back(item.value());
  }
  if (out.empty()) throw ConfigError("unknown warper layer '" + layer + "'");
  return out;
}

torch::Tensor dice_objective(const torch::Tensor& prob, const torch::Tensor& gt, double eps) {
  if (!prob.sizes().equals(gt.sizes())) throw ShapeError("dice: prediction and target shapes differ");
  const auto p = prob.flatten(1), g = gt.flatten(1);
  const auto inter = (p * g).sum(1);
  const auto denom = p.pow(2).sum(1) + g.pow(2).sum(1);
  return (1.0 - (2.0 * inter + eps) / (denom + eps)).mean();
}

}  // namespace nn

MaskWarper::MaskWarper(const WarperConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  torch::manual_seed(seed);
  net_ = nn::WarperNet(cfg_);
}

MaskWarper MaskWarper::load(const std::filesystem::path& path) {
  const auto ckpt = nn::load_checkpoint(path);
  MaskWarper model(ckpt.config.at("model").get<WarperConfig>(), 0);
  nn::restore(*model.net_, ckpt, "masknet");
  return model;
}

MaskWarper MaskWarper::clone() const {
  MaskWarper copy(cfg_, 0);
  nn::restore(*copy.net_, nn::capture(*net_, "masknet", nlohmann::json::object()), "masknet");
  return copy;
}

void MaskWarper::save(const std::filesystem::path& path) const {
  nn::save_checkpoint(nn::capture(*net_, "masknet", {{"model", cfg_}, {"layers", net_->layer_names()}}), path);
}

namespace {
// float32 sigmoid saturates to exactly 0 or 1 for large logits; keep probabilities strictly inside (0,1)
const double kProbLo = std::numeric_limits<float>::min();
const double kProbHi = std::nextafter(1.0f, 0.0f);
}  // namespace

torch::Tensor MaskWarper::predict_prob(const torch::Tensor& inputs) const {
  if (inputs.dim() != 4 || inputs.size(1) != kWarperChannels || inputs.size(2) != cfg_.height ||
      inputs.size(3) != cfg_.width) {
    throw ShapeError("warper input must be [N,4," + std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + "]");
  }
  torch::NoGradGuard guard;
  constexpr int64_t chunk = 16;
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < inputs.size(0); i += chunk) {
    parts.push_back(torch::sigmoid(net_->forward(inputs.narrow(0, i, std::min(chunk, inputs.size(0) - i))))
                        .clamp(kProbLo, kProbHi));
  }
  return parts.empty() ? torch::empty({0, 1, cfg_.height, cfg_.width}) : torch::cat(parts, 0);
}

MaskPrediction MaskWarper::predict_mask(const WarperInput& input) const {
  if (input.data.size() != static_cast<std::size_t>(kWarperChannels) * input.height * input.width) {
    throw ShapeError("warper input buffer does not hold 4 channels");
  }
  auto t = torch::from_blob(const_cast<float*>(input.data.data()), {1, kWarperChannels, input.height, input.width},
                            torch::kFloat32);
  MaskPrediction out;
  out.prob = nn::tensor_to_grid(predict_prob(t)[0]);
  out.mask = MaskGrid(input.height, input.width, 0);
  const auto p = out.prob.values();
  auto m = out.mask.values();
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = p[i] > cfg_.threshold ? 1 : 0;
  return out;
}

MaskTrainingLog train_masknet(MaskWarper& model, const WarpDataset& data, const WarperHyper& hyper,
                              const LayerSelection& trainable) {
  if (data.examples.empty()) throw ConfigError("mask warper training set is empty");
  if (hyper.batch_size < 1 || hyper.epochs < 0 || !(hyper.lr > 0.0)) throw ConfigError("invalid warper hyperparameters");
  auto& net = model.net();
  const auto names = net->layer_names();
  const int n_layers = static_cast<int>(names.size());
  if (trainable.suffix == 0 || trainable.suffix > n_layers || trainable.suffix < -1) {
    throw ConfigError("cannot train the last " + trainable.to_string() + " of " + std::to_string(n_layers) + " layers");
  }
  const int first = trainable.suffix < 0 ? 0 : n_layers - trainable.suffix;
  std::vector<torch::Tensor> params;
  for (int i = 0; i < n_layers; ++i) {
    for (auto& p : net->layer_parameters(names[static_cast<std::size_t>(i)])) {
      p.set_requires_grad(i >= first);
      if (i >= first) params.push_back(p);
    }
  }

  torch::optim::Adam optim(params, torch::optim::AdamOptions(hyper.lr));
  std::mt19937_64 rng(hyper.seed);
  MaskTrainingLog log;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    auto order = data.examples;
    detail::shuffle(order, rng);
    if (hyper.examples_per_epoch > 0 && static_cast<std::size_t>(hyper.examples_per_epoch) < order.size()) {
      order.resize(static_cast<std::size_t>(hyper.examples_per_epoch));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(hyper.batch_size)) {
      const auto len = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch_size), order.size() - i);
      auto [in, target] = data.batch(std::span(order).subspan(i, len));
      optim.zero_grad();
      const auto logits = net->forward(in);
      torch::Tensor loss = hyper.loss == MaskLoss::kDice
                               ? nn::dice_objective(torch::sigmoid(logits), target)
                               : torch::binary_cross_entropy_with_logits(logits, target);
      loss.backward();
      optim.step();
      sum += loss.item<double>() * static_cast<double>(len);
    }
    const double mean = sum / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw ConfigError("mask warper training diverged");
    log.epoch_loss.push_back(mean);
    log_event("train_mask_epoch",
              {{"epoch", epoch + 1}, {"loss", mean}, {"examples", order.size()}, {"trainable", trainable.to_string()}});
  }
  for (auto& p : net->parameters()) p.set_requires_grad(true);
  return log;
}

MaskTrainingLog train_masknet_pretrain(MaskWarper& model, const WarpDataset& data, const WarperHyper& hyper) {
  return train_masknet(model, data, hyper, LayerSelection::all());
}

MaskTrainingLog train_masknet_finetune(MaskWarper& model, const WarpDataset& data, const WarperHyper& hyper,
                                       const LayerSelection& trainable) {
  return train_masknet(model, data, hyper, trainable);
}

}  // namespace flowcast
