#pragma once

// Flow forecaster: time-distributed UNet features -> ConvLSTM -> 1x1 linear
// head producing (u, v). Trained on sequences shifted by one step and used
// autoregressively at inference.

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "flowcast/fields.hpp"
#include "flowcast/unet.hpp"

namespace flowcast {

struct ForecasterConfig {
  int sequence_length = 6;
  int feature_channels = 64;
  int unet_depth = 3;
  int base_width = 8;
  int hidden_channels = 64;
  int kernel_size = 3;
  int height = 64;
  int width = 128;

  void validate() const;
};

void to_json(nlohmann::json& j, const ForecasterConfig& c);
void from_json(const nlohmann::json& j, ForecasterConfig& c);

struct ForecasterHyper {
  double lr = 1e-4;
  int batch_size = 3;
  int epochs = 100;
  std::uint64_t seed = 0;
  /// Windows drawn per epoch; 0 uses every window once.
  int windows_per_epoch = 0;
};

void to_json(nlohmann::json& j, const ForecasterHyper& h);
void from_json(const nlohmann::json& j, ForecasterHyper& h);

struct TrainingLog {
  double probe_loss_before = 0.0;
  double probe_loss_after = 0.0;
  std::vector<double> epoch_loss;
};

void to_json(nlohmann::json& j, const TrainingLog& log);

namespace nn {

class ConvLstmCellImpl : public torch::nn::Module {
 public:
  ConvLstmCellImpl(int in_channels, int hidden_channels, int kernel_size);

  /// Returns (h, c).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x, const torch::Tensor& h,
                                                  const torch::Tensor& c);
  int hidden_channels() const { return hidden_; }

 private:
  int hidden_;
  torch::nn::Conv2d gates_{nullptr};
};
TORCH_MODULE(ConvLstmCell);

class ForecasterNetImpl : public torch::nn::Module {
 public:
  explicit ForecasterNetImpl(const ForecasterConfig& cfg);

  /// [N, 2, H, W] -> [N, feature_channels, H, W]
  torch::Tensor features(const torch::Tensor& flows);
  /// [N, T, 2, H, W] -> [N, T, 2, H, W]; output k estimates input k+1.
  torch::Tensor forward(const torch::Tensor& flows);

 private:
  UNet backbone_{nullptr};
  ConvLstmCell cell_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(ForecasterNet);

/// Shifted-sequence L2: mean over batch and steps of the squared
/// error normalised by H*W*2. Inputs [N, T, 2, H, W].
torch::Tensor sequence_l2(const torch::Tensor& pred, const torch::Tensor& gt);

}  // namespace nn

class FlowForecaster {
 public:
  FlowForecaster(const ForecasterConfig& cfg, std::uint64_t seed);

  static FlowForecaster load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const ForecasterConfig& config() const { return cfg_; }
  nn::ForecasterNet& net() { return net_; }
  const nn::ForecasterNet& net() const { return net_; }

  /// [feature_channels, H, W]
  torch::Tensor extract_features(const FlowField& flow) const;

  /// Exactly T flows in, T predictions out (hidden state starts at zero).
  std::vector<FlowField> forward_sequence(std::span<const FlowField> flows) const;

  /// n future flows, each taken as the last output over the most recent T flows.
  std::vector<FlowField> rollout(std::span<const FlowField> past, int n) const;

  /// Batched rollout: past [N, T, 2, H, W] -> [N, n, 2, H, W].
  torch::Tensor rollout(const torch::Tensor& past, int n) const;

  /// One-step predictions from ground-truth windows: flows [N, T + n - 1, 2, H, W]
  /// -> [N, n, 2, H, W] where output k uses flows[k, k+T).
  torch::Tensor teacher_forced(const torch::Tensor& flows, int n) const;

 private:
  void check_flow(const FlowField& flow) const;

  ForecasterConfig cfg_;
  mutable nn::ForecasterNet net_{nullptr};
};

/// Adam on the shifted-sequence objective over every (T+1)-flow window.
TrainingLog train_ofnet(FlowForecaster& model, std::span<const SequenceSample> data, const ForecasterHyper& hyper);

}  // namespace flowcast
