#pragma once

// Learned mask warper: a 4-channel [u, v, semantic/8, mask] grid in, the
// instance's next-frame mask out (sigmoid, thresholded at 0.5).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "flowcast/fields.hpp"
#include "flowcast/unet.hpp"

namespace flowcast {

struct WarperConfig {
  int unet_depth = 2;
  int base_width = 8;
  int height = 64;
  int width = 128;
  double threshold = 0.5;

  void validate() const;
};

void to_json(nlohmann::json& j, const WarperConfig& c);
void from_json(const nlohmann::json& j, WarperConfig& c);

inline constexpr int kWarperChannels = 4;

/// Channel-major [4][H][W] in the fixed order (u, v, semantic/8, mask).
struct WarperInput {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  float at(int channel, int row, int col) const {
    return data[(static_cast<std::size_t>(channel) * height + row) * width + col];
  }
};

WarperInput prepare_input(const FlowField& flow, const SemanticMap& sem, const InstanceMask& inst);
WarperInput prepare_input(const FlowField& flow, const SemanticMap& sem, const MaskGrid& mask);

struct MaskPrediction {
  Grid<float> prob;
  MaskGrid mask;
};

enum class MaskLoss { kDice, kCrossEntropy };

struct WarperHyper {
  double lr = 1e-4;
  int epochs = 4;
  int batch_size = 8;
  std::uint64_t seed = 0;
  MaskLoss loss = MaskLoss::kDice;
  /// Examples drawn per epoch; 0 uses every example once.
  int examples_per_epoch = 0;
};

void to_json(nlohmann::json& j, const WarperHyper& h);
void from_json(const nlohmann::json& j, WarperHyper& h);

/// Which named layers train: the last `suffix` of them, or every layer.
struct LayerSelection {
  int suffix = -1;  // -1 selects all layers

  static LayerSelection all() { return {}; }
  static LayerSelection last(int k) { return {k}; }
  /// "all" or a positive integer.
  static LayerSelection parse(const std::string& text);
  std::string to_string() const;
};

/// Supervision tuples referencing tensors held by the dataset.
struct WarpDataset {
  struct Example {
    int flow;
    int semantic;
    int mask;
    int target;
  };

  int add_flow(const FlowField& flow);
  int add_semantic(const SemanticMap& sem);
  int add_mask(const MaskGrid& mask);
  /// Shared all-zero target for instances that vanish.
  int empty_mask(int height, int width);

  std::vector<torch::Tensor> flows;      // [2, H, W]
  std::vector<torch::Tensor> semantics;  // [1, H, W], labels / 8
  std::vector<torch::Tensor> masks;      // [1, H, W]
  std::vector<Example> examples;

  /// ([N,4,H,W] inputs, [N,1,H,W] targets)
  std::pair<torch::Tensor, torch::Tensor> batch(std::span<const Example> items) const;

 private:
  int empty_index_ = -1;
};

struct MaskTrainingLog {
  std::vector<double> epoch_loss;
};

void to_json(nlohmann::json& j, const MaskTrainingLog& log);

namespace nn {

class WarperNetImpl : public torch::nn::Module {
 public:
  explicit WarperNetImpl(const WarperConfig& cfg);

  /// [N, 4, H, W] -> logits [N, 1, H, W]
  torch::Tensor forward(const torch::Tensor& x);

  /// Named blocks in forward order, ending with "head".
  std::vector<std::string> layer_names() const;
  std::vector<torch::Tensor> layer_parameters(const std::string& layer);

 private:
  UNet unet_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(WarperNet);

/// Smoothed Dice objective averaged over the batch; prob and gt are [N,1,H,W].
torch::Tensor dice_objective(const torch::Tensor& prob, const torch::Tensor& gt, double eps = 1e-6);

}  // namespace nn

class MaskWarper {
 public:
  MaskWarper(const WarperConfig& cfg, std::uint64_t seed);

  static MaskWarper load(const std::filesystem::path& path);
  /// Deep copy; copies of a MaskWarper otherwise share parameters.
  MaskWarper clone() const;
  void save(const std::filesystem::path& path) const;

  const WarperConfig& config() const { return cfg_; }
  nn::WarperNet& net() { return net_; }
  const nn::WarperNet& net() const { return net_; }

  MaskPrediction predict_mask(const WarperInput& input) const;
  /// Batched probabilities: [N, 4, H, W] -> [N, 1, H, W].
  torch::Tensor predict_prob(const torch::Tensor& inputs) const;

  std::vector<std::string> layer_names() const { return net_->layer_names(); }

 private:
  WarperConfig cfg_;
  mutable nn::WarperNet net_{nullptr};
};

MaskTrainingLog train_masknet(MaskWarper& model, const WarpDataset& data, const WarperHyper& hyper,
                              const LayerSelection& trainable);

/// All layers, oracle flows.
MaskTrainingLog train_masknet_pretrain(MaskWarper& model, const WarpDataset& data, const WarperHyper& hyper);

/// Suffix layers only, predicted flows; prefix parameters stay bit-identical.
MaskTrainingLog train_masknet_finetune(MaskWarper& model, const WarpDataset& data, const WarperHyper& hyper,
                                       const LayerSelection& trainable);

}  // namespace flowcast
