#pragma once

// Encoder-decoder with skip connections, shared by the flow forecaster and
// the mask warper. Blocks are registered under stable names so training can
// freeze a prefix of them.

#include <string>
#include <vector>

#include <torch/torch.h>

namespace flowcast::nn {

/// Two 3x3 convolutions, each followed by ReLU.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int in_channels, int mid_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
};
TORCH_MODULE(ConvBlock);

/// depth = number of 2x downsamplings. Widths double per level starting at
/// base_width; the last decoder block widens to out_channels in its second
/// convolution.
class UNetImpl : public torch::nn::Module {
 public:
  UNetImpl(int in_channels, int base_width, int depth, int out_channels);

  torch::Tensor forward(const torch::Tensor& x);

  /// Block names in forward order: enc0.., bottleneck, dec{depth-1}..dec0.
  const std::vector<std::string>& block_names() const { return names_; }
  int depth() const { return depth_; }

 private:
  int depth_;
  std::vector<ConvBlock> encoders_;
  ConvBlock bottleneck_{nullptr};
  std::vector<ConvBlock> decoders_;  // decoders_[i] restores level i
  std::vector<std::string> names_;
};
TORCH_MODULE(UNet);

/// He-uniform weights, zero biases.
void init_conv(torch::nn::Conv2d& conv);

}  // namespace flowcast::nn
