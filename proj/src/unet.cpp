#include "flowcast/unet.hpp"

#include "flowcast/errors.hpp"

namespace flowcast::nn {

namespace F = torch::nn::functional;

void init_conv(torch::nn::Conv2d& conv) {
  torch::NoGradGuard guard;
  torch::nn::init::kaiming_uniform_(conv->weight, 0.0, torch::kFanIn, torch::kReLU);
  if (conv->bias.defined()) conv->bias.zero_();
}

ConvBlockImpl::ConvBlockImpl(int in_channels, int mid_channels, int out_channels) {
  conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, mid_channels, 3).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(mid_channels, out_channels, 3).padding(1)));
  init_conv(conv1_);
  init_conv(conv2_);
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  return torch::relu(conv2_(torch::relu(conv1_(x))));
}

UNetImpl::UNetImpl(int in_channels, int base_width, int depth, int out_channels) : depth_(depth) {
  if (depth < 0 || base_width < 1 || in_channels < 1 || out_channels < 1) {
    throw ConfigError("invalid UNet configuration");
  }
  int channels = in_channels;
  for (int i = 0; i < depth; ++i) {
    const int width = base_width << i;
    const std::string name = "enc" + std::to_string(i);
    encoders_.push_back(register_module(name, ConvBlock(channels, width, width)));
    names_.push_back(name);
    channels = width;
  }
  const int bottom = base_width << depth;
  bottleneck_ = register_module("bottleneck", ConvBlock(channels, bottom, depth == 0 ? out_channels : bottom));
  names_.push_back("bottleneck");
  decoders_.resize(static_cast<std::size_t>(depth), nullptr);
  channels = bottom;
  for (int i = depth - 1; i >= 0; --i) {
    const int skip = base_width << i;
    const int out = i == 0 ? out_channels : skip;
    const std::string name = "dec" + std::to_string(i);
    decoders_[static_cast<std::size_t>(i)] = register_module(name, ConvBlock(channels + skip, skip, out));
    names_.push_back(name);
    channels = out;
  }
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
  const int64_t h = x.size(-2), w = x.size(-1);
  if (h % (int64_t{1} << depth_) != 0 || w % (int64_t{1} << depth_) != 0) {
    throw ShapeError("UNet input " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by 2^" +
                     std::to_string(depth_));
  }
  std::vector<torch::Tensor> skips;
  torch::Tensor y = x;
  for (auto& enc : encoders_) {
    y = enc(y);
    skips.push_back(y);
    y = F::max_pool2d(y, F::MaxPool2dFuncOptions(2));
  }
  y = bottleneck_(y);
  for (int i = depth_ - 1; i >= 0; --i) {
    const auto& skip = skips[static_cast<std::size_t>(i)];
    y = F::interpolate(y, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skip.size(-2), skip.size(-1)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    y = decoders_[static_cast<std::size_t>(i)](torch::cat({y, skip}, 1));
  }
  return y;
}

}  // namespace flowcast::nn
