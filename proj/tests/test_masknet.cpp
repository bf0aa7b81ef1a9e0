#include <cmath>
#include <random>

#include "flowcast/errors.hpp"
#include "flowcast/harness.hpp"
#include "flowcast/losses.hpp"
#include "flowcast/masknet.hpp"
#include "flowcast/tensor_io.hpp"
#include "helpers.hpp"
#include "nn_helpers.hpp"

// libtorch's logging header defines glog-style CHECK macros
#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE
#include <doctest.h>

using namespace flowcast;

namespace {

WarperConfig tiny_warper(int h = 8, int w = 16) {
  WarperConfig c;
  c.unet_depth = 2;
  c.base_width = 4;
  c.height = h;
  c.width = w;
  return c;
}

WarpDataset random_dataset(std::mt19937_64& rng, int n, int h, int w) {
  WarpDataset d;
  for (int i = 0; i < n; ++i) {
    SemanticMap sem(h, w);
    const auto mask = testutil::random_mask(rng, h, w, 0.3);
    for (std::size_t k = 0; k < mask.values().size(); ++k) sem.labels.values()[k] = mask.values()[k] * 3;
    d.examples.push_back({d.add_flow(testutil::random_flow(rng, h, w)), d.add_semantic(sem), d.add_mask(mask),
                          d.add_mask(testutil::random_mask(rng, h, w, 0.3))});
  }
  return d;
}

std::map<std::string, std::vector<std::vector<float>>> by_layer(MaskWarper& m) {
  std::map<std::string, std::vector<std::vector<float>>> out;
  for (const auto& name : m.layer_names()) {
    for (const auto& p : m.net()->layer_parameters(name)) out[name].push_back(testutil::flat(p));
  }
  return out;
}

}  // namespace

TEST_CASE("prepare_input channel layout") {
  const auto zero = prepare_input(FlowField(4, 5), SemanticMap(4, 5), MaskGrid(4, 5, 0));
  CHECK(zero.data.size() == 4u * 4 * 5);
  for (float v : zero.data) CHECK(v == 0.0f);

  SemanticMap sem(4, 5);
  sem.labels(1, 2) = 8;
  CHECK(prepare_input(FlowField(4, 5), sem, MaskGrid(4, 5, 0)).at(2, 1, 2) == 1.0f);

  std::mt19937_64 rng(1);
  const auto flow = testutil::random_flow(rng, 6, 7);
  const auto mask = testutil::random_mask(rng, 6, 7, 0.5);
  const auto in = prepare_input(flow, SemanticMap(6, 7), mask);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 7; ++c) {
      CHECK(in.at(0, r, c) == flow.u(r, c));
      CHECK(in.at(1, r, c) == flow.v(r, c));
      CHECK(in.at(3, r, c) == static_cast<float>(mask(r, c)));
    }
  }
  CHECK_THROWS_AS(prepare_input(flow, SemanticMap(6, 8), mask), ShapeError);
}

TEST_CASE("predict_mask: probabilities in (0,1) and mask = prob > 0.5") {
  MaskWarper model(tiny_warper(), 2);
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    SemanticMap sem(8, 16);
    for (auto& v : sem.labels.values()) v = static_cast<std::uint8_t>(rng() % 9);
    const auto out =
        model.predict_mask(prepare_input(testutil::random_flow(rng, 8, 16, 10.0), sem, testutil::random_mask(rng, 8, 16, 0.5)));
    for (std::size_t i = 0; i < out.prob.values().size(); ++i) {
      const float p = out.prob.values()[i];
      CHECK(std::isfinite(p));
      CHECK(p > 0.0f);
      CHECK(p < 1.0f);
      CHECK(out.mask.values()[i] == (p > 0.5f ? 1 : 0));
    }
  }
  CHECK_THROWS_AS(model.predict_mask(prepare_input(FlowField(8, 8), SemanticMap(8, 8), MaskGrid(8, 8, 0))), ShapeError);
}

TEST_CASE("dice objective agrees with the reference loss and its gradient") {
  torch::manual_seed(4);
  const auto prob = torch::rand({1, 1, 5, 6}, torch::kDouble).requires_grad_(true);
  const auto gt = (torch::rand({1, 1, 5, 6}, torch::kDouble) > 0.6).to(torch::kDouble);
  const auto loss = nn::dice_objective(prob, gt, 0.0);
  loss.backward();
  const auto pv = prob.detach().contiguous(), gv = gt.contiguous();
  const std::vector<double> p(pv.data_ptr<double>(), pv.data_ptr<double>() + 30), g(gv.data_ptr<double>(), gv.data_ptr<double>() + 30);
  CHECK(loss.item<double>() == doctest::Approx(dice_loss(p, g)).epsilon(1e-12));
  const auto grad = dice_loss_grad(p, g);
  const auto tg = prob.grad().contiguous();
  for (int i = 0; i < 30; ++i) CHECK(tg.data_ptr<double>()[i] == doctest::Approx(grad[static_cast<std::size_t>(i)]).epsilon(1e-10));
}

TEST_CASE("warper network gradients under the Dice objective match central differences") {
  MaskWarper model(tiny_warper(), 5);
  auto& net = model.net();
  net->to(torch::kDouble);
  torch::manual_seed(6);
  const auto x = torch::randn({2, 4, 8, 16}, torch::kDouble);
  const auto y = (torch::rand({2, 1, 8, 16}, torch::kDouble) > 0.5).to(torch::kDouble);
  auto loss_of = [&] { return nn::dice_objective(torch::sigmoid(net->forward(x)), y); };
  net->zero_grad();
  loss_of().backward();
  std::mt19937_64 rng(7);
  double num = 0.0, den = 0.0;
  int count = 0;
  torch::NoGradGuard guard;
  for (auto& p : net->parameters()) {
    auto fp = p.view(-1);
    auto fg = p.grad().view(-1);
    const int64_t n = fp.numel();
    for (int64_t s = 0; s < std::max<int64_t>(1, n / 100); ++s) {
      const int64_t i = static_cast<int64_t>(rng() % static_cast<std::uint64_t>(n));
      const double keep = fp[i].item<double>(), h = 1e-6;
      fp[i] = keep + h;
      const double up = loss_of().item<double>();
      fp[i] = keep - h;
      const double down = loss_of().item<double>();
      fp[i] = keep;
      const double a = fg[i].item<double>(), nd = (up - down) / (2 * h);
      num += (a - nd) * (a - nd);
      den += nd * nd;
      CHECK(std::abs(a - nd) <= 1e-3 * std::max(std::abs(nd), 1e-5));
      ++count;
    }
  }
  CHECK(count >= 10);
  CHECK(std::sqrt(num / den) <= 1e-3);
}

TEST_CASE("layer selection parsing and validation") {
  CHECK(LayerSelection::parse("all").suffix == -1);
  CHECK(LayerSelection::parse("2").suffix == 2);
  CHECK(LayerSelection::parse("3").to_string() == "3");
  CHECK_THROWS_AS(LayerSelection::parse("two"), ConfigError);
  CHECK_THROWS_AS(LayerSelection::parse("0"), ConfigError);
  MaskWarper model(tiny_warper(), 1);
  CHECK((model.layer_names() == std::vector<std::string>{"enc0", "enc1", "bottleneck", "dec1", "dec0", "head"}));
  std::mt19937_64 rng(8);
  const auto data = random_dataset(rng, 4, 8, 16);
  WarperHyper hyper;
  hyper.epochs = 1;
  CHECK_THROWS_AS(train_masknet(model, data, hyper, LayerSelection::last(7)), ConfigError);
  CHECK_THROWS_AS(train_masknet(model, WarpDataset{}, hyper, LayerSelection::all()), ConfigError);
}

TEST_CASE("finetuning the last two layers leaves every other parameter bit-identical") {
  MaskWarper model(tiny_warper(), 9);
  std::mt19937_64 rng(10);
  const auto data = random_dataset(rng, 12, 8, 16);
  WarperHyper hyper;
  hyper.lr = 1e-2;
  hyper.epochs = 2;
  hyper.batch_size = 4;
  const auto before = by_layer(model);
  train_masknet_finetune(model, data, hyper, LayerSelection::last(2));
  const auto after = by_layer(model);
  for (const auto& name : {"enc0", "enc1", "bottleneck", "dec1"}) CHECK(before.at(name) == after.at(name));
  CHECK(before.at("dec0") != after.at("dec0"));
  CHECK(before.at("head") != after.at("head"));

  const auto mid = by_layer(model);
  train_masknet_finetune(model, data, hyper, LayerSelection::all());
  const auto all = by_layer(model);
  CHECK(mid.at("enc0") != all.at("enc0"));
  for (auto& p : model.net()->parameters()) CHECK(p.requires_grad());
}

TEST_CASE("seeded warper training is deterministic; checkpoints round-trip") {
  std::mt19937_64 rng(11);
  const auto data = random_dataset(rng, 10, 8, 16);
  WarperHyper hyper;
  hyper.epochs = 2;
  hyper.seed = 4;
  MaskWarper a(tiny_warper(), 12), b(tiny_warper(), 12);
  const auto la = train_masknet_pretrain(a, data, hyper);
  const auto lb = train_masknet_pretrain(b, data, hyper);
  CHECK(la.epoch_loss == lb.epoch_loss);
  CHECK(testutil::parameter_values(*a.net()) == testutil::parameter_values(*b.net()));
  const auto path = std::filesystem::temp_directory_path() / "flowcast_test_warper.ckpt";
  a.save(path);
  auto c = MaskWarper::load(path);
  CHECK(testutil::parameter_values(*c.net()) == testutil::parameter_values(*a.net()));
  auto d = a.clone();
  train_masknet_pretrain(d, data, hyper);
  CHECK(testutil::parameter_values(*d.net()) != testutil::parameter_values(*a.net()));
  CHECK(testutil::parameter_values(*c.net()) == testutil::parameter_values(*a.net()));
}

TEST_CASE("trained on rigid translations, the warper moves a (2,0) instance with IoU >= 0.9") {
  torch::set_num_threads(1);
  auto scene = testutil::tiny_scene(8, 0);
  scene.ellipses = false;
  std::vector<SequenceSample> train;
  for (std::uint64_t s = 0; s < 40; ++s) {
    scene.seed = 1000 + s;
    train.push_back(generate(scene));
  }
  const auto data = build_oracle_dataset(train);
  WarperConfig cfg = tiny_warper(16, 32);
  cfg.base_width = 8;
  MaskWarper model(cfg, 13);
  WarperHyper hyper;
  hyper.lr = 3e-3;
  hyper.epochs = 12;
  hyper.seed = 14;
  const auto log = train_masknet_pretrain(model, data, hyper);
  CHECK(log.epoch_loss.back() < log.epoch_loss.front());

  // held-out rectangles moving by exactly (2, 0)
  double iou_sum = 0.0;
  int n = 0;
  for (int x0 = 2; x0 < 20; x0 += 3) {
    for (int size : {4, 6, 8}) {
      const auto mask = testutil::rect_mask(16, 32, x0, 4, x0 + size, 4 + size);
      const auto next = testutil::rect_mask(16, 32, x0 + 2, 4, x0 + 2 + size, 4 + size);
      FlowField flow(16, 32);
      SemanticMap sem(16, 32);
      for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 32; ++c) {
          if (mask(r, c)) flow.u(r, c) = 2.0f, sem.labels(r, c) = 4;
        }
      }
      iou_sum += mask_iou(model.predict_mask(prepare_input(flow, sem, mask)).mask, next);
      ++n;
    }
  }
  CHECK(iou_sum / n >= 0.9);
}
