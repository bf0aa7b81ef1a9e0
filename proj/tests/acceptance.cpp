// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Criteria 5-9 share one desk-scale workbench (200 sequences at 64x128).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <torch/torch.h>

#include "ap_oracle.hpp"
#include "flowcast/aggregate.hpp"
#include "flowcast/errors.hpp"
#include "flowcast/fields.hpp"
#include "flowcast/harness.hpp"
#include "flowcast/log.hpp"
#include "flowcast/losses.hpp"
#include "flowcast/masknet.hpp"
#include "flowcast/metrics.hpp"
#include "flowcast/ofnet.hpp"
#include "flowcast/warpop.hpp"
#include "helpers.hpp"
#include "nn_helpers.hpp"

using namespace flowcast;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Suite {
  int failures = 0;
  nlohmann::json record = nlohmann::json::array();

  void run(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome out;
    try {
      out = body();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double t = seconds_since(t0);
    if (budget_s > 0 && t > budget_s) {
      out.pass = false;
      out.detail += "; over budget " + fmt(t) + "s > " + fmt(budget_s) + "s";
    }
    failures += out.pass ? 0 : 1;
    std::printf("[%s] criterion %2d %-28s %8.1fs  %s\n", out.pass ? "PASS" : "FAIL", id, name.c_str(), t,
                out.detail.c_str());
    std::fflush(stdout);
    record.push_back({{"criterion", id}, {"name", name}, {"pass", out.pass}, {"seconds", t}, {"detail", out.detail}});
  }

  static std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
  }
};

std::string fmt(double v, int prec = 4) { return Suite::fmt(v, prec); }

// ---- 1: exact-math oracles ----

Outcome exact_math() {
  int bad = 0;
  std::string first;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok && bad++ == 0) first = what;
  };
  const auto eq9 = [](double a, double b) { return std::abs(a - b) <= 1e-9; };

  {
    const std::vector<double> g{1, 0, 1, 1};
    const std::vector<double> disjoint{0, 1, 0, 0};
    expect(dice_loss(g, g) == 0.0, "dice identical");
    expect(dice_loss(disjoint, g) == 1.0, "dice disjoint");
    expect(eq9(dice_loss(std::vector<double>{1, 1}, std::vector<double>{1, 0}), 1.0 / 3.0), "dice 1x2");
  }
  {
    FlowField p(1, 1, 1.0f, 0.0f), z(1, 1);
    expect(loss_flow(std::span(&z, 1), std::span(&z, 1)) == 0.0, "loss_flow zero");
    expect(loss_flow(std::span(&p, 1), std::span(&z, 1)) == 0.5, "loss_flow 0.5");
    FlowField p2(1, 1, 2.0f, 0.0f);
    expect(loss_flow(std::span(&p2, 1), std::span(&z, 1)) == 4 * 0.5, "loss_flow homogeneity");
  }
  {
    const auto a = BBox::FromCorners(0, 0, 10, 10), b = BBox::FromCorners(5, 0, 15, 10);
    expect(bbox_iou(a, a) == 1.0, "bbox identity");
    expect(bbox_iou(a, BBox::FromCorners(20, 20, 30, 30)) == 0.0, "bbox disjoint");
    expect(eq9(bbox_iou(a, b), 1.0 / 3.0), "bbox 1/3");
    const auto m = testutil::rect_mask(6, 6, 0, 0, 2, 2);
    expect(mask_iou(m, m) == 1.0, "mask identity");
    expect(mask_iou(m, testutil::rect_mask(6, 6, 4, 4, 6, 6)) == 0.0, "mask disjoint");
    expect(eq9(mask_iou(m, testutil::rect_mask(6, 6, 1, 0, 3, 2)), 1.0 / 3.0), "mask 2/6");
  }
  {
    auto inst = [](int w, int h) { return testutil::instance(1, 1, 0.9, testutil::rect_mask(300, 300, 0, 0, w, h)); };
    expect(eq9(rescore(inst(50, 50)), 0.4), "rescore 50x50");
    expect(eq9(rescore(inst(100, 100)), 0.6), "rescore 100x100");
    expect(rescore(inst(200, 150)) == 0.9, "rescore 200x150");
  }
  {
    const auto dir = fs::temp_directory_path() / "flowcast_acceptance_flo";
    fs::create_directories(dir);
    const FlowField zero(1, 1);
    flow_write(zero, dir / "zero.flo");
    expect(fs::file_size(dir / "zero.flo") == 20 && flow_read(dir / "zero.flo") == zero, "flo 1x1");
    FlowField ramp(2, 3);
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 3; ++c) ramp.u(r, c) = static_cast<float>(c), ramp.v(r, c) = static_cast<float>(r);
    }
    flow_write(ramp, dir / "ramp.flo");
    expect(fs::file_size(dir / "ramp.flo") == 12 + 2 * 3 * 8 && flow_read(dir / "ramp.flo") == ramp, "flo 2x3");
    {
      std::ofstream f(dir / "bad.flo", std::ios::binary);
      f << "XXXX" << std::string(16, '\0');
    }
    bool threw = false;
    try {
      (void)flow_read(dir / "bad.flo");
    } catch (const FormatError&) {
      threw = true;
    }
    expect(threw, "flo bad magic");
    fs::remove_all(dir);
  }
  return {bad == 0, bad == 0 ? "18 examples exact" : std::to_string(bad) + " failed, first: " + first};
}

// ---- 2: gradient checks ----

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num += (a[i] - b[i]) * (a[i] - b[i]), den += b[i] * b[i];
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

template <typename F>
std::vector<double> central_diff(F&& f, std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Analytic vs central-difference gradients on ~1% of a double-precision module's parameters.
double network_grad_error(torch::nn::Module& net, const std::function<torch::Tensor()>& loss_of, std::uint64_t seed) {
  net.zero_grad();
  loss_of().backward();
  std::mt19937_64 rng(seed);
  std::vector<double> analytic, numeric;
  torch::NoGradGuard guard;
  for (auto& p : net.parameters()) {
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
      analytic.push_back(fg[i].item<double>());
      numeric.push_back((up - down) / (2 * h));
    }
  }
  return rel_error(analytic, numeric);
}

Outcome gradients() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.05, 0.95), s(-2, 2);
  std::vector<double> p(64), g(64), x(3 * 16), y(3 * 16);
  for (auto& v : p) v = u(rng);
  for (auto& v : g) v = rng() % 3 == 0 ? 1.0 : 0.0;
  for (auto& v : x) v = s(rng);
  for (auto& v : y) v = s(rng);
  const double e_dice = rel_error(dice_loss_grad(p, g),
                                  central_diff([&](const std::vector<double>& z) { return dice_loss(z, g); }, p, 1e-5));
  const double e_l2 = rel_error(sequence_l2_loss_grad(x, y, 3),
                                central_diff([&](const std::vector<double>& z) { return sequence_l2_loss(z, y, 3); }, x, 1e-4));

  FlowForecaster fc(testutil::tiny_forecaster(3), 22);
  fc.net()->to(torch::kDouble);
  torch::manual_seed(23);
  const auto fx = torch::randn({2, 3, 2, 8, 16}, torch::kDouble);
  const auto fy = torch::randn({2, 3, 2, 8, 16}, torch::kDouble);
  const double e_ofnet = network_grad_error(*fc.net(), [&] { return nn::sequence_l2(fc.net()->forward(fx), fy); }, 24);

  WarperConfig wc;
  wc.base_width = 4;
  wc.height = 8;
  wc.width = 16;
  MaskWarper mw(wc, 25);
  mw.net()->to(torch::kDouble);
  const auto wx = torch::randn({2, 4, 8, 16}, torch::kDouble);
  const auto wy = (torch::rand({2, 1, 8, 16}, torch::kDouble) > 0.5).to(torch::kDouble);
  const double e_warper =
      network_grad_error(*mw.net(), [&] { return nn::dice_objective(torch::sigmoid(mw.net()->forward(wx)), wy); }, 26);

  const bool ok = e_dice <= 1e-4 && e_l2 <= 1e-4 && e_ofnet <= 1e-3 && e_warper <= 1e-3;
  return {ok, "dice " + fmt(e_dice, 2) + ", seq-L2 " + fmt(e_l2, 2) + " (<=1e-4); OFNet " + fmt(e_ofnet, 2) +
                  ", warper " + fmt(e_warper, 2) + " (<=1e-3)"};
}

// ---- 3: warp identities ----

Outcome warp_identities() {
  std::mt19937_64 rng(31);
  int zero_bad = 0, shift_bad = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int h = 16 + static_cast<int>(rng() % 17), w = 16 + static_cast<int>(rng() % 33);
    const auto inst = testutil::instance(rep, 1 + rep % 8, 0.7, testutil::random_mask(rng, h, w, 0.3));
    zero_bad += !(warp_mask(inst, FlowField(h, w)).mask == inst.mask);
    const float du = static_cast<float>(static_cast<int>(rng() % 9) - 4);
    const float dv = static_cast<float>(static_cast<int>(rng() % 7) - 3);
    const FlowField f(h, w, du, dv);
    shift_bad += !(warp_mask(inst, f).mask == shift_mask(inst, f).mask);
  }
  return {zero_bad == 0 && shift_bad == 0,
          "zero-flow mismatches " + std::to_string(zero_bad) + "/100, integer shift!=warp " + std::to_string(shift_bad) + "/100"};
}

// ---- 4: AP oracle ----

Outcome ap_equivalence() {
  std::mt19937_64 rng(41);
  int bad = 0;
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto c = testutil::random_ap_case(rng);
    const auto r = average_precision(c.preds, c.gts);
    const auto o = testutil::ap_oracle(c.preds, c.gts);
    const double d = std::max(std::abs(r.ap - o.ap), std::abs(r.ap50 - o.ap50));
    worst = std::max(worst, d);
    bad += d > 1e-12;
  }
  return {bad == 0, std::to_string(200 - bad) + "/200 cases agree, max |diff| " + fmt(worst, 2)};
}

// ---- 5, 6: flow forecasting ----

struct FlowStats {
  std::vector<FlowMse> model;
  std::vector<FlowMse> zero;
};

FlowStats rollout_stats(Workbench& bench) {
  const auto& pred = bench.eval_flows(kMidTermSteps, FlowSource::kPredicted);
  const auto& gt = bench.eval_flows(kMidTermSteps, FlowSource::kOracle);
  FlowStats s;
  s.model.assign(kMidTermSteps, {});
  s.zero.assign(kMidTermSteps, {});
  for (std::size_t i = 0; i < gt.size(); ++i) {
    std::vector<FlowField> zeros;
    for (const auto& f : gt[i]) zeros.emplace_back(f.height(), f.width());
    const auto m = flow_mse(pred[i], gt[i]);
    const auto z = flow_mse(zeros, gt[i]);
    for (int k = 0; k < kMidTermSteps; ++k) {
      for (auto [dst, src] : {std::pair{&s.model[k], &m[k]}, std::pair{&s.zero[k], &z[k]}}) {
        dst->mse += src->mse / gt.size();
        dst->mse_u += src->mse_u / gt.size();
        dst->mse_v += src->mse_v / gt.size();
      }
    }
  }
  return s;
}

// ---- 9: cross-entropy ----

double foreground_ratio(const MaskWarper& model, const WarpDataset& data) {
  double pred = 0.0, gt = 0.0;
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < data.examples.size(); i += 64) {
    const auto len = std::min<std::size_t>(64, data.examples.size() - i);
    const auto [in, target] = data.batch(std::span(data.examples).subspan(i, len));
    pred += (model.predict_prob(in) > model.config().threshold).sum().item<double>();
    gt += target.sum().item<double>();
  }
  return gt > 0 ? pred / gt : 0.0;
}

// ---- 10: determinism ----

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.name = "determinism";
  c.scene = testutil::tiny_scene(14, 300);
  c.n_sequences = 6;
  c.ofnet = testutil::tiny_forecaster(3);
  c.ofnet.height = 16;
  c.ofnet.width = 32;
  c.ofnet_hyper.epochs = 2;
  c.ofnet_hyper.windows_per_epoch = 8;
  c.ofnet_hyper.lr = 1e-3;
  c.masknet.base_width = 4;
  c.masknet.height = 16;
  c.masknet.width = 32;
  c.pretrain_hyper.epochs = 2;
  c.pretrain_hyper.lr = 1e-3;
  c.finetune_hyper.epochs = 1;
  c.finetune_hyper.lr = 1e-3;
  c.finetune_steps = 3;
  c.horizon = "mid";
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void determinism_run(const fs::path& dir) {
  fs::create_directories(dir);
  const auto cfg = tiny_config();
  Workbench bench(cfg);
  bench.forecaster().save(dir / "ofnet.ckpt");
  const auto warper = train_warper(bench, cfg);
  warper.save(dir / "masknet.ckpt");
  std::ofstream(dir / "report.json") << nlohmann::json(evaluate(bench, cfg, &warper)).dump(2);
  auto grid_cfg = cfg;
  grid_cfg.seed = 1;
  std::ofstream(dir / "report_seed1.json") << nlohmann::json(run_pipeline(bench, grid_cfg)).dump(2);
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "flowcast_acceptance_det";
  fs::remove_all(root);
  determinism_run(root / "a");
  determinism_run(root / "b");
  int same = 0, total = 0;
  std::string diff;
  for (const auto* name : {"ofnet.ckpt", "masknet.ckpt", "report.json", "report_seed1.json"}) {
    ++total;
    const auto a = slurp(root / "a" / name), b = slurp(root / "b" / name);
    if (!a.empty() && a == b) {
      ++same;
    } else {
      diff += std::string(diff.empty() ? "" : ",") + name;
    }
  }
  fs::remove_all(root);
  return {same == total, std::to_string(same) + "/" + std::to_string(total) + " artifacts byte-identical" +
                             (diff.empty() ? "" : " (differs: " + diff + ")")};
}

}  // namespace

int main() {
  set_logging(std::getenv("FLOWCAST_ACCEPTANCE_VERBOSE") != nullptr);
  torch::set_num_threads(1);
  Suite suite;

  suite.run(1, "exact-math oracles", 1.0, exact_math);
  suite.run(2, "gradient checks", 120.0, gradients);
  suite.run(3, "warp identities", 10.0, warp_identities);
  suite.run(4, "AP oracle equivalence", 60.0, ap_equivalence);

  const auto base = desk_config();
  std::unique_ptr<Workbench> bench;
  FlowStats stats;
  double ofnet_seconds = 0.0;
  suite.run(5, "flow forecasting skill", 0.0, [&] {
    bench = std::make_unique<Workbench>(base);
    const auto t0 = Clock::now();
    (void)bench->forecaster();
    ofnet_seconds = seconds_since(t0);
    stats = rollout_stats(*bench);
    const double r1 = stats.zero[0].mse / stats.model[0].mse;
    const double r9 = stats.zero[kMidTermSteps - 1].mse / stats.model[kMidTermSteps - 1].mse;
    const bool ok = r1 >= 4.0 && r9 >= 1.5 && ofnet_seconds <= 15 * 60;
    return Outcome{ok, "zero/model MSE t+1 " + fmt(r1) + "x (>=4), t+9 " + fmt(r9) + "x (>=1.5); training " +
                           fmt(ofnet_seconds) + "s (<=900), " + std::to_string(bench->val().size()) + " val sequences"};
  });

  suite.run(6, "rollout MSE trend", 0.0, [&] {
    if (!bench) return Outcome{false, "no workbench"};
    int inversions = 0;
    double mu = 0.0, mv = 0.0;
    std::string curve;
    for (int k = 0; k < kMidTermSteps; ++k) {
      if (k > 0 && stats.model[k].mse < stats.model[k - 1].mse) ++inversions;
      mu += stats.model[k].mse_u / kMidTermSteps;
      mv += stats.model[k].mse_v / kMidTermSteps;
      curve += (k ? "," : "") + fmt(stats.model[k].mse, 3);
    }
    const bool ok = inversions <= 1 && mu > mv;
    return Outcome{ok, "inversions " + std::to_string(inversions) + " (<=1), mean mse_u " + fmt(mu) + " > mse_v " +
                           fmt(mv) + "; mse by step [" + curve + "]"};
  });

  AblationTable table;
  suite.run(7, "regime ordering (3 seeds)", 45 * 60.0, [&] {
    if (!bench) return Outcome{false, "no workbench"};
    const auto regimes = standard_regimes();
    const std::vector<std::uint64_t> seeds{0, 1, 2};
    table = run_ablation_grid(*bench, regimes, seeds);
    std::cout << format_table(table);
    auto row = [&](const std::string& name) -> const AblationRow& {
      for (const auto& r : table.rows) {
        if (r.regime.name == name) return r;
      }
      throw ConfigError("missing regime " + name);
    };
    const double ft2_mid = seed_mean(row("pretrain_finetune_2").mid_term, &EvalReport::iou);
    const double pre_mid = seed_mean(row("pretrain_only").mid_term, &EvalReport::iou);
    const double warp_mid = seed_mean(row("warping").mid_term, &EvalReport::iou);
    const double ft2_short = seed_mean(row("pretrain_finetune_2").short_term, &EvalReport::iou);
    const double pred_short = seed_mean(row("predicted_only_all").short_term, &EvalReport::iou);
    const bool ok = ft2_mid >= pre_mid && pre_mid >= warp_mid && ft2_short >= pred_short;
    return Outcome{ok, "mid IoU ft2 " + fmt(ft2_mid) + " >= pretrain " + fmt(pre_mid) + " >= warp " + fmt(warp_mid) +
                           "; short IoU ft2 " + fmt(ft2_short) + " >= predicted-only " + fmt(pred_short) +
                           "; ofnet time excluded (" + fmt(ofnet_seconds) + "s)"};
  });

  suite.run(8, "oracle-flow dominance", 0.0, [&] {
    if (!bench) return Outcome{false, "no workbench"};
    auto cfg = base;
    const auto full = train_warper(*bench, cfg);
    const MaskWarper& oracle_model = bench->pretrained(cfg.seed);
    bool ok = true;
    std::string detail;
    for (const auto* horizon : {"short", "mid"}) {
      cfg.horizon = horizon;
      cfg.eval_flow = FlowSource::kPredicted;
      const auto pred = evaluate(*bench, cfg, &full);
      cfg.eval_flow = FlowSource::kOracle;
      const auto orc = evaluate(*bench, cfg, &oracle_model);
      ok = ok && orc.ap50 > pred.ap50 && orc.iou > pred.iou;
      detail += std::string(detail.empty() ? "" : "; ") + horizon + " AP50 " + fmt(100 * orc.ap50, 3) + " vs " +
                fmt(100 * pred.ap50, 3) + ", IoU " + fmt(100 * orc.iou, 3) + " vs " + fmt(100 * pred.iou, 3);
    }
    return Outcome{ok, "oracle vs predicted: " + detail};
  });

  suite.run(9, "cross-entropy collapse", 0.0, [&] {
    if (!bench) return Outcome{false, "no workbench"};
    MaskWarper ce(base.masknet, base.seed);
    auto hyper = base.pretrain_hyper;
    hyper.loss = MaskLoss::kCrossEntropy;
    hyper.seed = base.seed;
    train_masknet_pretrain(ce, bench->oracle_dataset(), hyper);
    const double ce_ratio = foreground_ratio(ce, bench->oracle_dataset());
    const double dice_ratio = foreground_ratio(bench->pretrained(base.seed), bench->oracle_dataset());
    return Outcome{ce_ratio < 0.1, "predicted/gt foreground: cross-entropy " + fmt(ce_ratio) + " (<0.1), dice " +
                                       fmt(dice_ratio)};
  });

  suite.run(10, "determinism", 0.0, determinism);

  std::ofstream("acceptance_results.json") << suite.record.dump(2) << "\n";
  std::printf("%d/10 criteria passed\n", 10 - suite.failures);
  return suite.failures == 0 ? 0 : 1;
}
