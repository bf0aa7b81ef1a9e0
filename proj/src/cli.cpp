#include "flowcast/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "flowcast/errors.hpp"
#include "flowcast/harness.hpp"
#include "flowcast/log.hpp"
#include "flowcast/plots.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace flowcast::cli {

namespace {

fs::path out_root() {
  const char* env = std::getenv("FLOWCAST_OUT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("flowcast_out");
}

fs::path resolve_out(const std::string& given, const std::string& fallback) {
  return given.empty() ? out_root() / fallback : fs::path(given);
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  ensure_parent(path);
  write_text(path, j.dump(2) + "\n");
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

SceneConfig scene_from(const std::string& config_path) {
  SceneConfig scene = desk_config().scene;
  if (!config_path.empty()) scene = read_json(config_path).get<SceneConfig>();
  return scene;
}

std::vector<SequenceSample> load_val(const std::string& manifest) {
  auto val = load_split(load_manifest(manifest), "val");
  if (val.empty()) throw ConfigError("manifest has no val sequences");
  return val;
}

// Plots for one pipeline run: flow MSE, pooled PR curve, and one overlay.
void emit_plots(const fs::path& dir, const EvalReport& report, std::span<const SequenceSample> val,
                std::span<const InstanceForecast> forecasts) {
  if (!report.flow_mse.empty()) write_text(dir / "flow_mse.svg", svg_mse_plot(report.flow_mse, "Flow rollout MSE"));
  std::vector<std::vector<InstanceMask>> preds, gts;
  const auto target = static_cast<std::size_t>(report.anchor + report.steps);
  for (std::size_t i = 0; i < val.size(); ++i) {
    preds.push_back(forecasts[i].instances);
    gts.push_back(val[i].instances[target]);
  }
  write_text(dir / "pr_curve.svg", svg_pr_plot(precision_recall(preds, gts, 0.5), "Precision-recall at IoU 0.5"));
  for (std::size_t i = 0; i < std::min<std::size_t>(val.size(), 3); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "overlay_%03zu.ppm", i);
    write_bytes(dir / name, overlay_ppm(val[i].semantics[target], forecasts[i].instances, gts[i]));
  }
}

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--threads", c.threads, "Intra-op threads")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_flag("--quiet", c.quiet, "Suppress JSON logs on stderr");
}

void apply_common(const Common& c) {
  set_logging(!c.quiet);
  torch::set_num_threads(c.threads);
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"flowcast: optical-flow-driven instance segmentation forecasting"};
  app.require_subcommand(1);
  app.footer("Outputs default to $FLOWCAST_OUT (or ./flowcast_out) when --out is omitted.");

  Common common;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic moving-shapes dataset");
  std::string synth_out, synth_config;
  int synth_n = 200, synth_frames = 0;
  synth->add_option("--out", synth_out, "Dataset directory");
  synth->add_option("--n", synth_n, "Number of sequences")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--config", synth_config, "Scene config JSON");
  synth->add_option("--frames", synth_frames, "Override frames per sequence");
  add_common(synth, common);

  // train-flow
  auto* tflow = app.add_subcommand("train-flow", "Train the flow forecaster");
  std::string tf_data, tf_out, tf_config;
  int tf_epochs = -1, tf_windows = -1;
  double tf_lr = -1;
  tflow->add_option("--data", tf_data, "Dataset manifest")->required();
  tflow->add_option("--out", tf_out, "Checkpoint path");
  tflow->add_option("--config", tf_config, "JSON with optional 'model' and 'hyper' objects");
  tflow->add_option("--epochs", tf_epochs, "Override epochs");
  tflow->add_option("--lr", tf_lr, "Override learning rate");
  tflow->add_option("--windows", tf_windows, "Override windows per epoch (0 = all)");
  add_common(tflow, common);

  // train-mask
  auto* tmask = app.add_subcommand("train-mask", "Train the mask warper (pretrain or finetune stage)");
  std::string tm_data, tm_out, tm_init, tm_flow, tm_stage = "pretrain", tm_layers = "all", tm_loss = "dice",
                                                   tm_feeding = "autoregressive";
  int tm_epochs = -1, tm_max_seq = 0, tm_steps = kMidTermSteps, tm_stride = 3;
  double tm_lr = -1;
  tmask->add_option("--data", tm_data, "Dataset manifest")->required();
  tmask->add_option("--out", tm_out, "Checkpoint path");
  tmask->add_option("--stage", tm_stage, "pretrain (oracle flows) or finetune (predicted flows)")
      ->check(CLI::IsMember({"pretrain", "finetune"}))
      ->capture_default_str();
  tmask->add_option("--init", tm_init, "Warper checkpoint to start from");
  tmask->add_option("--flow-ckpt", tm_flow, "Flow forecaster checkpoint (finetune stage)");
  tmask->add_option("--layers", tm_layers, "Trainable layers: 'all' or the last k")->capture_default_str();
  tmask->add_option("--loss", tm_loss, "dice or cross_entropy")
      ->check(CLI::IsMember({"dice", "cross_entropy"}))
      ->capture_default_str();
  tmask->add_option("--feeding", tm_feeding, "autoregressive or teacher_forced")
      ->check(CLI::IsMember({"autoregressive", "teacher_forced"}))
      ->capture_default_str();
  tmask->add_option("--epochs", tm_epochs, "Override epochs");
  tmask->add_option("--lr", tm_lr, "Override learning rate");
  tmask->add_option("--max-sequences", tm_max_seq, "Use at most this many training sequences (0 = all)");
  tmask->add_option("--steps", tm_steps, "Rollout length behind each finetuning anchor")->capture_default_str();
  tmask->add_option("--anchor-stride", tm_stride, "Frames between finetuning anchors")->capture_default_str();
  add_common(tmask, common);

  // rollout
  auto* roll = app.add_subcommand("rollout", "Forecast future flows from the last T flows in a directory");
  std::string ro_ckpt, ro_past, ro_out;
  int ro_n = kMidTermSteps;
  roll->add_option("--ckpt", ro_ckpt, "Flow forecaster checkpoint")->required();
  roll->add_option("--past", ro_past, "Directory of past .flo files (sorted by name)")->required();
  roll->add_option("--n", ro_n, "Steps to forecast")->capture_default_str()->check(CLI::PositiveNumber);
  roll->add_option("--out", ro_out, "Output directory");
  add_common(roll, common);

  // baseline
  auto* base = app.add_subcommand("baseline", "Evaluate a non-learned mask forecaster on the val split");
  std::string bl_data, bl_out, bl_method = "warp", bl_horizon = "short", bl_flow = "oracle", bl_flow_ckpt,
                           bl_mode = "per_step";
  int bl_anchor = 6;
  base->add_option("--data", bl_data, "Dataset manifest")->required();
  base->add_option("--method", bl_method, "copy, shift or warp")
      ->check(CLI::IsMember({"copy", "shift", "warp"}))
      ->capture_default_str();
  base->add_option("--horizon", bl_horizon, "short, mid or a step count")->capture_default_str();
  base->add_option("--flow", bl_flow, "oracle or predicted")
      ->check(CLI::IsMember({"oracle", "predicted"}))
      ->capture_default_str();
  base->add_option("--flow-ckpt", bl_flow_ckpt, "Flow forecaster checkpoint (predicted flows)");
  base->add_option("--mode", bl_mode, "per_step or single_shot")
      ->check(CLI::IsMember({"per_step", "single_shot"}))
      ->capture_default_str();
  base->add_option("--anchor", bl_anchor, "Anchor frame (oracle flows)")->capture_default_str();
  base->add_option("--out", bl_out, "Report path");
  add_common(base, common);

  // eval
  auto* ev = app.add_subcommand("eval", "Compare predicted flows / semantic maps against ground truth files");
  std::string ev_pred, ev_gt, ev_out;
  ev->add_option("--pred", ev_pred, "Directory of predicted .flo / .pgm files")->required();
  ev->add_option("--gt", ev_gt, "Directory of ground-truth .flo / .pgm files")->required();
  ev->add_option("--out", ev_out, "Report path");
  add_common(ev, common);

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run the end-to-end pipeline or the training-regime grid");
  std::string ex_config, ex_out, ex_horizon;
  bool ex_grid = false, ex_teacher = false;
  std::vector<std::uint64_t> ex_seeds;
  exp->add_option("--config", ex_config, "Experiment config JSON")->required();
  exp->add_option("--out", ex_out, "Output directory");
  exp->add_option("--horizon", ex_horizon, "Override horizon");
  exp->add_flag("--grid", ex_grid, "Run the five training regimes at both horizons");
  exp->add_flag("--teacher-forced", ex_teacher, "Add a teacher-forced finetuning row to the grid");
  exp->add_option("--seeds", ex_seeds, "Grid seeds")->delimiter(',');
  add_common(exp, common);

  // report
  auto* rep = app.add_subcommand("report", "Render plots and tables from a saved report");
  std::string rp_in, rp_out;
  rep->add_option("--in", rp_in, "report.json or grid.json")->required();
  rep->add_option("--out", rp_out, "Output directory");
  add_common(rep, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    apply_common(common);

    if (synth->parsed()) {
      SceneConfig scene = scene_from(synth_config);
      scene.seed = common.seed;
      if (synth_frames > 0) scene.frames = synth_frames;
      const fs::path out = resolve_out(synth_out, "data");
      const auto manifest = emit_dataset(scene, synth_n, out);
      std::cout << (out / kManifestName).string() << "\n";
      log_event("synth_done", {{"sequences", manifest.records.size()}, {"out", out.string()}});
    } else if (tflow->parsed()) {
      ForecasterConfig model;
      ForecasterHyper hyper;
      const auto desk = desk_config();
      model = desk.ofnet;
      hyper = desk.ofnet_hyper;
      if (!tf_config.empty()) {
        const auto j = read_json(tf_config);
        if (j.contains("model")) model = j.at("model").get<ForecasterConfig>();
        if (j.contains("hyper")) hyper = j.at("hyper").get<ForecasterHyper>();
      }
      hyper.seed = common.seed;
      if (tf_epochs >= 0) hyper.epochs = tf_epochs;
      if (tf_lr > 0) hyper.lr = tf_lr;
      if (tf_windows >= 0) hyper.windows_per_epoch = tf_windows;
      const auto train = load_split(load_manifest(tf_data), "train");
      FlowForecaster net(model, hyper.seed);
      const auto log = train_ofnet(net, train, hyper);
      const fs::path out = resolve_out(tf_out, "ofnet.ckpt");
      ensure_parent(out);
      net.save(out);
      write_json(fs::path(out.string() + ".log.json"), {{"model", model}, {"hyper", hyper}, {"log", log}});
      std::cout << out.string() << "\n";
    } else if (tmask->parsed()) {
      const auto desk = desk_config();
      const bool finetune = tm_stage == "finetune";
      WarperHyper hyper = finetune ? desk.finetune_hyper : desk.pretrain_hyper;
      hyper.seed = common.seed;
      hyper.loss = tm_loss == "dice" ? MaskLoss::kDice : MaskLoss::kCrossEntropy;
      if (tm_epochs >= 0) hyper.epochs = tm_epochs;
      if (tm_lr > 0) hyper.lr = tm_lr;
      auto train = load_split(load_manifest(tm_data), "train");
      if (train.empty()) throw ConfigError("manifest has no train sequences");
      if (tm_max_seq > 0 && static_cast<std::size_t>(tm_max_seq) < train.size()) train.resize(tm_max_seq);
      WarperConfig wc = desk.masknet;
      wc.height = train.front().height();
      wc.width = train.front().width();
      MaskWarper model = tm_init.empty() ? MaskWarper(wc, common.seed) : MaskWarper::load(tm_init);
      MaskTrainingLog log;
      if (finetune) {
        if (tm_flow.empty()) throw ConfigError("finetune stage needs --flow-ckpt");
        const auto forecaster = FlowForecaster::load(tm_flow);
        const auto data = build_predicted_dataset(train, forecaster, tm_steps, parse_flow_feeding(tm_feeding), tm_stride);
        log = train_masknet_finetune(model, data, hyper, LayerSelection::parse(tm_layers));
      } else {
        log = train_masknet(model, build_oracle_dataset(train), hyper, LayerSelection::parse(tm_layers));
      }
      const fs::path out = resolve_out(tm_out, "masknet.ckpt");
      ensure_parent(out);
      model.save(out);
      write_json(fs::path(out.string() + ".log.json"),
                 {{"stage", tm_stage}, {"layers", tm_layers}, {"hyper", hyper}, {"log", log}});
      std::cout << out.string() << "\n";
    } else if (roll->parsed()) {
      const auto model = FlowForecaster::load(ro_ckpt);
      const auto files = list_files(ro_past, ".flo");
      const auto T = static_cast<std::size_t>(model.config().sequence_length);
      if (files.size() < T) throw ConfigError("need at least " + std::to_string(T) + " past flows in " + ro_past);
      std::vector<FlowField> past;
      for (auto it = files.end() - static_cast<std::ptrdiff_t>(T); it != files.end(); ++it) past.push_back(flow_read(*it));
      const auto future = model.rollout(past, ro_n);
      const fs::path out = resolve_out(ro_out, "rollout");
      fs::create_directories(out);
      for (std::size_t k = 0; k < future.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "future_%02zu.flo", k + 1);
        flow_write(future[k], out / name);
      }
      log_event("rollout_done", {{"steps", future.size()}, {"out", out.string()}});
    } else if (base->parsed()) {
      const auto val = load_val(bl_data);
      const int steps = horizon_steps(bl_horizon);
      std::vector<std::vector<FlowField>> flows;
      int anchor = bl_anchor;
      const bool predicted = bl_flow == "predicted";
      if (predicted) {
        if (bl_flow_ckpt.empty()) throw ConfigError("predicted flows need --flow-ckpt");
        const auto forecaster = FlowForecaster::load(bl_flow_ckpt);
        anchor = forecaster.config().sequence_length;
        flows = predict_future_flows(val, forecaster, anchor, steps, FlowFeeding::kAutoregressive);
      } else {
        flows = oracle_future_flows(val, anchor, steps);
      }
      ForecastOptions opts;
      opts.method = parse_method(bl_method);
      opts.mode = parse_warp_mode(bl_mode);
      opts.rescore = RescoreConfig::for_width(val.front().width());
      std::vector<InstanceForecast> forecasts;
      for (std::size_t i = 0; i < val.size(); ++i) {
        forecasts.push_back(forecast_instances(val[i], anchor, flows[i], nullptr, opts));
      }
      auto report = evaluate_forecasts(val, anchor, steps, forecasts, predicted ? &flows : nullptr);
      report.config = {{"method", bl_method}, {"horizon", bl_horizon}, {"flow", bl_flow}, {"mode", bl_mode},
                       {"seed", common.seed}};
      const fs::path out = resolve_out(bl_out, "baseline.json");
      write_json(out, report);
      std::cout << out.string() << "\n";
    } else if (ev->parsed()) {
      json report = {{"report_version", 1}};
      const auto pred_flo = list_files(ev_pred, ".flo");
      const auto gt_flo = list_files(ev_gt, ".flo");
      if (pred_flo.size() != gt_flo.size()) throw ShapeError("flow file counts differ between --pred and --gt");
      std::vector<FlowField> pf, gf;
      for (std::size_t i = 0; i < pred_flo.size(); ++i) {
        pf.push_back(flow_read(pred_flo[i]));
        gf.push_back(flow_read(gt_flo[i]));
      }
      EvalReport tmp;
      tmp.flow_mse = flow_mse(pf, gf);
      report["flow_mse"] = json(tmp)["flow_mse"];
      const auto pred_pgm = list_files(ev_pred, ".pgm");
      const auto gt_pgm = list_files(ev_gt, ".pgm");
      if (pred_pgm.size() != gt_pgm.size()) throw ShapeError("semantic map counts differ between --pred and --gt");
      SemanticIouAccumulator acc;
      for (std::size_t i = 0; i < pred_pgm.size(); ++i) {
        SemanticMap p, g;
        p.labels = label_read(pred_pgm[i]);
        g.labels = label_read(gt_pgm[i]);
        require_same_shape(p.labels, g.labels, pred_pgm[i].filename().c_str());
        acc.add(p, g);
      }
      if (!pred_pgm.empty()) report["iou"] = acc.result().mean;
      const fs::path out = resolve_out(ev_out, "eval.json");
      write_json(out, report);
      std::cout << out.string() << "\n";
    } else if (exp->parsed()) {
      auto cfg = read_json(ex_config).get<ExperimentConfig>();
      if (exp->count("--seed") > 0) cfg.seed = common.seed;
      if (!ex_horizon.empty()) cfg.horizon = ex_horizon;
      cfg.threads = common.threads;
      const fs::path out = resolve_out(ex_out, cfg.name);
      fs::create_directories(out);
      Workbench bench(cfg);
      if (bench.base().ofnet_checkpoint.empty()) {
        bench.forecaster().save(out / "ofnet.ckpt");
        if (const auto* log = bench.forecaster_log()) write_json(out / "ofnet.log.json", *log);
      }
      if (ex_grid) {
        auto regimes = standard_regimes();
        if (ex_teacher) regimes.push_back({"teacher_forced_finetune_2", true, true, true, "2", FlowFeeding::kTeacherForced});
        std::vector<std::uint64_t> seeds = ex_seeds.empty() ? std::vector<std::uint64_t>{0, 1, 2} : ex_seeds;
        const auto table = run_ablation_grid(bench, regimes, seeds);
        json j = table;
        j["report_version"] = 1;
        j["config"] = cfg;
        write_json(out / "grid.json", j);
        write_text(out / "grid.txt", format_table(table));
        std::cout << format_table(table);
      } else {
        std::optional<MaskWarper> warper;
        if (cfg.method == ForecastMethod::kMaskNet) {
          warper = train_warper(bench, cfg);
          warper->save(out / "masknet.ckpt");
        }
        const auto* w = warper ? &*warper : nullptr;
        const int steps = cfg.steps();
        const auto& flows = bench.eval_flows(steps, cfg.eval_flow);
        std::vector<InstanceForecast> forecasts;
        for (std::size_t i = 0; i < bench.val().size(); ++i) {
          forecasts.push_back(forecast_instances(bench.val()[i], bench.anchor(), flows[i], w, cfg.forecast_options()));
        }
        auto report = evaluate_forecasts(bench.val(), bench.anchor(), steps, forecasts,
                                         cfg.eval_flow == FlowSource::kPredicted ? &flows : nullptr);
        report.config = cfg;
        write_json(out / "report.json", report);
        emit_plots(out, report, bench.val(), forecasts);
        std::cout << (out / "report.json").string() << "\n";
      }
    } else if (rep->parsed()) {
      const auto j = read_json(rp_in);
      const fs::path out = resolve_out(rp_out, "report");
      fs::create_directories(out);
      if (j.contains("rows")) {
        AblationTable table;
        table.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        for (const auto& row : j.at("rows")) {
          AblationRow r;
          r.regime.name = row.at("regime").get<std::string>();
          const auto data = row.at("train_data").get<std::string>();
          r.regime.pretrain = data.rfind("oracle", 0) == 0;
          r.regime.finetune = data.find("predicted") != std::string::npos;
          r.regime.trainable_layers = row.at("finetuned_layers").get<std::string>();
          for (const char* h : {"short", "mid"}) {
            EvalReport m;
            m.ap = row.at(h).at("ap").get<double>();
            m.ap50 = row.at(h).at("ap50").get<double>();
            m.iou = row.at(h).at("iou").get<double>();
            (std::string(h) == "short" ? r.short_term : r.mid_term).push_back(m);
          }
          table.rows.push_back(std::move(r));
        }
        write_text(out / "grid.txt", format_table(table));
        std::vector<Series> series;
        for (const auto& row : table.rows) {
          series.push_back({row.regime.name,
                            {static_cast<double>(kShortTermSteps), static_cast<double>(kMidTermSteps)},
                            {100 * row.short_term.front().iou, 100 * row.mid_term.front().iou}});
        }
        write_text(out / "iou_vs_horizon.svg", svg_line_plot({"Semantic IoU by regime", "steps ahead", "IoU (%)"}, series));
      } else {
        std::vector<FlowMse> mse;
        for (const auto& m : j.value("flow_mse", json::array())) {
          mse.push_back({m.at("mse").get<double>(), m.at("mse_u").get<double>(), m.at("mse_v").get<double>()});
        }
        if (!mse.empty()) write_text(out / "flow_mse.svg", svg_mse_plot(mse, "Flow rollout MSE"));
        std::ostringstream summary;
        summary << "steps " << j.value("steps", 0) << "  AP " << j.value("ap", 0.0) << "  AP50 " << j.value("ap50", 0.0)
                << "  IoU " << j.value("iou", 0.0) << "\n";
        write_text(out / "summary.txt", summary.str());
      }
      std::cout << out.string() << "\n";
    }
    return 0;
  } catch (const ShapeError& e) {
    std::cerr << "ShapeError: " << e.what() << "\n";
  } catch (const ConfigError& e) {
    std::cerr << "ConfigError: " << e.what() << "\n";
  } catch (const FormatError& e) {
    std::cerr << "FormatError: " << e.what() << "\n";
  } catch (const IoError& e) {
    std::cerr << "IoError: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace flowcast::cli
