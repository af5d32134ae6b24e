// dpc: command-line front end for the two-stage prompt tuning pipeline.
//
// Exit codes: 0 ok, 1 other failure, 2 configuration error, 3 numerical
// divergence, 4 gradient check failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/os.h>
#include <nlohmann/json.hpp>

#include "dpc/checkpoint.hpp"
#include "dpc/config.hpp"
#include "dpc/errors.hpp"
#include "dpc/eval.hpp"
#include "dpc/gradcheck.hpp"
#include "dpc/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitGradCheck = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

dpc::ExperimentConfig load(const Common& c) {
  dpc::ExperimentConfig cfg = c.config.empty() ? dpc::default_config() : dpc::load_config(c.config);
  if (c.seed) {
    // Reseeding rederives every per-stage seed from the new root.
    const dpc::ExperimentConfig fresh = dpc::default_config(*c.seed);
    cfg.seed = fresh.seed;
    cfg.dataset.seed = fresh.dataset.seed;
    cfg.encoder.seed = fresh.encoder.seed;
    cfg.backbone.seed = fresh.backbone.seed;
    cfg.dpc.train.seed = fresh.dpc.train.seed;
  }
  dpc::validate(cfg);
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config (INI); defaults when omitted")
      ->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Override the root seed and rederive stage seeds");
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string cell = text.substr(pos, comma == std::string::npos ? std::string::npos
                                                                         : comma - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw dpc::ConfigError(fmt::format("--values: '{}' is not a number", cell));
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

dpc::SyntheticDataset dataset_for(const dpc::ExperimentConfig& cfg, const std::string& file) {
  if (file.empty()) return dpc::generate(cfg.dataset);
  dpc::SyntheticDataset ds = dpc::load_dataset_file(file);
  if (!(ds.config == cfg.dataset)) {
    throw dpc::ConfigError("dataset file does not match the config's [dataset] section");
  }
  return ds;
}

void print_report(const char* label, const dpc::EvalReport& r) {
  fmt::print("{:<10} base {:6.2f}  new {:6.2f}  hm {:6.2f}\n", label, r.base_acc, r.new_acc, r.hm);
}

// Stage outputs for sweeps over training parameters.
dpc::EvalReport train_and_eval(const dpc::ExperimentConfig& cfg) {
  const dpc::SyntheticDataset ds = dpc::generate(cfg.dataset);
  const dpc::FrozenEncoders enc(cfg.encoder);
  const dpc::StageOutput backbone = dpc::run_backbone_stage(ds, enc, cfg);
  const dpc::StageOutput stage2 = dpc::run_dpc_stage(ds, enc, backbone.checkpoint, cfg);
  const auto [base_prompt, new_prompt] =
      dpc::inference_prompts(stage2.checkpoint.dual(), cfg.toggles);
  return dpc::evaluate_prompts(enc, ds, base_prompt, new_prompt, cfg.backbone.tau);
}

int run(int argc, char** argv) {
  CLI::App app{"Dual-prompt tuning on frozen toy encoders"};
  app.require_subcommand(1);

  Common gen_common;
  std::string gen_out = "dataset.ini";
  CLI::App* gen = app.add_subcommand("gen-data", "Write a dataset file for the config");
  add_common(gen, gen_common);
  gen->add_option("--out", gen_out, "Dataset file to write");

  Common tb_common;
  std::string tb_dataset, tb_out = "backbone.ckpt";
  CLI::App* tb = app.add_subcommand("train-backbone", "Stage 1: cross-entropy prompt tuning");
  add_common(tb, tb_common);
  tb->add_option("--dataset", tb_dataset, "Dataset file")->check(CLI::ExistingFile);
  tb->add_option("--out", tb_out, "Checkpoint to write");

  Common td_common;
  std::string td_backbone, td_dataset, td_out = "dpc.ckpt";
  std::optional<std::size_t> td_k, td_batch;
  std::optional<double> td_omega_base;
  CLI::App* td = app.add_subcommand("train-dpc", "Stage 2: hard-negative tuning of P'");
  add_common(td, td_common);
  td->add_option("--backbone", td_backbone, "Stage-1 checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  td->add_option("--dataset", td_dataset, "Dataset file")->check(CLI::ExistingFile);
  td->add_option("--out", td_out, "Checkpoint to write");
  td->add_option("--k", td_k, "Top-K of the negative sampler");
  td->add_option("--batch", td_batch, "Stage-2 batch size");
  td->add_option("--omega-base", td_omega_base, "Base-class weight");

  std::string ev_ckpt, ev_dataset, ev_manifest, ev_report = "report.json";
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint or rebuild a manifest report");
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--dataset", ev_dataset, "Dataset file")->check(CLI::ExistingFile);
  ev->add_option("--manifest", ev_manifest, "Pipeline manifest")->check(CLI::ExistingFile);
  ev->add_option("--report", ev_report, "Report JSON to write");

  Common sw_common;
  std::string sw_param, sw_values, sw_out = "sweep.csv";
  CLI::App* sw = app.add_subcommand("sweep", "Accuracy over a parameter grid");
  add_common(sw, sw_common);
  sw->add_option("--param", sw_param, "Swept parameter")
      ->required()
      ->check(CLI::IsMember({"omega_base", "omega_new", "k", "epochs"}));
  sw->add_option("--values", sw_values, "Comma-separated values (omega grids default)");
  sw->add_option("--out", sw_out, "CSV to write");

  Common ab_common;
  std::string ab_out = "ablation.csv";
  CLI::App* ab = app.add_subcommand("ablate", "Component ablation grid");
  add_common(ab, ab_common);
  ab->add_option("--out", ab_out, "CSV to write");

  Common gc_common;
  std::size_t gc_probes = 100;
  CLI::App* gc = app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients");
  add_common(gc, gc_common);
  gc->add_option("--probes", gc_probes, "Number of seeded probes")->check(CLI::PositiveNumber);

  Common rn_common;
  std::optional<std::size_t> rn_budget;
  std::string rn_manifest, rn_out;
  CLI::App* rn = app.add_subcommand("run", "Full pipeline with manifest");
  add_common(rn, rn_common);
  rn->add_option("--epoch-budget", rn_budget, "Total epochs, split half and half");
  rn->add_option("--manifest", rn_manifest, "Rerun the config of an existing manifest")
      ->check(CLI::ExistingFile);
  rn->add_option("--out", rn_out, "Output directory (overrides config and DPC_OUTPUT_DIR)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (gen->parsed()) {
    const dpc::ExperimentConfig cfg = load(gen_common);
    dpc::save_dataset_file(gen_out, dpc::generate(cfg.dataset));
    fmt::print("wrote {}\n", gen_out);
  } else if (tb->parsed()) {
    const dpc::ExperimentConfig cfg = load(tb_common);
    const dpc::SyntheticDataset ds = dataset_for(cfg, tb_dataset);
    const dpc::FrozenEncoders enc(cfg.encoder);
    const dpc::StageOutput out = dpc::run_backbone_stage(ds, enc, cfg);
    dpc::save_checkpoint(tb_out, out.checkpoint);
    const fs::path dir = fs::path(tb_out).parent_path();
    dpc::write_loss_curve_csv(dir / "loss_curve.csv", out.loss_curve);
    print_report("backbone", dpc::evaluate_prompts(enc, ds, out.checkpoint.tuned,
                                                   out.checkpoint.tuned, cfg.backbone.tau));
  } else if (td->parsed()) {
    dpc::ExperimentConfig cfg = load(td_common);
    if (td_k) cfg.dpc.top_k = *td_k;
    if (td_batch) cfg.dpc.train.batch_size = *td_batch;
    if (td_omega_base) cfg.dpc.omega_base = *td_omega_base;
    dpc::validate(cfg);
    const dpc::Checkpoint backbone = dpc::load_checkpoint(td_backbone);
    const dpc::SyntheticDataset ds = dataset_for(cfg, td_dataset);
    const dpc::FrozenEncoders enc(cfg.encoder);
    const dpc::StageOutput out = dpc::run_dpc_stage(ds, enc, backbone, cfg);
    dpc::save_checkpoint(td_out, out.checkpoint);
    const fs::path dir = fs::path(td_out).parent_path();
    dpc::write_loss_curve_csv(dir / "dpc_loss_curve.csv", out.loss_curve);
    dpc::write_audit_csv(dir / "sampler_audit.csv", out.audit);
    const auto [base_prompt, new_prompt] =
        dpc::inference_prompts(out.checkpoint.dual(), cfg.toggles);
    print_report("dpc", dpc::evaluate_prompts(enc, ds, base_prompt, new_prompt, cfg.backbone.tau));
  } else if (ev->parsed()) {
    dpc::EvalReport r;
    if (!ev_manifest.empty()) {
      r = dpc::eval_from_manifest(ev_manifest, ev_report);
    } else {
      if (ev_ckpt.empty() || ev_dataset.empty()) {
        throw dpc::ConfigError("eval needs --manifest, or both --ckpt and --dataset");
      }
      r = dpc::eval_checkpoint(ev_ckpt, ev_dataset, ev_report);
    }
    print_report("eval", r);
  } else if (sw->parsed()) {
    const dpc::ExperimentConfig cfg = load(sw_common);
    std::vector<double> values;
    if (!sw_values.empty()) {
      values = parse_values(sw_values);
    } else if (sw_param == "omega_base") {
      values = dpc::kOmegaBaseGrid;
    } else if (sw_param == "omega_new") {
      values = dpc::kOmegaNewGrid;
    } else {
      throw dpc::ConfigError(fmt::format("--values is required for --param {}", sw_param));
    }
    dpc::SweepResult result;
    result.param = sw_param;
    if (sw_param == "omega_base" || sw_param == "omega_new") {
      const dpc::SyntheticDataset ds = dpc::generate(cfg.dataset);
      const dpc::FrozenEncoders enc(cfg.encoder);
      const dpc::StageOutput backbone = dpc::run_backbone_stage(ds, enc, cfg);
      const dpc::StageOutput stage2 = dpc::run_dpc_stage(ds, enc, backbone.checkpoint, cfg);
      result = dpc::sweep_omega(stage2.checkpoint.dual(), enc, ds, values,
                                sw_param == "omega_base" ? dpc::Split::base
                                                         : dpc::Split::new_classes,
                                cfg.backbone.tau);
    } else {
      for (double v : values) {
        dpc::ExperimentConfig c = cfg;
        if (v < 1.0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
          throw dpc::ConfigError(fmt::format("--param {} needs positive integers", sw_param));
        }
        const auto n = static_cast<std::size_t>(v);
        if (sw_param == "k") {
          c.dpc.top_k = n;
        } else {
          const auto [first, second] = dpc::split_epoch_budget(n);
          c.backbone.epochs = first;
          c.dpc.train.epochs = second;
        }
        dpc::validate(c);
        const dpc::EvalReport r = train_and_eval(c);
        result.rows.push_back({v, r.base_acc, r.new_acc, r.hm});
      }
    }
    dpc::write_sweep_csv(sw_out, {result}, cfg.seed);
    for (const dpc::SweepRow& r : result.rows)
      fmt::print("{}={:<8g} base {:6.2f}  new {:6.2f}  hm {:6.2f}\n", sw_param, r.value,
                 r.base_acc, r.new_acc, r.hm);
  } else if (ab->parsed()) {
    const dpc::ExperimentConfig cfg = load(ab_common);
    const dpc::SyntheticDataset ds = dpc::generate(cfg.dataset);
    const dpc::FrozenEncoders enc(cfg.encoder);
    const dpc::StageOutput backbone = dpc::run_backbone_stage(ds, enc, cfg);
    dpc::TrainConfig cont = cfg.backbone;
    cont.seed = cfg.dpc.train.seed;
    const auto rows = dpc::ablation_matrix(ds, enc, {backbone.checkpoint.tuned, cont, cfg.dpc});
    if (fs::path(ab_out).has_parent_path()) fs::create_directories(fs::path(ab_out).parent_path());
    auto csv = fmt::output_file(ab_out);
    csv.print("row,ts,dhno,we,de,base_acc,new_acc,hm,seed\n");
    for (const dpc::AblationRow& r : rows) {
      csv.print("{},{:d},{:d},{:d},{:d},{:.2f},{:.2f},{:.2f},{}\n", r.name, r.two_step, r.dhno,
                r.weighting, r.decoupling, r.base_acc, r.new_acc, r.hm, cfg.seed);
      fmt::print("{:<7} base {:6.2f}  new {:6.2f}  hm {:6.2f}\n", r.name, r.base_acc, r.new_acc,
                 r.hm);
    }
  } else if (gc->parsed()) {
    const dpc::ExperimentConfig cfg = load(gc_common);
    const dpc::GradCheckReport report = dpc::gradcheck(cfg, gc_probes);
    for (const dpc::OpCheck& op : report.ops)
      fmt::print("{:<20} probes {:4}  max rel err {:.3e}  {}\n", op.op, op.probes,
                 op.max_rel_error, op.passed ? "ok" : "FAIL");
    dpc::require_passed(report);
  } else if (rn->parsed()) {
    dpc::ExperimentConfig cfg;
    std::optional<std::size_t> budget = rn_budget;
    if (!rn_manifest.empty()) {
      std::ifstream in(rn_manifest);
      const nlohmann::json m = nlohmann::json::parse(in);
      cfg = dpc::parse_config(m.at("config").get<std::string>());
      // The stored config already has the budget applied.
      budget.reset();
    } else {
      cfg = load(rn_common);
    }
    std::optional<fs::path> out_dir;
    if (!rn_out.empty()) out_dir = rn_out;
    const dpc::PipelineResult r = dpc::run_pipeline(cfg, budget, out_dir);
    print_report("backbone", r.backbone_report);
    print_report("dpc", r.report);
    fmt::print("artifacts in {}\n", r.output_dir.string());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dpc::DivergedLoss& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitDiverged;
  } catch (const dpc::GradCheckFailed& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitGradCheck;
  } catch (const dpc::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const dpc::BatchExceedsBaseClasses& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const dpc::OmegaOutOfRange& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const dpc::TooFewClasses& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const dpc::NonPositiveTemperature& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitOther;
  }
}
