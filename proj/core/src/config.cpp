#include "dpc/config.hpp"

#include <fmt/format.h>

#include "dpc/errors.hpp"
#include "dpc/rng.hpp"
#include "ini.hpp"
#include "sections.hpp"

namespace dpc {

ExperimentConfig default_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  c.dataset.seed = derive_seed(seed, "dataset");
  c.encoder.seed = derive_seed(seed, "encoder");
  c.backbone.seed = derive_seed(seed, "backbone");
  c.dpc.train.seed = derive_seed(seed, "dpc");
  return c;
}

namespace {

const char* init_name(PromptInit i) { return i == PromptInit::gaussian ? "gaussian" : "template"; }
const char* loss_name(DpcLoss l) { return l == DpcLoss::infonce ? "infonce" : "cross_entropy"; }

ExperimentConfig from_tree(const ini::Tree& tree) {
  ini::require_known_sections(tree,
                              {"experiment", "dataset", "encoder", "backbone", "dpc", "toggles"});
  std::uint64_t root = 0;
  std::string output_dir = "out";
  if (const ini::Tree* s = ini::find_section(tree, "experiment")) {
    ini::require_known_keys(*s, "experiment", {"seed", "output_dir"});
    ini::read(*s, "experiment", "seed", root);
    ini::read(*s, "experiment", "output_dir", output_dir);
  }
  ExperimentConfig c = default_config(root);
  c.output_dir = output_dir;

  if (const ini::Tree* s = ini::find_section(tree, "encoder")) {
    ini::require_known_keys(*s, "encoder",
                            {"d_e", "d_h", "d", "tower_coupling", "seed", "prompt_length",
                             "visual_prompt_length", "prompt_init", "prompt_init_std"});
    ini::read(*s, "encoder", "d_e", c.encoder.d_e);
    ini::read(*s, "encoder", "d_h", c.encoder.d_h);
    ini::read(*s, "encoder", "d", c.encoder.d);
    ini::read(*s, "encoder", "tower_coupling", c.encoder.tower_coupling);
    ini::read(*s, "encoder", "seed", c.encoder.seed);
    ini::read(*s, "encoder", "prompt_length", c.prompt.length);
    ini::read(*s, "encoder", "visual_prompt_length", c.prompt.visual_length);
    ini::read(*s, "encoder", "prompt_init_std", c.prompt.init_std);
    std::string init = init_name(c.prompt.init);
    ini::read(*s, "encoder", "prompt_init", init);
    if (init == "gaussian") {
      c.prompt.init = PromptInit::gaussian;
    } else if (init == "template") {
      c.prompt.init = PromptInit::template_mean;
    } else {
      throw ConfigError(fmt::format("encoder.prompt_init: unknown value '{}'", init));
    }
  }

  if (const ini::Tree* s = ini::find_section(tree, "dataset")) {
    if (s->find("d_e") != s->not_found()) {
      throw ConfigError("dataset.d_e is not configurable here; set encoder.d_e");
    }
    const std::uint64_t derived = c.dataset.seed;
    c.dataset = read_dataset_section(*s);
    if (s->find("seed") == s->not_found()) c.dataset.seed = derived;
  }
  c.dataset.d_e = c.encoder.d_e;

  if (const ini::Tree* s = ini::find_section(tree, "backbone")) {
    ini::require_known_keys(*s, "backbone",
                            {"epochs", "lr", "batch_size", "momentum", "temperature", "seed"});
    ini::read(*s, "backbone", "epochs", c.backbone.epochs);
    ini::read(*s, "backbone", "lr", c.backbone.lr);
    ini::read(*s, "backbone", "batch_size", c.backbone.batch_size);
    ini::read(*s, "backbone", "momentum", c.backbone.momentum);
    ini::read(*s, "backbone", "temperature", c.backbone.tau);
    ini::read(*s, "backbone", "seed", c.backbone.seed);
  }
  c.dpc.train.tau = c.backbone.tau;

  if (const ini::Tree* s = ini::find_section(tree, "dpc")) {
    ini::require_known_keys(*s, "dpc",
                            {"epochs", "lr", "batch_size", "momentum", "top_k", "omega_base",
                             "omega_new", "loss", "seed"});
    ini::read(*s, "dpc", "epochs", c.dpc.train.epochs);
    ini::read(*s, "dpc", "lr", c.dpc.train.lr);
    ini::read(*s, "dpc", "batch_size", c.dpc.train.batch_size);
    ini::read(*s, "dpc", "momentum", c.dpc.train.momentum);
    ini::read(*s, "dpc", "top_k", c.dpc.top_k);
    ini::read(*s, "dpc", "omega_base", c.dpc.omega_base);
    ini::read(*s, "dpc", "omega_new", c.dpc.omega_new);
    ini::read(*s, "dpc", "seed", c.dpc.train.seed);
    std::string loss = loss_name(c.dpc.loss);
    ini::read(*s, "dpc", "loss", loss);
    if (loss == "infonce") {
      c.dpc.loss = DpcLoss::infonce;
    } else if (loss == "cross_entropy") {
      c.dpc.loss = DpcLoss::cross_entropy;
    } else {
      throw ConfigError(fmt::format("dpc.loss: unknown value '{}'", loss));
    }
  }

  if (const ini::Tree* s = ini::find_section(tree, "toggles")) {
    ini::require_known_keys(*s, "toggles", {"visual_prompts", "dhno", "weighting", "decoupling"});
    ini::read(*s, "toggles", "visual_prompts", c.prompt.visual);
    ini::read(*s, "toggles", "dhno", c.toggles.dhno);
    ini::read(*s, "toggles", "weighting", c.toggles.weighting);
    ini::read(*s, "toggles", "decoupling", c.toggles.decoupling);
  }
  validate(c);
  return c;
}

ini::Tree to_tree(const ExperimentConfig& c) {
  ini::Tree t;
  const auto d = [](double v) { return ini::format_double(v); };
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  t.put("experiment.seed", c.seed);
  t.put("experiment.output_dir", c.output_dir);

  t.put("dataset.n_classes", c.dataset.n_classes);
  t.put("dataset.shots", c.dataset.shots);
  t.put("dataset.test_per_class", c.dataset.test_per_class);
  t.put("dataset.d_z", c.dataset.d_z);
  t.put("dataset.n_patches", c.dataset.n_patches);
  t.put("dataset.sigma", d(c.dataset.sigma));
  t.put("dataset.token_noise", d(c.dataset.token_noise));
  t.put("dataset.image_distortion", d(c.dataset.image_distortion));
  t.put("dataset.modality_gap", d(c.dataset.modality_gap));
  t.put("dataset.seed", c.dataset.seed);

  t.put("encoder.d_e", c.encoder.d_e);
  t.put("encoder.d_h", c.encoder.d_h);
  t.put("encoder.d", c.encoder.d);
  t.put("encoder.tower_coupling", d(c.encoder.tower_coupling));
  t.put("encoder.seed", c.encoder.seed);
  t.put("encoder.prompt_length", c.prompt.length);
  t.put("encoder.visual_prompt_length", c.prompt.visual_length);
  t.put("encoder.prompt_init", init_name(c.prompt.init));
  t.put("encoder.prompt_init_std", d(c.prompt.init_std));

  t.put("backbone.epochs", c.backbone.epochs);
  t.put("backbone.lr", d(c.backbone.lr));
  t.put("backbone.batch_size", c.backbone.batch_size);
  t.put("backbone.momentum", d(c.backbone.momentum));
  t.put("backbone.temperature", d(c.backbone.tau));
  t.put("backbone.seed", c.backbone.seed);

  t.put("dpc.epochs", c.dpc.train.epochs);
  t.put("dpc.lr", d(c.dpc.train.lr));
  t.put("dpc.batch_size", c.dpc.train.batch_size);
  t.put("dpc.momentum", d(c.dpc.train.momentum));
  t.put("dpc.top_k", c.dpc.top_k);
  t.put("dpc.omega_base", d(c.dpc.omega_base));
  t.put("dpc.omega_new", d(c.dpc.omega_new));
  t.put("dpc.loss", loss_name(c.dpc.loss));
  t.put("dpc.seed", c.dpc.train.seed);

  t.put("toggles.visual_prompts", b(c.prompt.visual));
  t.put("toggles.dhno", b(c.toggles.dhno));
  t.put("toggles.weighting", b(c.toggles.weighting));
  t.put("toggles.decoupling", b(c.toggles.decoupling));
  return t;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) { return from_tree(ini::read_string(text)); }

ExperimentConfig load_config(const std::filesystem::path& path) {
  return from_tree(ini::read_file(path));
}

std::string to_ini(const ExperimentConfig& config) { return ini::write_string(to_tree(config)); }

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  ini::write_file(path, to_tree(config));
}

void validate(const ExperimentConfig& c) {
  if (c.dataset.d_e != c.encoder.d_e) {
    throw ConfigError(
        fmt::format("dataset d_e {} differs from encoder d_e {}", c.dataset.d_e, c.encoder.d_e));
  }
  if (c.dataset.n_classes < 4) {
    throw TooFewClasses(fmt::format("need at least 4 classes, got {}", c.dataset.n_classes));
  }
  validate_train_config(c.backbone, "backbone");
  validate_train_config(c.dpc.train, "dpc");
  if (c.prompt.length == 0) throw ConfigError("encoder.prompt_length must be >= 1");
  if (c.prompt.visual && c.prompt.visual_length == 0) {
    throw ConfigError("encoder.visual_prompt_length must be >= 1 with visual prompts on");
  }
  for (double w : {c.dpc.omega_base, c.dpc.omega_new}) {
    if (!(w >= 0.0 && w <= 1.0)) throw OmegaOutOfRange(fmt::format("omega {} outside [0, 1]", w));
  }
  validate_batch_config((c.dataset.n_classes + 1) / 2, c.dpc.train.batch_size, c.dpc.top_k);
}

std::pair<std::size_t, std::size_t> split_epoch_budget(std::size_t total) {
  if (total < 2) throw ConfigError(fmt::format("epoch budget {} cannot be split in two", total));
  return {total / 2, total - total / 2};
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return to_ini(a) == to_ini(b);
}

}  // namespace dpc
