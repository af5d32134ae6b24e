#include "dpc/checkpoint.hpp"

#include <fmt/format.h>

#include "dpc/errors.hpp"
#include "ini.hpp"

namespace dpc {

DualPromptState Checkpoint::dual() const {
  DualPromptState d = make_dual(tuned, omega_base, omega_new);
  if (parallel) d.parallel = clone_parallel(*parallel);
  return d;
}

namespace {

void put_prompt(ini::Tree& s, const std::string& prefix, const PromptState& p) {
  ini::put_matrix(s, prefix + "_text", p.text);
  if (p.visual) ini::put_matrix(s, prefix + "_visual", *p.visual);
}

PromptState get_prompt(const ini::Tree& s, const std::string& prefix, bool visual) {
  PromptState p;
  p.text = ini::get_matrix(s, prefix + "_text", "prompt");
  if (visual) p.visual = ini::get_matrix(s, prefix + "_visual", "prompt");
  return p;
}

// The config is stored flat so a checkpoint stays one INI level deep.
ini::Tree flatten(const ini::Tree& nested) {
  ini::Tree flat;
  for (const auto& [section, keys] : nested)
    for (const auto& [key, value] : keys)
      flat.put(ini::Tree::path_type(section + "/" + key, '|'), value.data());
  return flat;
}

ini::Tree unflatten(const ini::Tree& flat) {
  ini::Tree nested;
  for (const auto& [name, value] : flat) {
    const auto slash = name.find('/');
    if (slash == std::string::npos) throw ConfigError(fmt::format("bad config key '{}'", name));
    nested.put(ini::Tree::path_type(name.substr(0, slash) + "|" + name.substr(slash + 1), '|'),
               value.data());
  }
  return nested;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.stage == Stage::dpc && !ckpt.parallel) {
    throw ConfigError("a dpc checkpoint needs a parallel prompt");
  }
  ini::Tree tree;
  ini::Tree head;
  head.put("format_version", kCheckpointFormatVersion);
  head.put("stage", ckpt.stage == Stage::backbone ? "backbone" : "dpc");
  head.put("omega_base", ini::format_double(ckpt.omega_base));
  head.put("omega_new", ini::format_double(ckpt.omega_new));
  tree.add_child("checkpoint", head);

  ini::Tree prompt;
  prompt.put("M", ckpt.tuned.text.rows());
  prompt.put("M_v", ckpt.tuned.visual ? ckpt.tuned.visual->rows() : 0);
  prompt.put("d_e", ckpt.tuned.text.cols());
  put_prompt(prompt, "tuned", ckpt.tuned);
  if (ckpt.stage == Stage::dpc) put_prompt(prompt, "parallel", *ckpt.parallel);
  tree.add_child("prompt", prompt);

  ini::Tree training;
  training.put("epochs", ckpt.training.epochs);
  training.put("lr", ini::format_double(ckpt.training.lr));
  training.put("seed", ckpt.training.seed);
  training.put("steps", ckpt.training.steps);
  tree.add_child("training", training);

  tree.add_child("config", flatten(ini::read_string(to_ini(ckpt.config))));
  ini::write_file(path, tree);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const ini::Tree tree = ini::read_file(path);
  ini::require_known_sections(tree, {"checkpoint", "prompt", "training", "config"});
  Checkpoint ckpt;

  const ini::Tree& head = ini::section(tree, "checkpoint");
  ini::require_known_keys(head, "checkpoint", {"format_version", "stage", "omega_base", "omega_new"});
  const std::uint64_t version =
      ini::parse_u64(ini::get_string(head, "format_version", "checkpoint"), "format_version");
  if (version != kCheckpointFormatVersion) {
    throw ConfigError(fmt::format("{}: unsupported checkpoint format_version {}", path.string(),
                                  version));
  }
  const std::string stage = ini::get_string(head, "stage", "checkpoint");
  if (stage == "backbone") {
    ckpt.stage = Stage::backbone;
  } else if (stage == "dpc") {
    ckpt.stage = Stage::dpc;
  } else {
    throw ConfigError(fmt::format("{}: unknown stage '{}'", path.string(), stage));
  }
  ini::read(head, "checkpoint", "omega_base", ckpt.omega_base);
  ini::read(head, "checkpoint", "omega_new", ckpt.omega_new);

  const ini::Tree& prompt = ini::section(tree, "prompt");
  std::size_t m = 0, m_v = 0, d_e = 0;
  ini::read(prompt, "prompt", "M", m);
  ini::read(prompt, "prompt", "M_v", m_v);
  ini::read(prompt, "prompt", "d_e", d_e);
  ckpt.tuned = get_prompt(prompt, "tuned", m_v > 0);
  ckpt.tuned.frozen = true;
  if (ckpt.stage == Stage::dpc) ckpt.parallel = get_prompt(prompt, "parallel", m_v > 0);
  const auto check = [&](const PromptState& p) {
    if (p.text.rows() != m || p.text.cols() != d_e ||
        (p.visual && (p.visual->rows() != m_v || p.visual->cols() != d_e))) {
      throw ConfigError(fmt::format("{}: prompt shape disagrees with M/M_v/d_e", path.string()));
    }
  };
  check(ckpt.tuned);
  if (ckpt.parallel) check(*ckpt.parallel);

  const ini::Tree& training = ini::section(tree, "training");
  ini::require_known_keys(training, "training", {"epochs", "lr", "seed", "steps"});
  ini::read(training, "training", "epochs", ckpt.training.epochs);
  ini::read(training, "training", "lr", ckpt.training.lr);
  ini::read(training, "training", "seed", ckpt.training.seed);
  ini::read(training, "training", "steps", ckpt.training.steps);

  ckpt.config = parse_config(ini::write_string(unflatten(ini::section(tree, "config"))));
  return ckpt;
}

}  // namespace dpc
