// SPDX-License-Identifier: Apache-2.0
// attndiv: attention-divergence features, sparse probe, and analyses.

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "attndiv/error.hpp"
#include "attndiv/report.hpp"
#include "commands.hpp"

namespace {

using attndiv::cli::RunConfig;

int report_error(std::string_view kind, int exit_code, const std::string& message) {
  const nlohmann::json j = {{"error", kind}, {"exit_code", exit_code}, {"message", message}};
  std::cerr << j.dump() << std::endl;
  return exit_code;
}

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("attndiv");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("ADIV_LOG"); env && *env) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off
    if (level == spdlog::level::off && std::string_view(env) != "off") {
      throw attndiv::ConfigError("ADIV_LOG must be one of trace, debug, info, warning, error, critical, off");
    }
    spdlog::set_level(level);
  }
}

/// Finds --config before CLI11 runs so that file values become defaults that
/// explicit flags then override.
std::string find_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string_view a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.starts_with("--config=")) return std::string(a.substr(9));
  }
  return {};
}

void add_dump_options(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--dump", cfg.dump, "ADV1 attention dump");
  sub->add_option("--scope", cfg.scope, "prompt, answer, or full");
  sub->add_option("--pooling", cfg.pooling, "mean or max");
  sub->add_option("--epsilon", cfg.epsilon, "log clamp");
}

void add_cv_options(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--features", cfg.features, "JSONL feature file");
  sub->add_option("--lambda", cfg.lambda, "L1 penalty");
  sub->add_option("--folds", cfg.folds, "stratified folds");
  sub->add_option("--seeds", cfg.seeds, "fold seeds (repeatable)")->take_all();
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  cfg.jobs = 0;

  CLI::App app{"Attention-divergence uncertainty toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  std::string config_path;
  app.add_option("--config", config_path, "JSON run config; flags override it");

  std::map<std::string, std::function<void(const RunConfig&)>> commands;
  auto add = [&](const char* name, const char* help, auto fn) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--jobs", cfg.jobs, "worker threads (0 = all cores)");
    sub->add_option("--config", config_path, "JSON run config; flags override it");
    commands[name] = fn;
    return sub;
  };

  auto* synth = add("synth", "write a synthetic dump", attndiv::cli::cmd_synth);
  synth->add_option("--n", cfg.synth.n_examples, "examples");
  synth->add_option("--layers", cfg.synth.layers, "layers");
  synth->add_option("--heads", cfg.synth.heads, "heads per layer");
  synth->add_option("--prompt-len", cfg.synth.prompt_len, "prompt tokens");
  synth->add_option("--gen-len", cfg.synth.gen_len, "generated tokens");
  synth->add_option("--alpha-correct", cfg.synth.alpha_correct, "Dirichlet concentration, label 1");
  synth->add_option("--alpha-incorrect", cfg.synth.alpha_incorrect, "Dirichlet concentration, label 0");
  synth->add_option("--base-rate", cfg.synth.base_rate, "P(label = 1)");
  synth->add_option("--seed", cfg.synth.seed, "generator seed");
  synth->add_flag("!--no-prefill", cfg.synth.with_prefill, "omit prefill rows");
  synth->add_flag("!--no-words", cfg.synth.with_words, "omit word annotation");

  auto* extract = add("extract-features", "pool per-head divergence into features", attndiv::cli::cmd_extract_features);
  add_dump_options(extract, cfg);

  auto* trn = add("train", "cross-validate the probe and fit a final model", attndiv::cli::cmd_train);
  add_cv_options(trn, cfg);
  trn->add_option("--mode", cfg.mode, "cv or holdout");
  trn->add_option("--valid-fraction", cfg.valid_fraction, "holdout validation share");
  trn->add_option("--layers", cfg.layers, "layers, for the head ranking");

  auto* ablate = add("ablate", "cross-validate with heads or layers removed", attndiv::cli::cmd_ablate);
  add_cv_options(ablate, cfg);
  ablate->add_option("--mode", cfg.mode, "heads-topk, layers-early, layers-middle, layers-late");
  ablate->add_option("--k", cfg.k, "heads to remove");
  ablate->add_option("--layers", cfg.layers, "layers in the feature grid");
  ablate->add_option("--model", cfg.model, "trained model for the ranking");

  auto* analyze = add("analyze", "interpretability analyses", attndiv::cli::cmd_analyze);
  add_dump_options(analyze, cfg);
  add_cv_options(analyze, cfg);
  analyze->add_option("--mode", cfg.mode, "delta-map, rank, ecdf, words, overlap, regions")->required();
  analyze->add_option("--layers", cfg.layers, "layers in the feature grid");
  analyze->add_option("--model", cfg.model, "trained model");
  analyze->add_option("--selections", cfg.selections, "head-selection JSON");
  analyze->add_option("--percentile", cfg.percentiles, "per-answer percentiles (repeatable)")->take_all();
  analyze->add_option("--tail-percentile", cfg.tail_percentile, "word tail percentile");
  analyze->add_option("--aggregation", cfg.aggregation, "subword pooling: mean or max");
  analyze->add_option("--thresholds", cfg.thresholds, "survival grid size");
  analyze->add_option("--resamples", cfg.resamples, "bootstrap resamples");
  analyze->add_option("--level", cfg.level, "confidence level");
  analyze->add_option("--seed", cfg.seed, "bootstrap seed");

  auto* sanity = add("sanity", "surface baselines and label permutation", attndiv::cli::cmd_sanity);
  add_dump_options(sanity, cfg);
  sanity->add_option("--lambda", cfg.lambda, "L1 penalty");
  sanity->add_option("--folds", cfg.folds, "stratified folds");
  sanity->add_option("--seeds", cfg.seeds, "fold seeds (repeatable)")->take_all();
  sanity->add_option("--permutations", cfg.permutations, "label permutations");
  sanity->add_option("--seed", cfg.seed, "permutation seed");

  try {
    setup_logging();
    if (const auto path = find_config(argc, argv); !path.empty()) cfg.merge(attndiv::read_json(path));
    app.parse(argc, argv);
    cfg.normalize();
    std::error_code ec;
    std::filesystem::create_directories(cfg.out, ec);
    if (ec) throw attndiv::IoError("cannot create output directory '" + cfg.out.string() + "': " + ec.message());
    for (auto* sub : app.get_subcommands()) commands.at(sub->get_name())(cfg);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error("config", attndiv::exit_code_for(attndiv::ErrorCode::config), e.what());
  } catch (const attndiv::Error& e) {
    return report_error(attndiv::error_code_name(e.code()), attndiv::exit_code_for(e.code()), e.what());
  } catch (const std::exception& e) {
    return report_error("internal", 1, e.what());
  }
  return 0;
}
