// tools/phonmap_main.cpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Command-line front end for the mapping-transfer pipeline. Each subcommand
// is one pipeline stage; `run-all` chains every stage and ends with a score
// report against the random baseline. Diagnostics go to stderr, results to
// files (and short reports to stdout); the exit status is 0 iff no error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "phonmap/evaluation.hpp"
#include "phonmap/mapping.hpp"
#include "phonmap/pipeline.hpp"

#include "gradcheck_suite.hpp"

namespace {

using namespace phonmap;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Shared configuration flags. Seed precedence: --seed, then the config file,
// then PHONMAP_SEED, then the built-in default.

struct ConfigArgs {
  std::string config_path;
  std::string output_dir;
  std::uint64_t seed_value = 0;
  CLI::Option* seed_opt = nullptr;
  double xi_value = 0.0;
  CLI::Option* xi_opt = nullptr;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "JSON configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("-o,--output-dir", args.output_dir,
                  "artifact directory (overrides the config file)");
  args.seed_opt = cmd->add_option("-s,--seed", args.seed_value,
                                  "global seed (overrides config file and PHONMAP_SEED)");
}

void add_xi_flag(CLI::App* cmd, ConfigArgs& args) {
  args.xi_opt = cmd->add_option(
      "--xi", args.xi_value,
      "acceptance threshold for mapping entries (overrides the config file)");
}

PipelineConfig resolve_config(const ConfigArgs& args) {
  PipelineConfig config;
  std::optional<std::uint64_t> file_seed;
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in.good()) throw IoError("config: cannot open: " + args.config_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw InvalidArgumentError("config: " + args.config_path + " is not valid JSON: " +
                                 e.what());
    }
    config = config_from_json(j);
    if (j.contains("seed")) file_seed = config.seed;
  }

  std::optional<std::uint64_t> flag_seed;
  if (args.seed_opt != nullptr && args.seed_opt->count() > 0) flag_seed = args.seed_value;
  std::optional<std::string> env_text;
  if (const char* env = std::getenv("PHONMAP_SEED")) env_text = std::string(env);
  config.seed = resolve_seed(flag_seed, file_seed, env_text);

  if (!args.output_dir.empty()) config.output_dir = args.output_dir;
  if (args.xi_opt != nullptr && args.xi_opt->count() > 0) config.mapping.xi = args.xi_value;

  // Flag overrides bypass the parser, so revalidate the effective config.
  return config_from_json(config_to_json(config));
}

void report_stage(const StageOutcome& outcome) {
  std::fprintf(stderr, "[%s] finished in %.2f s\n", outcome.stage.c_str(),
               outcome.wall_seconds);
}

// ---------------------------------------------------------------------------
// Score report printed by run-all and eval-map.

void print_score_report(const json& score_file) {
  const json& s = score_file.at("score");
  std::printf("mapping score (xi %.6g)\n", score_file.at("xi").get<double>());
  std::printf("  n_predicted %lld\n", s.at("n_predicted").get<long long>());
  std::printf("  n_correct   %lld\n", s.at("n_correct").get<long long>());
  std::printf("  overlap     %lld\n", s.at("overlap_size").get<long long>());
  std::printf("  precision   %.6g%s\n", s.at("precision").get<double>(),
              s.at("vacuous_precision").get<bool>() ? " (vacuous: no predictions)" : "");
  std::printf("  recall      %.6g\n", s.at("recall").get<double>());
  if (score_file.at("random_baseline_recall").is_number()) {
    std::printf("  random baseline recall %.6g (monte carlo %.6g over %lld trials)\n",
                score_file.at("random_baseline_recall").get<double>(),
                score_file.at("random_baseline_recall_mc").get<double>(),
                score_file.at("mc_trials").get<long long>());
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("cannot open: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IntegrityError(path.string() + " is not valid JSON: " + e.what());
  }
  return j;
}

// ---------------------------------------------------------------------------
// eval-map hand mode: score an explicit mapping/reference pair outside any
// pipeline directory.

int eval_files(const std::string& mapping_path, const std::string& truth_path,
               const std::string& src_inv_path, const std::string& tgt_inv_path) {
  SymbolInventory src_inv = load_inventory_file(src_inv_path);
  SymbolInventory tgt_inv = load_inventory_file(tgt_inv_path);
  MappingTable table = load_mapping(mapping_path, src_inv, tgt_inv);
  LoadedGroundTruth truth = load_ground_truth(truth_path, src_inv, tgt_inv);
  MappingScore score = evaluate_mapping(table, truth.truth, src_inv, tgt_inv);
  std::printf("n_predicted %lld\n", static_cast<long long>(score.n_predicted));
  std::printf("n_correct %lld\n", static_cast<long long>(score.n_correct));
  std::printf("overlap_size %lld\n", static_cast<long long>(score.overlap_size));
  std::printf("precision %.6g%s\n", score.precision,
              score.vacuous_precision ? " (vacuous: no predictions)" : "");
  std::printf("recall %.6g\n", score.recall);
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck: analytic backward passes against central finite differences.
// The fixtures live in gradcheck_suite.hpp, shared with the acceptance
// harness so both always test the same graphs.

int run_gradcheck() {
  bool all_ok = true;
  for (const gradsuite::SuiteResult& r : gradsuite::run_suite()) {
    all_ok = all_ok && r.ok();
    std::printf("%-20s rel_err %.3e  limit %.0e  %s\n", r.name.c_str(), r.rel_err, r.limit,
                r.ok() ? "ok" : "FAIL");
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Cross-lingual symbol mapping pipeline: train a source acoustic model, fit a "
      "transformation network on a target language against the frozen source model, probe it "
      "to discover a symbol mapping, and transfer embeddings through that mapping."};
  app.require_subcommand(1);

  ConfigArgs gen_args, asr_args, ptn_args, map_args, emb_args, eval_args, all_args;
  int exit_code = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic language pair");
  add_config_flags(gen, gen_args);
  gen->callback([&] { report_stage(stage_gen_data(resolve_config(gen_args))); });

  CLI::App* asr = app.add_subcommand("train-asr", "Train the source acoustic model");
  add_config_flags(asr, asr_args);
  asr->callback([&] { report_stage(stage_train_asr(resolve_config(asr_args))); });

  CLI::App* ptn = app.add_subcommand(
      "train-ptn", "Train the transformation network against the frozen acoustic model");
  add_config_flags(ptn, ptn_args);
  ptn->callback([&] { report_stage(stage_train_ptn(resolve_config(ptn_args))); });

  CLI::App* map = app.add_subcommand(
      "discover-map", "Probe the transformation network and write the symbol mapping");
  add_config_flags(map, map_args);
  add_xi_flag(map, map_args);
  map->callback([&] { report_stage(stage_discover_map(resolve_config(map_args))); });

  CLI::App* emb = app.add_subcommand(
      "transfer-embeddings", "Initialize target embeddings by the configured strategy");
  add_config_flags(emb, emb_args);
  emb->callback([&] { report_stage(stage_transfer_embeddings(resolve_config(emb_args))); });

  CLI::App* eval = app.add_subcommand(
      "eval-map", "Score the discovered mapping against the ground truth");
  add_config_flags(eval, eval_args);
  add_xi_flag(eval, eval_args);
  std::string hand_mapping, hand_truth, hand_src_inv, hand_tgt_inv;
  CLI::Option* opt_mapping =
      eval->add_option("--mapping", hand_mapping, "score this mapping file instead")
          ->check(CLI::ExistingFile);
  CLI::Option* opt_truth =
      eval->add_option("--truth", hand_truth, "reference pair table for --mapping")
          ->check(CLI::ExistingFile);
  CLI::Option* opt_src_inv =
      eval->add_option("--source-inventory", hand_src_inv, "source inventory for --mapping")
          ->check(CLI::ExistingFile);
  CLI::Option* opt_tgt_inv =
      eval->add_option("--target-inventory", hand_tgt_inv, "target inventory for --mapping")
          ->check(CLI::ExistingFile);
  opt_mapping->needs(opt_truth)->needs(opt_src_inv)->needs(opt_tgt_inv);
  opt_truth->needs(opt_mapping);
  opt_src_inv->needs(opt_mapping);
  opt_tgt_inv->needs(opt_mapping);
  eval->callback([&] {
    if (!hand_mapping.empty()) {
      exit_code = eval_files(hand_mapping, hand_truth, hand_src_inv, hand_tgt_inv);
      return;
    }
    PipelineConfig config = resolve_config(eval_args);
    StageOutcome outcome = stage_eval_map(config);
    report_stage(outcome);
    print_score_report(read_json_file(artifact_paths(config.output_dir).score));
  });

  CLI::App* grad = app.add_subcommand(
      "gradcheck", "Verify analytic gradients against finite differences");
  grad->callback([&] { exit_code = run_gradcheck(); });

  CLI::App* all = app.add_subcommand("run-all", "Run every stage in order");
  add_config_flags(all, all_args);
  all->callback([&] {
    PipelineConfig config = resolve_config(all_args);
    for (const StageOutcome& outcome : run_all(config)) report_stage(outcome);
    print_score_report(read_json_file(artifact_paths(config.output_dir).score));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const phonmap::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return exit_code;
}
