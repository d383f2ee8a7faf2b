// phonmap/tests/test_pipeline.cpp
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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <map>
#include <string>

#include "phonmap/checkpoint.hpp"
#include "phonmap/digest.hpp"
#include "phonmap/mapping.hpp"
#include "phonmap/pipeline.hpp"

#include "test_tmpdir.hpp"

using namespace phonmap;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Small enough to run a full pipeline in tens of milliseconds, large enough
// that every stage has something to chew on.
PipelineConfig micro_config(const fs::path& out) {
  json j{
      {"seed", 11},
      {"output_dir", out.string()},
      {"synthlang",
       {{"feature_dim", 3},
        {"n_src", 4},
        {"n_tgt", 4},
        {"overlap_fraction", 1.0},
        {"sigma", 0.1},
        {"source_minutes", 0.05},
        {"target_minutes", 0.04},
        {"utt_len_min", 2},
        {"utt_len_max", 4}}},
      {"asr", {{"hidden", 6}, {"n_blocks", 1}, {"conv_kernel", 3}, {"epochs", 2}, {"patience", 1}}},
      {"ptn", {{"hidden", 8}, {"dropout_rate", 0.0}, {"epochs", 2}, {"patience", 1}}},
      {"evaluation", {{"mc_trials", 500}, {"diagnostic_frames", 100}}},
  };
  return config_from_json(j);
}

void run_through_ptn(const PipelineConfig& config) {
  stage_gen_data(config);
  stage_train_asr(config);
  stage_train_ptn(config);
}

// Relative path -> file digest for every artifact outside run/ (run manifests
// carry wall time and are legitimately unstable).
std::map<std::string, std::string> tree_digest(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), root);
    if (rel.begin()->string() == "run") continue;
    out[rel.generic_string()] = sha256_file_hex(entry.path());
  }
  return out;
}

}  // namespace

TEST_CASE("config: empty object yields the documented defaults") {
  PipelineConfig c = config_from_json(json::object());
  CHECK(c.seed == 7);
  CHECK(c.output_dir == fs::path("out"));
  CHECK(c.synth.lang.feature_dim == 8);
  CHECK(c.synth.lang.n_src == 20);
  CHECK(c.synth.lang.overlap_fraction == doctest::Approx(0.7));
  CHECK(c.synth.utt_len_min == 5);
  CHECK(c.synth.utt_len_max == 15);
  CHECK(c.synth.source_minutes == doctest::Approx(30.0));
  CHECK(c.synth.target_minutes == doctest::Approx(15.0));
  CHECK(c.asr.epochs == 50);
  CHECK(c.ptn.epochs == 100);
  CHECK(c.mapping.xi == doctest::Approx(0.4));
  CHECK(c.embedding.dim == 16);
  CHECK(c.embedding.strategy == "learned");
  CHECK(c.evaluation.mc_trials == 100000);
}

TEST_CASE("config: unknown keys are rejected by name at both levels") {
  CHECK_THROWS_WITH_AS(config_from_json(json{{"synthlangg", json::object()}}),
                       doctest::Contains("synthlangg"), InvalidArgumentError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"asr", {{"hiden", 4}}}}),
                       doctest::Contains("asr.hiden"), InvalidArgumentError);
}

TEST_CASE("config: ill-typed and out-of-range values name the offending key") {
  CHECK_THROWS_WITH_AS(config_from_json(json{{"ptn", {{"hidden", "big"}}}}),
                       doctest::Contains("ptn.hidden"), InvalidArgumentError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"seed", -4}}), doctest::Contains("seed"),
                       InvalidArgumentError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"synthlang", {{"overlap_fraction", 1.5}}}}),
                       doctest::Contains("synthlang.overlap_fraction"), InvalidArgumentError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"mapping", {{"xi", 1.0}}}}),
                       doctest::Contains("mapping.xi"), InvalidArgumentError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"embedding", {{"strategy", "osmosis"}}}}),
                       doctest::Contains("embedding.strategy"), InvalidArgumentError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"embedding", {{"strategy", "unified"}}}}),
                       doctest::Contains("embedding.unified_table"), InvalidArgumentError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"asr", {{"conv_kernel", 4}}}}),
                       doctest::Contains("asr.conv_kernel"), InvalidArgumentError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"asr", {{"patience", 0}}}}),
                       doctest::Contains("asr.patience"), InvalidArgumentError);
}

TEST_CASE("config: canonical form round-trips and materializes every section") {
  TempDir tmp;
  PipelineConfig c = micro_config(tmp.path / "out");
  json j = config_to_json(c);
  for (const char* key :
       {"seed", "output_dir", "synthlang", "asr", "ptn", "mapping", "embedding", "evaluation"}) {
    CHECK(j.contains(key));
  }
  PipelineConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(config_digest(back) == config_digest(c));
}

TEST_CASE("config digest: output directory does not participate") {
  PipelineConfig a = config_from_json(json{{"output_dir", "runA"}});
  PipelineConfig b = config_from_json(json{{"output_dir", "runB"}});
  CHECK(config_digest(a) == config_digest(b));
  PipelineConfig c = config_from_json(json{{"seed", 8}});
  CHECK(config_digest(a) != config_digest(c));
}

TEST_CASE("section digest: sensitive to its own section and the seed only") {
  PipelineConfig base = config_from_json(json::object());
  PipelineConfig new_xi = config_from_json(json{{"mapping", {{"xi", 0.6}}}});
  CHECK(section_digest(base, "mapping") != section_digest(new_xi, "mapping"));
  CHECK(section_digest(base, "synthlang") == section_digest(new_xi, "synthlang"));
  CHECK(section_digest(base, "asr") == section_digest(new_xi, "asr"));
  PipelineConfig new_seed = config_from_json(json{{"seed", 8}});
  CHECK(section_digest(base, "synthlang") != section_digest(new_seed, "synthlang"));
  CHECK_THROWS_AS((void)section_digest(base, "nonexistent"), InvalidArgumentError);
}

TEST_CASE("lineage: records verify against the producing config and fail loudly otherwise") {
  PipelineConfig base = config_from_json(json::object());
  json lineage = lineage_json(base, {"synthlang", "asr"});
  CHECK(lineage.at("seed") == 7);
  CHECK(lineage.contains("synthlang"));
  CHECK(lineage.contains("asr"));
  CHECK_NOTHROW(check_lineage(lineage, base, "x.bin"));

  PipelineConfig new_seed = config_from_json(json{{"seed", 8}});
  CHECK_THROWS_WITH_AS(check_lineage(lineage, new_seed, "x.bin"), doctest::Contains("x.bin"),
                       IntegrityError);

  PipelineConfig new_asr = config_from_json(json{{"asr", {{"hidden", 32}}}});
  CHECK_THROWS_WITH_AS(check_lineage(lineage, new_asr, "x.bin"), doctest::Contains("asr"),
                       IntegrityError);
  // A section this artifact does not depend on may change freely.
  PipelineConfig new_xi = config_from_json(json{{"mapping", {{"xi", 0.6}}}});
  CHECK_NOTHROW(check_lineage(lineage, new_xi, "x.bin"));

  CHECK_THROWS_AS(check_lineage(json{{"bogus_section", "00"}}, base, "x.bin"), IntegrityError);
  CHECK_THROWS_AS(check_lineage(json::array(), base, "x.bin"), IntegrityError);
}

TEST_CASE("seed resolution: flag beats file beats environment beats default") {
  CHECK(resolve_seed(std::nullopt, std::nullopt, std::nullopt) == 7);
  CHECK(resolve_seed(std::nullopt, std::nullopt, std::string("123")) == 123);
  CHECK(resolve_seed(std::nullopt, 55, std::string("123")) == 55);
  CHECK(resolve_seed(99, 55, std::string("123")) == 99);
  CHECK_THROWS_AS((void)resolve_seed(std::nullopt, std::nullopt, std::string("12x")),
                  InvalidArgumentError);
  CHECK_THROWS_AS((void)resolve_seed(std::nullopt, std::nullopt, std::string("")),
                  InvalidArgumentError);
  CHECK_THROWS_AS((void)resolve_seed(std::nullopt, std::nullopt, std::string("-5")),
                  InvalidArgumentError);
}

TEST_CASE("corpus planning: budgets turn into utterance counts by expected frames") {
  SynthSection synth;  // utt 5..15 symbols, duration 2..6 frames -> 40 frames/utt
  CorpusPlan plan = plan_corpus(synth, 30.0);
  CHECK(plan.train_utts + plan.dev_utts == 4500);  // 180000 / 40
  CHECK(plan.dev_utts == 450);
  plan = plan_corpus(synth, 15.0);
  CHECK(plan.train_utts + plan.dev_utts == 2250);
  CHECK(plan.dev_utts == 225);
  // A vanishing budget still yields one train and one dev utterance.
  plan = plan_corpus(synth, 1e-4);
  CHECK(plan.train_utts == 1);
  CHECK(plan.dev_utts == 1);
}

TEST_CASE("artifact layout: stable relative structure under the output root") {
  ArtifactPaths p = artifact_paths("root");
  CHECK(p.src_train == fs::path("root") / "data" / "src_train");
  CHECK(p.truth == fs::path("root") / "data" / "truth.tsv");
  CHECK(p.asr_ckpt == fs::path("root") / "models" / "asr.ckpt");
  CHECK(p.ptn_ckpt == fs::path("root") / "models" / "ptn.ckpt");
  CHECK(p.mapping_tsv == fs::path("root") / "mapping" / "mapping.tsv");
  CHECK(p.w_tgt == fs::path("root") / "embeddings" / "w_tgt.ckpt");
  CHECK(p.score == fs::path("root") / "eval" / "score.json");
  CHECK(p.lock == fs::path("root") / ".lock");
}

TEST_CASE("lock: a second run against the same directory is refused and told why") {
  TempDir tmp;
  PipelineConfig config = micro_config(tmp.path / "out");
  ArtifactPaths paths = artifact_paths(config.output_dir);
  fs::create_directories(paths.root);
  {
    std::ofstream lock(paths.lock);
    lock << "424242\n";
  }
  CHECK_THROWS_WITH_AS(stage_gen_data(config), doctest::Contains("remove it if stale"),
                       InvalidStateError);
  fs::remove(paths.lock);
  CHECK_NOTHROW(stage_gen_data(config));
  CHECK_FALSE(fs::exists(paths.lock));  // released after a successful stage
}

TEST_CASE("stages: missing upstream artifacts raise dependency errors naming the producer") {
  TempDir tmp;
  PipelineConfig config = micro_config(tmp.path / "out");
  CHECK_THROWS_WITH_AS(stage_train_asr(config), doctest::Contains("gen-data"), DependencyError);
  CHECK_THROWS_WITH_AS(stage_discover_map(config), doctest::Contains("train-ptn"),
                       DependencyError);
  CHECK_THROWS_WITH_AS(stage_eval_map(config), doctest::Contains("discover-map"),
                       DependencyError);
  stage_gen_data(config);
  CHECK_THROWS_WITH_AS(stage_train_ptn(config), doctest::Contains("train-asr"), DependencyError);
}

TEST_CASE("stages: corpora generated under a different config are refused") {
  TempDir tmp;
  PipelineConfig config = micro_config(tmp.path / "out");
  stage_gen_data(config);
  json altered = config_to_json(config);
  altered["synthlang"]["sigma"] = 0.2;
  PipelineConfig other = config_from_json(altered);
  CHECK_THROWS_WITH_AS(stage_train_asr(other), doctest::Contains("src_train"), IntegrityError);
}

TEST_CASE("run-all: reruns into fresh directories are byte-identical outside run manifests") {
  TempDir tmp;
  PipelineConfig a = micro_config(tmp.path / "a");
  PipelineConfig b = micro_config(tmp.path / "b");
  std::vector<StageOutcome> outcomes = run_all(a);
  CHECK(outcomes.size() == 6);
  run_all(b);
  auto da = tree_digest(tmp.path / "a");
  auto db = tree_digest(tmp.path / "b");
  CHECK(da.size() > 10);
  CHECK(da == db);
  // Run manifests exist for every stage even though they are excluded above.
  for (const char* stage : {"gen-data", "train-asr", "train-ptn", "discover-map",
                            "transfer-embeddings", "eval-map"}) {
    CHECK(fs::exists(tmp.path / "a" / "run" / (std::string(stage) + ".json")));
  }
}

TEST_CASE("run-all: a different seed changes the data and the models") {
  TempDir tmp;
  PipelineConfig a = micro_config(tmp.path / "a");
  json j = config_to_json(micro_config(tmp.path / "b"));
  j["seed"] = 12;
  PipelineConfig b = config_from_json(j);
  run_all(a);
  run_all(b);
  auto da = tree_digest(tmp.path / "a");
  auto db = tree_digest(tmp.path / "b");
  CHECK(da != db);
  CHECK(da.at("models/asr.ckpt") != db.at("models/asr.ckpt"));
}

TEST_CASE("discover-map: a retrained acoustic model invalidates the transformation network") {
  TempDir tmp;
  PipelineConfig config = micro_config(tmp.path / "out");
  run_through_ptn(config);

  // Retrain the acoustic model under a changed asr section: new bytes on disk.
  json j = config_to_json(config);
  j["asr"]["learning_rate"] = 5e-4;
  PipelineConfig retrain = config_from_json(j);
  stage_train_asr(retrain);

  // Under the original config the stored hash no longer matches the file.
  CHECK_THROWS_WITH_AS(stage_discover_map(config), doctest::Contains("changed after"),
                       IntegrityError);
  // Under the new config the transformation network's lineage is stale instead.
  CHECK_THROWS_WITH_AS(stage_discover_map(retrain), doctest::Contains("ptn.ckpt"),
                       IntegrityError);
}

TEST_CASE("eval-map: scoring under a different xi than the mapping was discovered with fails") {
  TempDir tmp;
  PipelineConfig config = micro_config(tmp.path / "out");
  run_through_ptn(config);
  stage_discover_map(config);
  json j = config_to_json(config);
  j["mapping"]["xi"] = 0.25;
  PipelineConfig other = config_from_json(j);
  CHECK_THROWS_WITH_AS(stage_eval_map(other), doctest::Contains("mapping"), IntegrityError);
  CHECK_NOTHROW(stage_eval_map(config));
}

TEST_CASE("eval-map: score file carries the documented fields") {
  TempDir tmp;
  PipelineConfig config = micro_config(tmp.path / "out");
  run_through_ptn(config);
  stage_discover_map(config);
  stage_eval_map(config);
  std::ifstream in(artifact_paths(config.output_dir).score);
  json score = json::parse(in);
  CHECK(score.at("score").contains("precision"));
  CHECK(score.at("score").contains("recall"));
  CHECK(score.at("score").contains("verdicts"));
  CHECK(score.at("xi").get<double>() == doctest::Approx(0.4));
  CHECK(score.at("random_baseline_recall").get<double>() == doctest::Approx(0.25));  // overlap 4
  CHECK(score.at("random_baseline_recall_mc").is_number());
  CHECK(score.at("diagnostics").contains("source_posteriorgrams"));
  CHECK(score.at("diagnostics").contains("target_posteriorgrams"));
  CHECK(score.contains("config_sha256"));
  CHECK(score.contains("lineage"));
}

TEST_CASE("transfer: learned strategy links the mapping and reuses the source embeddings") {
  TempDir tmp;
  PipelineConfig config = micro_config(tmp.path / "out");
  run_through_ptn(config);
  stage_discover_map(config);
  ArtifactPaths paths = artifact_paths(config.output_dir);

  StageOutcome first = stage_transfer_embeddings(config);
  CHECK(first.outputs.count("embeddings/w_src.ckpt") == 1);
  std::string w_src_sha = sha256_file_hex(paths.w_src);

  // Rerun: the source matrix is reused, not redrawn.
  StageOutcome second = stage_transfer_embeddings(config);
  CHECK(second.outputs.count("embeddings/w_src.ckpt") == 0);
  CHECK(sha256_file_hex(paths.w_src) == w_src_sha);

  std::ifstream in(paths.transfer_report);
  json report = json::parse(in);
  CHECK(report.at("strategy") == "learned");
  CHECK(report.at("copied").get<int>() + report.at("random").get<int>() == 4);
  CHECK(report.at("targets").size() == 4);
  CHECK(report.contains("mapping_sha256"));

  // Every copied row is bit-identical to its named source row.
  Checkpoint src_ckpt = load_checkpoint(paths.w_src);
  Checkpoint tgt_ckpt = load_checkpoint(paths.w_tgt);
  EmbeddingMatrix w_src = embedding_from_checkpoint(src_ckpt);
  EmbeddingMatrix w_tgt = embedding_from_checkpoint(tgt_ckpt);
  SymbolInventory src_inv = load_inventory_file(paths.src_train / "inventory.txt");
  SymbolInventory tgt_inv = load_inventory_file(paths.tgt_train / "inventory.txt");
  int copied_seen = 0;
  for (const auto& row : report.at("targets")) {
    if (row.at("copied_from").is_null()) continue;
    ++copied_seen;
    Index s = src_inv.find(row.at("copied_from").get<std::string>()).value();
    Index t = tgt_inv.find(row.at("target").get<std::string>()).value();
    CHECK(w_tgt.rows.row(t).cwiseEqual(w_src.rows.row(s)).all());
  }
  CHECK(copied_seen == report.at("copied").get<int>());
}

TEST_CASE("transfer: separate strategy draws every row and needs no mapping artifact") {
  TempDir tmp;
  json j = config_to_json(micro_config(tmp.path / "out"));
  j["embedding"]["strategy"] = "separate";
  PipelineConfig config = config_from_json(j);
  stage_gen_data(config);  // inventories are the only requirement
  stage_transfer_embeddings(config);
  std::ifstream in(artifact_paths(config.output_dir).transfer_report);
  json report = json::parse(in);
  CHECK(report.at("strategy") == "separate");
  CHECK(report.at("copied") == 0);
  CHECK(report.at("random") == 4);
}

TEST_CASE("transfer: unified strategy consumes a handwritten table") {
  TempDir tmp;
  fs::path table_path = tmp.path / "table.tsv";
  json j = config_to_json(micro_config(tmp.path / "out"));
  j["embedding"]["strategy"] = "unified";
  j["embedding"]["unified_table"] = table_path.string();
  PipelineConfig config = config_from_json(j);
  stage_gen_data(config);
  {
    std::ofstream table(table_path);
    table << "s00\tt01\n";
    table << "s02\tt00\n";
  }
  stage_transfer_embeddings(config);
  std::ifstream in(artifact_paths(config.output_dir).transfer_report);
  json report = json::parse(in);
  CHECK(report.at("strategy") == "unified");
  CHECK(report.at("copied") == 2);
  CHECK(report.at("random") == 2);
  CHECK(report.contains("unified_table_sha256"));
}

TEST_CASE("transfer: learned strategy refuses a mapping from a different network") {
  TempDir tmp;
  PipelineConfig config = micro_config(tmp.path / "out");
  run_through_ptn(config);
  stage_discover_map(config);
  ArtifactPaths paths = artifact_paths(config.output_dir);

  // Retrain the transformation network under a changed ptn section; the
  // mapping file still names the old checkpoint.
  json j = config_to_json(config);
  j["ptn"]["learning_rate"] = 5e-4;
  PipelineConfig retrain = config_from_json(j);
  stage_train_ptn(retrain);
  CHECK_THROWS_WITH_AS(stage_transfer_embeddings(retrain),
                       doctest::Contains("mapping"), IntegrityError);
}
