// phonmap/tests/test_training.cpp
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
#include <string>
#include <vector>

#include "phonmap/digest.hpp"
#include "phonmap/synthlang.hpp"
#include "phonmap/training.hpp"

#include "test_tmpdir.hpp"

using namespace phonmap;
namespace fs = std::filesystem;

namespace {

LabelSequence seq(std::vector<std::int32_t> ids) { return LabelSequence{std::move(ids)}; }

// Small three-symbol language with well-separated emissions, cheap to train.
LanguagePair tiny_pair(std::uint64_t seed) {
  SynthConfig config;
  config.feature_dim = 3;
  config.n_src = 3;
  config.n_tgt = 3;
  config.overlap_fraction = 1.0;
  config.sigma = 0.1;
  config.duration_min = 2;
  config.duration_max = 4;
  config.seed = seed;
  return generate_language_pair(config);
}

Corpus tiny_corpus(const LanguageSpec& lang, Index n_utts, std::uint64_t seed,
                   const std::string& prefix) {
  Rng rng(seed);
  return generate_corpus(lang, n_utts, 1, 3, prefix, rng);
}

AsrConfig tiny_asr_config() {
  AsrConfig config;
  config.input_dim = 3;
  config.hidden = 8;
  config.n_blocks = 1;
  config.conv_kernel = 3;
  return config;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("edit distance: hand-checked values") {
  CHECK(edit_distance(seq({0, 1, 2}), seq({0, 1, 2})) == 0);
  CHECK(edit_distance(seq({}), seq({0, 1, 2})) == 3);
  CHECK(edit_distance(seq({0, 1, 2}), seq({})) == 3);
  CHECK(edit_distance(seq({0, 1, 2}), seq({0, 2})) == 1);        // deletion
  CHECK(edit_distance(seq({0, 2}), seq({0, 1, 2})) == 1);        // insertion
  CHECK(edit_distance(seq({0, 1, 2}), seq({0, 3, 2})) == 1);     // substitution
  // k i t t e n -> s i t t i n g, the classic distance-3 pair.
  CHECK(edit_distance(seq({10, 8, 19, 19, 4, 13}), seq({18, 8, 19, 19, 8, 13, 6})) == 3);
  CHECK(edit_distance(seq({1, 2, 3}), seq({2, 3, 4})) == 2);
}

TEST_CASE("acoustic training: runs, logs, and snapshots the best epoch") {
  LanguagePair pair = tiny_pair(50);
  Corpus train = tiny_corpus(pair.source, 24, 51, "tr");
  Corpus dev = tiny_corpus(pair.source, 6, 52, "dv");
  TrainOptions options;
  options.epochs = 3;
  options.patience = 10;
  options.seed = 5;
  options.extra_meta = {{"note", "smoke"}};
  int callbacks = 0;
  options.on_epoch = [&](const EpochLog& log) {
    ++callbacks;
    CHECK(log.epoch == callbacks);
    CHECK(log.dev_ser >= 0.0);
  };
  TrainResult result = train_asr(train, dev, tiny_asr_config(), options);
  CHECK(callbacks == 3);
  REQUIRE(result.log.size() == 3);
  CHECK(result.best_epoch >= 1);
  CHECK(result.best_epoch <= 3);
  double min_dev = result.log[0].dev_loss;
  for (const EpochLog& entry : result.log) min_dev = std::min(min_dev, entry.dev_loss);
  CHECK(result.best_dev_loss == min_dev);
  CHECK(result.best.kind == "asr");
  CHECK(result.best.meta.at("training").at("note") == "smoke");
  CHECK(result.best.meta.at("training").at("best_epoch") == result.best_epoch);
  CHECK(result.best.meta.at("training").at("epochs_run") == 3);
  CHECK(result.best.meta.at("training").at("seed") == 5);
}

TEST_CASE("acoustic training: bit-identical across runs with one seed") {
  TempDir tmp;
  LanguagePair pair = tiny_pair(53);
  Corpus train = tiny_corpus(pair.source, 12, 54, "tr");
  Corpus dev = tiny_corpus(pair.source, 4, 55, "dv");
  TrainOptions options;
  options.epochs = 2;
  options.seed = 9;
  TrainResult a = train_asr(train, dev, tiny_asr_config(), options);
  TrainResult b = train_asr(train, dev, tiny_asr_config(), options);
  save_checkpoint(a.best, tmp.path / "a.ckpt");
  save_checkpoint(b.best, tmp.path / "b.ckpt");
  CHECK(read_bytes(tmp.path / "a.ckpt") == read_bytes(tmp.path / "b.ckpt"));

  options.seed = 10;
  TrainResult c = train_asr(train, dev, tiny_asr_config(), options);
  save_checkpoint(c.best, tmp.path / "c.ckpt");
  CHECK(read_bytes(tmp.path / "a.ckpt") != read_bytes(tmp.path / "c.ckpt"));
}

TEST_CASE("acoustic training: infeasible utterances are skipped and counted") {
  LanguagePair pair = tiny_pair(56);
  Corpus train = tiny_corpus(pair.source, 10, 57, "tr");
  Corpus dev = tiny_corpus(pair.source, 4, 58, "dv");
  // One-frame utterance: too short for per-utterance batch statistics.
  train.utts.push_back({"short", seq({0}), Matrix::Zero(1, 3)});
  // Two frames cannot align three repeats of one symbol (needs five).
  train.utts.push_back({"repeats", seq({1, 1, 1}), Matrix::Zero(2, 3)});
  TrainOptions options;
  options.epochs = 1;
  TrainResult result = train_asr(train, dev, tiny_asr_config(), options);
  REQUIRE(result.log.size() == 1);
  CHECK(result.log[0].skipped_train == 2);
  CHECK(result.best.meta.at("training").at("skipped_train_utterances") == 2);
}

TEST_CASE("acoustic training: empty corpora are rejected") {
  LanguagePair pair = tiny_pair(59);
  Corpus train = tiny_corpus(pair.source, 4, 60, "tr");
  Corpus empty;
  empty.inventory = pair.source.inventory;
  CHECK_THROWS_AS(train_asr(empty, train, tiny_asr_config(), TrainOptions{}),
                  InvalidArgumentError);
  CHECK_THROWS_AS(train_asr(train, empty, tiny_asr_config(), TrainOptions{}),
                  InvalidArgumentError);
}

TEST_CASE("acoustic training: nothing trainable is an error") {
  LanguagePair pair = tiny_pair(61);
  Corpus dev = tiny_corpus(pair.source, 2, 62, "dv");
  Corpus train;
  train.inventory = pair.source.inventory;
  train.utts.push_back({"bad0", seq({0, 0, 0}), Matrix::Zero(2, 3)});
  train.utts.push_back({"bad1", seq({1, 1, 1}), Matrix::Zero(2, 3)});
  TrainOptions options;
  options.epochs = 1;
  CHECK_THROWS_AS(train_asr(train, dev, tiny_asr_config(), options), TrainingError);
}

TEST_CASE("acoustic training: feature width mismatches name the utterance") {
  LanguagePair pair = tiny_pair(63);
  Corpus train = tiny_corpus(pair.source, 4, 64, "tr");
  Corpus dev = tiny_corpus(pair.source, 2, 65, "dv");
  train.utts.push_back({"wide", seq({0}), Matrix::Zero(4, 7)});
  try {
    train_asr(train, dev, tiny_asr_config(), TrainOptions{});
    FAIL("expected InvalidArgumentError");
  } catch (const InvalidArgumentError& e) {
    CHECK(std::string(e.what()).find("wide") != std::string::npos);
  }
}

TEST_CASE("acoustic training: patience stops a stalled run early") {
  LanguagePair pair = tiny_pair(66);
  Corpus train = tiny_corpus(pair.source, 8, 67, "tr");
  Corpus dev = tiny_corpus(pair.source, 3, 68, "dv");
  TrainOptions options;
  options.epochs = 40;
  options.patience = 2;
  options.seed = 11;
  // A zero learning rate freezes the weights; only batch-norm running
  // averages keep moving, and for this setup they never beat epoch 1's dev
  // loss, so patience must end the run at epoch 3.
  options.adam.learning_rate = 0.0;
  TrainResult result = train_asr(train, dev, tiny_asr_config(), options);
  CHECK(result.log.size() == 3);
  CHECK(result.best_epoch == 1);
  CHECK(result.log[1].dev_loss >= result.best_dev_loss);
  CHECK(result.log[2].dev_loss >= result.best_dev_loss);
  CHECK(static_cast<int>(result.log.size()) ==
        result.best.meta.at("training").at("epochs_run").get<int>());
}

TEST_CASE("transformation training: trains against a frozen acoustic model") {
  TempDir tmp;
  LanguagePair pair = tiny_pair(70);
  Corpus src_train = tiny_corpus(pair.source, 16, 71, "st");
  Corpus src_dev = tiny_corpus(pair.source, 4, 72, "sd");
  TrainOptions asr_options;
  asr_options.epochs = 2;
  asr_options.seed = 12;
  TrainResult asr_result = train_asr(src_train, src_dev, tiny_asr_config(), asr_options);
  fs::path asr_path = tmp.path / "asr.ckpt";
  save_checkpoint(asr_result.best, asr_path);
  const std::vector<char> asr_bytes_before = read_bytes(asr_path);
  const std::string asr_digest = sha256_file_hex(asr_path);

  Corpus tgt_train = tiny_corpus(pair.target, 16, 73, "tt");
  Corpus tgt_dev = tiny_corpus(pair.target, 4, 74, "td");
  PtnConfig ptn_config;
  ptn_config.hidden = 8;
  ptn_config.dropout_rate = 0.2;
  TrainOptions ptn_options;
  ptn_options.epochs = 3;
  ptn_options.seed = 13;
  TrainResult ptn_result = train_ptn(asr_path, tgt_train, tgt_dev, ptn_config, ptn_options);

  CHECK(read_bytes(asr_path) == asr_bytes_before);  // stage two never writes back
  CHECK(ptn_result.best.kind == "ptn");
  REQUIRE(ptn_result.log.size() == 3);
  CHECK(ptn_result.best.meta.at("training").at("asr_checkpoint_sha256") == asr_digest);
  CHECK(ptn_result.best_dev_loss <= ptn_result.log[0].dev_loss);

  Ptn ptn = ptn_from_checkpoint(ptn_result.best);
  CHECK(ptn.source_inventory() == pair.source.inventory);
  CHECK(ptn.target_inventory() == pair.target.inventory);
}

TEST_CASE("transformation training: bit-identical across runs with one seed") {
  TempDir tmp;
  LanguagePair pair = tiny_pair(75);
  Corpus src_train = tiny_corpus(pair.source, 10, 76, "st");
  Corpus src_dev = tiny_corpus(pair.source, 3, 77, "sd");
  TrainOptions asr_options;
  asr_options.epochs = 1;
  TrainResult asr_result = train_asr(src_train, src_dev, tiny_asr_config(), asr_options);
  fs::path asr_path = tmp.path / "asr.ckpt";
  save_checkpoint(asr_result.best, asr_path);

  Corpus tgt_train = tiny_corpus(pair.target, 10, 78, "tt");
  Corpus tgt_dev = tiny_corpus(pair.target, 3, 79, "td");
  PtnConfig ptn_config;
  ptn_config.hidden = 8;
  TrainOptions options;
  options.epochs = 2;
  options.seed = 14;
  TrainResult a = train_ptn(asr_path, tgt_train, tgt_dev, ptn_config, options);
  TrainResult b = train_ptn(asr_path, tgt_train, tgt_dev, ptn_config, options);
  save_checkpoint(a.best, tmp.path / "a.ckpt");
  save_checkpoint(b.best, tmp.path / "b.ckpt");
  CHECK(read_bytes(tmp.path / "a.ckpt") == read_bytes(tmp.path / "b.ckpt"));
}

TEST_CASE("transformation training: missing or tampered acoustic checkpoints") {
  TempDir tmp;
  LanguagePair pair = tiny_pair(80);
  Corpus tgt_train = tiny_corpus(pair.target, 4, 81, "tt");
  Corpus tgt_dev = tiny_corpus(pair.target, 2, 82, "td");
  PtnConfig ptn_config;
  ptn_config.hidden = 8;
  TrainOptions options;
  options.epochs = 1;
  CHECK_THROWS_AS(train_ptn(tmp.path / "absent.ckpt", tgt_train, tgt_dev, ptn_config, options),
                  IntegrityError);

  Corpus src_train = tiny_corpus(pair.source, 6, 83, "st");
  Corpus src_dev = tiny_corpus(pair.source, 2, 84, "sd");
  TrainOptions asr_options;
  asr_options.epochs = 1;
  TrainResult asr_result = train_asr(src_train, src_dev, tiny_asr_config(), asr_options);
  fs::path asr_path = tmp.path / "asr.ckpt";
  save_checkpoint(asr_result.best, asr_path);
  std::vector<char> bytes = read_bytes(asr_path);
  bytes[bytes.size() - 5] ^= 0x01;
  std::ofstream out(asr_path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  CHECK_THROWS_AS(train_ptn(asr_path, tgt_train, tgt_dev, ptn_config, options), IntegrityError);
}

TEST_CASE("transformation training: corpus inventories must agree") {
  TempDir tmp;
  LanguagePair pair = tiny_pair(85);
  Corpus src_train = tiny_corpus(pair.source, 6, 86, "st");
  Corpus src_dev = tiny_corpus(pair.source, 2, 87, "sd");
  TrainOptions asr_options;
  asr_options.epochs = 1;
  TrainResult asr_result = train_asr(src_train, src_dev, tiny_asr_config(), asr_options);
  fs::path asr_path = tmp.path / "asr.ckpt";
  save_checkpoint(asr_result.best, asr_path);

  Corpus tgt_train = tiny_corpus(pair.target, 4, 88, "tt");
  Corpus mismatched_dev = tiny_corpus(pair.source, 2, 89, "td");  // source inventory
  PtnConfig ptn_config;
  ptn_config.hidden = 8;
  TrainOptions options;
  options.epochs = 1;
  CHECK_THROWS_AS(train_ptn(asr_path, tgt_train, mismatched_dev, ptn_config, options),
                  InvalidArgumentError);
}
