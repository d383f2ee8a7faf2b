// phonmap/pipeline.cpp
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

#include "phonmap/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>

#include "phonmap/digest.hpp"
#include "phonmap/evaluation.hpp"
#include "phonmap/mapping.hpp"
#include "phonmap/training.hpp"

namespace phonmap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Configuration parsing.

std::string qualify(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

[[noreturn]] void bad_key(const std::string& name, const std::string& why) {
  throw InvalidArgumentError("config: key '" + name + "' " + why);
}

void reject_unknown(const json& j, const std::string& section,
                    std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad_key(section.empty() ? "(top level)" : section, "must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) bad_key(qualify(section, item.key()), "is not a recognized setting");
  }
}

template <typename T>
void read_field(const json& j, const std::string& section, const char* key, T& target) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception&) {
    bad_key(qualify(section, key), "has the wrong type");
  }
}

void read_seed(const json& j, const std::string& section, const char* key,
               std::uint64_t& target) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (v.is_number_unsigned()) {
    target = v.get<std::uint64_t>();
    return;
  }
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    target = static_cast<std::uint64_t>(v.get<std::int64_t>());
    return;
  }
  bad_key(qualify(section, key), "must be a nonnegative integer");
}

void require(bool ok, const std::string& name, const std::string& why) {
  if (!ok) bad_key(name, why);
}

json section_or_empty(const json& j, const char* name) {
  if (!j.contains(name)) return json::object();
  return j.at(name);
}

// ---------------------------------------------------------------------------
// Stage plumbing.

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Exclusive ownership of an output directory for the duration of a stage.
class OutputLock {
 public:
  explicit OutputLock(const ArtifactPaths& paths) : path_(paths.lock) {
    fs::create_directories(paths.root);
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) {
        throw InvalidStateError("pipeline: " + path_.string() +
                                " is held by another run (remove it if stale)");
      }
      throw IoError("pipeline: cannot create lock file " + path_.string());
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd, pid.data(), pid.size()) < 0) {
      // The lock still exists; pid content is advisory only.
    }
    ::close(fd);
  }

  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

std::string rel(const ArtifactPaths& paths, const fs::path& p) {
  return fs::relative(p, paths.root).generic_string();
}

void require_artifact(const fs::path& p, const std::string& stage, const std::string& producer) {
  if (!fs::exists(p)) {
    throw DependencyError(stage + ": missing required artifact " + p.string() +
                          " (produce it with '" + producer + "')");
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out.good()) throw IoError("pipeline: cannot open for writing: " + p.string());
  out << text;
  if (!out.good()) throw IoError("pipeline: write failed: " + p.string());
}

void write_run_manifest(const PipelineConfig& config, const ArtifactPaths& paths,
                        const StageOutcome& outcome) {
  fs::create_directories(paths.run_dir);
  json manifest{{"stage", outcome.stage},
                {"tool_version", kToolVersion},
                {"seed", config.seed},
                {"config_sha256", config_digest(config)},
                {"wall_seconds", outcome.wall_seconds},
                {"inputs", json(outcome.inputs)},
                {"outputs", json(outcome.outputs)}};
  write_text(paths.run_dir / (outcome.stage + ".json"), manifest.dump(2) + "\n");
}

// Lineage recorded in a corpus manifest (or checkpoint metadata).
json recorded_lineage(const json& meta, const std::string& artifact) {
  if (!meta.contains("lineage")) {
    throw IntegrityError("pipeline: " + artifact + " carries no lineage record");
  }
  return meta.at("lineage");
}

void check_corpus(const ArtifactPaths& paths, const fs::path& dir, const PipelineConfig& config,
                  const std::string& stage, StageOutcome& outcome) {
  require_artifact(dir / "manifest.json", stage, "gen-data");
  json manifest = load_corpus_manifest(dir);
  check_lineage(recorded_lineage(manifest, rel(paths, dir)), config, rel(paths, dir));
  outcome.inputs[rel(paths, dir / "manifest.json")] = sha256_file_hex(dir / "manifest.json");
}

TrainOptions make_train_options(const PipelineConfig& config, int epochs, int patience,
                                double learning_rate, json extra_meta, const char* label) {
  TrainOptions options;
  options.epochs = epochs;
  options.patience = patience;
  options.adam.learning_rate = learning_rate;
  options.seed = config.seed;
  options.extra_meta = std::move(extra_meta);
  std::string tag(label);
  options.on_epoch = [tag](const EpochLog& log) {
    std::fprintf(stderr, "[%s] epoch %d train_loss=%.4f dev_loss=%.4f dev_ser=%.4f skipped=%lld\n",
                 tag.c_str(), log.epoch, log.train_loss, log.dev_loss, log.dev_ser,
                 static_cast<long long>(log.skipped_train));
  };
  return options;
}

// "# key: value" header lines of a tab-separated artifact.
std::map<std::string, std::string> read_tsv_headers(const fs::path& p) {
  std::ifstream in(p);
  if (!in.good()) throw IoError("pipeline: cannot open: " + p.string());
  std::map<std::string, std::string> headers;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] != '#') break;
    if (line.size() < 3 || line[1] != ' ') continue;
    std::size_t sep = line.find(": ", 2);
    if (sep == std::string::npos) continue;
    headers[line.substr(2, sep - 2)] = line.substr(sep + 2);
  }
  return headers;
}

json parse_lineage_header(const std::map<std::string, std::string>& headers,
                          const std::string& artifact) {
  auto it = headers.find("lineage");
  if (it == headers.end()) {
    throw IntegrityError("pipeline: " + artifact + " carries no lineage record");
  }
  try {
    return json::parse(it->second);
  } catch (const json::exception& e) {
    throw IntegrityError("pipeline: " + artifact + " has a malformed lineage record: " +
                         e.what());
  }
}

std::string header_or_throw(const std::map<std::string, std::string>& headers,
                            const std::string& key, const std::string& artifact) {
  auto it = headers.find(key);
  if (it == headers.end()) {
    throw IntegrityError("pipeline: " + artifact + " is missing the '" + key + "' header");
  }
  return it->second;
}

SymbolInventory corpus_inventory(const fs::path& dir) {
  SymbolInventory inv = load_inventory_file(dir / "inventory.txt");
  json manifest = load_corpus_manifest(dir);
  if (manifest.at("inventory_sha256").get<std::string>() != inv.digest()) {
    throw IntegrityError("pipeline: " + (dir / "inventory.txt").string() +
                         " does not match its manifest digest");
  }
  return inv;
}

// First utterances of a corpus up to a frame budget (diagnostics sampling).
Corpus head_frames(const Corpus& corpus, std::int64_t max_frames) {
  Corpus head;
  head.inventory = corpus.inventory;
  std::int64_t frames = 0;
  for (const Utterance& u : corpus.utts) {
    if (frames >= max_frames && !head.utts.empty()) break;
    head.utts.push_back(u);
    frames += u.features.rows();
  }
  return head;
}

// ---------------------------------------------------------------------------
// Stage implementations (called with the output lock held).

StageOutcome gen_data_impl(const PipelineConfig& config, const ArtifactPaths& paths) {
  StageOutcome outcome;
  outcome.stage = "gen-data";
  const std::string digest = config_digest(config);

  SynthConfig lang_config = config.synth.lang;
  lang_config.seed = config.seed;
  LanguagePair pair = generate_language_pair(lang_config);

  const CorpusPlan src_plan = plan_corpus(config.synth, config.synth.source_minutes);
  const CorpusPlan tgt_plan = plan_corpus(config.synth, config.synth.target_minutes);

  struct Slice {
    const fs::path* dir;
    const LanguageSpec* lang;
    Index n_utts;
    const char* role;
  };
  const Slice slices[] = {
      {&paths.src_train, &pair.source, src_plan.train_utts, "src_train"},
      {&paths.src_dev, &pair.source, src_plan.dev_utts, "src_dev"},
      {&paths.tgt_train, &pair.target, tgt_plan.train_utts, "tgt_train"},
      {&paths.tgt_dev, &pair.target, tgt_plan.dev_utts, "tgt_dev"},
  };
  for (const Slice& s : slices) {
    Rng rng(derive_seed(config.seed, std::string("corpus-") + s.role));
    Corpus corpus = generate_corpus(*s.lang, s.n_utts, config.synth.utt_len_min,
                                    config.synth.utt_len_max, "u", rng);
    json extra{{"config_sha256", digest},
               {"lineage", lineage_json(config, {"synthlang"})},
               {"role", s.role},
               {"tool_version", kToolVersion}};
    save_corpus(corpus, *s.dir, extra);
    outcome.outputs[rel(paths, *s.dir / "manifest.json")] =
        sha256_file_hex(*s.dir / "manifest.json");
    std::fprintf(stderr, "[gen-data] %s: %lld utterances, %lld frames\n", s.role,
                 static_cast<long long>(corpus.utts.size()),
                 static_cast<long long>(corpus.total_frames()));
  }

  save_ground_truth(pair.truth, pair.source, pair.target, paths.truth,
                    {{"config_sha256", digest},
                     {"lineage", lineage_json(config, {"synthlang"}).dump()},
                     {"tool_version", kToolVersion}});
  outcome.outputs[rel(paths, paths.truth)] = sha256_file_hex(paths.truth);
  std::fprintf(stderr, "[gen-data] ground truth: %lld shared symbols\n",
               static_cast<long long>(pair.truth.pairs.size()));
  return outcome;
}

StageOutcome train_asr_impl(const PipelineConfig& config, const ArtifactPaths& paths) {
  StageOutcome outcome;
  outcome.stage = "train-asr";
  check_corpus(paths, paths.src_train, config, outcome.stage, outcome);
  check_corpus(paths, paths.src_dev, config, outcome.stage, outcome);

  Corpus train = load_corpus(paths.src_train);
  Corpus dev = load_corpus(paths.src_dev);

  AsrConfig model_config = config.asr.model;
  model_config.input_dim = config.synth.lang.feature_dim;

  json extra{{"config_sha256", config_digest(config)},
             {"lineage", lineage_json(config, {"synthlang", "asr"})},
             {"inputs", json(outcome.inputs)},
             {"tool_version", kToolVersion}};
  TrainOptions options = make_train_options(config, config.asr.epochs, config.asr.patience,
                                            config.asr.learning_rate, extra, "train-asr");
  TrainResult result = train_asr(train, dev, model_config, options);

  fs::create_directories(paths.asr_ckpt.parent_path());
  save_checkpoint(result.best, paths.asr_ckpt);
  outcome.outputs[rel(paths, paths.asr_ckpt)] = sha256_file_hex(paths.asr_ckpt);
  std::fprintf(stderr, "[train-asr] best epoch %d dev_loss=%.4f\n", result.best_epoch,
               result.best_dev_loss);
  return outcome;
}

StageOutcome train_ptn_impl(const PipelineConfig& config, const ArtifactPaths& paths) {
  StageOutcome outcome;
  outcome.stage = "train-ptn";
  require_artifact(paths.asr_ckpt, outcome.stage, "train-asr");
  check_corpus(paths, paths.tgt_train, config, outcome.stage, outcome);
  check_corpus(paths, paths.tgt_dev, config, outcome.stage, outcome);

  Checkpoint asr_ckpt = load_checkpoint(paths.asr_ckpt);
  check_lineage(recorded_lineage(asr_ckpt.meta.at("training"), rel(paths, paths.asr_ckpt)),
                config, rel(paths, paths.asr_ckpt));
  outcome.inputs[rel(paths, paths.asr_ckpt)] = sha256_file_hex(paths.asr_ckpt);

  Corpus train = load_corpus(paths.tgt_train);
  Corpus dev = load_corpus(paths.tgt_dev);

  json extra{{"config_sha256", config_digest(config)},
             {"lineage", lineage_json(config, {"synthlang", "asr", "ptn"})},
             {"inputs", json(outcome.inputs)},
             {"tool_version", kToolVersion}};
  TrainOptions options = make_train_options(config, config.ptn.epochs, config.ptn.patience,
                                            config.ptn.learning_rate, extra, "train-ptn");
  TrainResult result = train_ptn(paths.asr_ckpt, train, dev, config.ptn.model, options);

  fs::create_directories(paths.ptn_ckpt.parent_path());
  save_checkpoint(result.best, paths.ptn_ckpt);
  outcome.outputs[rel(paths, paths.ptn_ckpt)] = sha256_file_hex(paths.ptn_ckpt);
  std::fprintf(stderr, "[train-ptn] best epoch %d dev_loss=%.4f\n", result.best_epoch,
               result.best_dev_loss);
  return outcome;
}

StageOutcome discover_map_impl(const PipelineConfig& config, const ArtifactPaths& paths) {
  StageOutcome outcome;
  outcome.stage = "discover-map";
  require_artifact(paths.ptn_ckpt, outcome.stage, "train-ptn");
  require_artifact(paths.asr_ckpt, outcome.stage, "train-asr");

  Checkpoint ckpt = load_checkpoint(paths.ptn_ckpt);
  const std::string ptn_rel = rel(paths, paths.ptn_ckpt);
  check_lineage(recorded_lineage(ckpt.meta.at("training"), ptn_rel), config, ptn_rel);

  // Frozen-acoustic-model audit: the checkpoint trained against must be the
  // one still on disk, byte for byte.
  const std::string asr_now = sha256_file_hex(paths.asr_ckpt);
  const std::string asr_then =
      ckpt.meta.at("training").at("asr_checkpoint_sha256").get<std::string>();
  if (asr_now != asr_then) {
    throw IntegrityError("discover-map: " + paths.asr_ckpt.string() +
                         " changed after stage-two training (expected " + asr_then + ", found " +
                         asr_now + ")");
  }
  outcome.inputs[ptn_rel] = sha256_file_hex(paths.ptn_ckpt);
  outcome.inputs[rel(paths, paths.asr_ckpt)] = asr_now;

  Ptn ptn = ptn_from_checkpoint(ckpt);
  MappingTable table = discover_mapping(ptn, ptn.source_inventory(), ptn.target_inventory(),
                                        config.mapping.xi, config.mapping.smoothing);

  fs::create_directories(paths.mapping_tsv.parent_path());
  save_mapping(table, ptn.source_inventory(), ptn.target_inventory(), paths.mapping_tsv,
               {{"config_sha256", config_digest(config)},
                {"lineage",
                 lineage_json(config, {"synthlang", "asr", "ptn", "mapping"}).dump()},
                {"ptn_checkpoint_sha256", outcome.inputs[ptn_rel]},
                {"tool_version", kToolVersion}});
  outcome.outputs[rel(paths, paths.mapping_tsv)] = sha256_file_hex(paths.mapping_tsv);
  std::fprintf(stderr, "[discover-map] xi=%.3f mapped %lld of %lld source symbols\n",
               config.mapping.xi, static_cast<long long>(table.mapped_count()),
               static_cast<long long>(table.entries.size()));
  return outcome;
}

StageOutcome transfer_impl(const PipelineConfig& config, const ArtifactPaths& paths) {
  StageOutcome outcome;
  outcome.stage = "transfer-embeddings";
  require_artifact(paths.src_train / "inventory.txt", outcome.stage, "gen-data");
  require_artifact(paths.tgt_train / "inventory.txt", outcome.stage, "gen-data");
  SymbolInventory src_inv = corpus_inventory(paths.src_train);
  SymbolInventory tgt_inv = corpus_inventory(paths.tgt_train);
  const std::string digest = config_digest(config);
  fs::create_directories(paths.w_src.parent_path());

  // Source embeddings: reuse the existing artifact or draw a fresh one.
  EmbeddingMatrix w_src_emb;
  if (fs::exists(paths.w_src)) {
    Checkpoint ckpt = load_checkpoint(paths.w_src);
    check_lineage(recorded_lineage(ckpt.meta, rel(paths, paths.w_src)), config,
                  rel(paths, paths.w_src));
    w_src_emb = embedding_from_checkpoint(ckpt);
    if (w_src_emb.inventory_digest != src_inv.digest()) {
      throw IntegrityError("transfer-embeddings: " + paths.w_src.string() +
                           " belongs to a different source inventory");
    }
  } else {
    Rng rng(derive_seed(config.seed, "embed-src"));
    w_src_emb = separate_init(src_inv, config.embedding.dim, rng);
    Checkpoint ckpt = embedding_to_checkpoint(
        w_src_emb, src_inv,
        {{"config_sha256", digest},
         {"lineage", lineage_json(config, {"synthlang", "embedding"})},
         {"strategy", "source"},
         {"tool_version", kToolVersion}});
    save_checkpoint(ckpt, paths.w_src);
    outcome.outputs[rel(paths, paths.w_src)] = sha256_file_hex(paths.w_src);
  }
  const std::string w_src_sha = sha256_file_hex(paths.w_src);
  outcome.inputs[rel(paths, paths.w_src)] = w_src_sha;

  const std::string& strategy = config.embedding.strategy;
  TransferResult result;
  std::vector<std::string> lineage_sections{"synthlang", "embedding"};
  json extra_inputs{{"w_src_sha256", w_src_sha}};

  if (strategy == "separate") {
    Rng rng(derive_seed(config.seed, "embed-tgt"));
    result.embeddings = separate_init(tgt_inv, config.embedding.dim, rng);
    result.report.targets.resize(static_cast<std::size_t>(tgt_inv.size()));
    result.report.random = tgt_inv.size();
  } else if (strategy == "learned") {
    require_artifact(paths.mapping_tsv, outcome.stage, "discover-map");
    require_artifact(paths.ptn_ckpt, outcome.stage, "train-ptn");
    const std::string map_rel = rel(paths, paths.mapping_tsv);
    auto headers = read_tsv_headers(paths.mapping_tsv);
    check_lineage(parse_lineage_header(headers, map_rel), config, map_rel);
    const std::string ptn_then = header_or_throw(headers, "ptn_checkpoint_sha256", map_rel);
    const std::string ptn_now = sha256_file_hex(paths.ptn_ckpt);
    if (ptn_then != ptn_now) {
      throw IntegrityError("transfer-embeddings: " + paths.mapping_tsv.string() +
                           " was discovered from a different transformation network");
    }
    MappingTable table = load_mapping(paths.mapping_tsv, src_inv, tgt_inv);
    Rng rng(derive_seed(config.seed, "embed-tgt"));
    result = transfer_embeddings(w_src_emb, table, src_inv, tgt_inv, rng);
    const std::string map_sha = sha256_file_hex(paths.mapping_tsv);
    outcome.inputs[map_rel] = map_sha;
    extra_inputs["mapping_sha256"] = map_sha;
    lineage_sections = {"synthlang", "asr", "ptn", "mapping", "embedding"};
  } else {  // "unified" (the config validator admits no other value)
    const fs::path table_path = config.embedding.unified_table;
    require_artifact(table_path, outcome.stage, "a hand-written unified symbol table");
    UnifiedTable table = load_unified_table(table_path, src_inv, tgt_inv);
    Rng rng(derive_seed(config.seed, "embed-tgt"));
    result = unified_transfer(w_src_emb, table, src_inv, tgt_inv, rng);
    const std::string table_sha = sha256_file_hex(table_path);
    outcome.inputs[table_path.generic_string()] = table_sha;
    extra_inputs["unified_table_sha256"] = table_sha;
  }

  json lineage = lineage_json(config, lineage_sections);
  json meta{{"config_sha256", digest},
            {"lineage", lineage},
            {"strategy", strategy},
            {"tool_version", kToolVersion}};
  for (const auto& item : extra_inputs.items()) meta[item.key()] = item.value();
  Checkpoint w_tgt_ckpt = embedding_to_checkpoint(result.embeddings, tgt_inv, meta);
  save_checkpoint(w_tgt_ckpt, paths.w_tgt);
  outcome.outputs[rel(paths, paths.w_tgt)] = sha256_file_hex(paths.w_tgt);

  json targets = json::array();
  for (Index j = 0; j < tgt_inv.size(); ++j) {
    const auto& entry = result.report.targets[static_cast<std::size_t>(j)];
    json row{{"target", tgt_inv.symbol(j)}};
    if (entry.copied_from.has_value()) {
      row["copied_from"] = src_inv.symbol(*entry.copied_from);
      row["confidence"] = entry.confidence;
    } else {
      row["copied_from"] = nullptr;
      row["confidence"] = nullptr;
    }
    targets.push_back(row);
  }
  json report{{"strategy", strategy},
              {"copied", result.report.copied},
              {"random", result.report.random},
              {"targets", targets},
              {"config_sha256", digest},
              {"lineage", lineage},
              {"tool_version", kToolVersion}};
  for (const auto& item : extra_inputs.items()) report[item.key()] = item.value();
  write_text(paths.transfer_report, report.dump(2) + "\n");
  outcome.outputs[rel(paths, paths.transfer_report)] = sha256_file_hex(paths.transfer_report);
  std::fprintf(stderr, "[transfer-embeddings] strategy=%s copied=%lld random=%lld\n",
               strategy.c_str(), static_cast<long long>(result.report.copied),
               static_cast<long long>(result.report.random));
  return outcome;
}

StageOutcome eval_map_impl(const PipelineConfig& config, const ArtifactPaths& paths) {
  StageOutcome outcome;
  outcome.stage = "eval-map";
  require_artifact(paths.mapping_tsv, outcome.stage, "discover-map");
  require_artifact(paths.truth, outcome.stage, "gen-data");
  require_artifact(paths.src_train / "inventory.txt", outcome.stage, "gen-data");
  require_artifact(paths.tgt_train / "inventory.txt", outcome.stage, "gen-data");

  SymbolInventory src_inv = corpus_inventory(paths.src_train);
  SymbolInventory tgt_inv = corpus_inventory(paths.tgt_train);

  const std::string map_rel = rel(paths, paths.mapping_tsv);
  auto map_headers = read_tsv_headers(paths.mapping_tsv);
  check_lineage(parse_lineage_header(map_headers, map_rel), config, map_rel);
  require_artifact(paths.ptn_ckpt, outcome.stage, "train-ptn");
  const std::string ptn_then = header_or_throw(map_headers, "ptn_checkpoint_sha256", map_rel);
  if (ptn_then != sha256_file_hex(paths.ptn_ckpt)) {
    throw IntegrityError("eval-map: " + paths.mapping_tsv.string() +
                         " was discovered from a different transformation network");
  }

  const std::string truth_rel = rel(paths, paths.truth);
  check_lineage(parse_lineage_header(read_tsv_headers(paths.truth), truth_rel), config,
                truth_rel);

  MappingTable table = load_mapping(paths.mapping_tsv, src_inv, tgt_inv);
  LoadedGroundTruth truth = load_ground_truth(paths.truth, src_inv, tgt_inv);
  outcome.inputs[map_rel] = sha256_file_hex(paths.mapping_tsv);
  outcome.inputs[truth_rel] = sha256_file_hex(paths.truth);

  MappingScore score = evaluate_mapping(table, truth.truth, src_inv, tgt_inv);

  json result{{"score", score_to_json(score, src_inv, tgt_inv)},
              {"xi", table.xi},
              {"mc_trials", config.evaluation.mc_trials},
              {"config_sha256", config_digest(config)},
              {"lineage",
               lineage_json(config, {"synthlang", "asr", "ptn", "mapping", "evaluation"})},
              {"inputs",
               {{"mapping_sha256", outcome.inputs[map_rel]},
                {"truth_sha256", outcome.inputs[truth_rel]}}},
              {"tool_version", kToolVersion}};

  const Index overlap = static_cast<Index>(truth.truth.pairs.size());
  if (overlap >= 1) {
    result["random_baseline_recall"] = random_baseline_recall(overlap);
    result["random_baseline_recall_mc"] = random_baseline_recall_mc(
        overlap, config.evaluation.mc_trials, derive_seed(config.seed, "baseline-mc"));
  } else {
    result["random_baseline_recall"] = nullptr;
    result["random_baseline_recall_mc"] = nullptr;
  }

  if (config.evaluation.diagnostic_frames > 0) {
    require_artifact(paths.asr_ckpt, outcome.stage, "train-asr");
    CnnAsr asr = asr_from_checkpoint(load_checkpoint(paths.asr_ckpt));
    Ptn ptn = ptn_from_checkpoint(load_checkpoint(paths.ptn_ckpt));
    require_artifact(paths.src_dev / "manifest.json", outcome.stage, "gen-data");
    require_artifact(paths.tgt_dev / "manifest.json", outcome.stage, "gen-data");
    Corpus src_dev = head_frames(load_corpus(paths.src_dev), config.evaluation.diagnostic_frames);
    Corpus tgt_dev = head_frames(load_corpus(paths.tgt_dev), config.evaluation.diagnostic_frames);
    result["diagnostics"] = {
        {"source_posteriorgrams", report_to_json(stack_report(asr, nullptr, src_dev))},
        {"target_posteriorgrams", report_to_json(stack_report(asr, &ptn, tgt_dev))}};
  } else {
    result["diagnostics"] = nullptr;
  }

  fs::create_directories(paths.score.parent_path());
  write_text(paths.score, result.dump(2) + "\n");
  outcome.outputs[rel(paths, paths.score)] = sha256_file_hex(paths.score);
  if (overlap >= 1) {
    std::fprintf(stderr,
                 "[eval-map] precision=%.4f recall=%.4f (random baseline recall %.4f)\n",
                 score.precision, score.recall, random_baseline_recall(overlap));
  } else {
    std::fprintf(stderr, "[eval-map] precision=%.4f recall=%.4f (empty overlap)\n",
                 score.precision, score.recall);
  }
  return outcome;
}

using StageImpl = StageOutcome (*)(const PipelineConfig&, const ArtifactPaths&);

StageOutcome run_locked(const PipelineConfig& config, StageImpl impl) {
  ArtifactPaths paths = artifact_paths(config.output_dir);
  OutputLock lock(paths);
  StageTimer timer;
  StageOutcome outcome = impl(config, paths);
  outcome.wall_seconds = timer.seconds();
  write_run_manifest(config, paths, outcome);
  return outcome;
}

}  // namespace

// ---------------------------------------------------------------------------
// Validated configuration.

PipelineConfig config_from_json(const json& j) {
  PipelineConfig config;
  reject_unknown(j, "", {"seed", "output_dir", "synthlang", "asr", "ptn", "mapping",
                         "embedding", "evaluation"});
  read_seed(j, "", "seed", config.seed);
  {
    std::string dir = config.output_dir.string();
    read_field(j, "", "output_dir", dir);
    require(!dir.empty(), "output_dir", "must be a non-empty path");
    config.output_dir = dir;
  }

  {
    json s = section_or_empty(j, "synthlang");
    reject_unknown(s, "synthlang",
                   {"feature_dim", "n_src", "n_tgt", "overlap_fraction", "sigma",
                    "duration_min", "duration_max", "mean_box", "utt_len_min", "utt_len_max",
                    "source_minutes", "target_minutes", "dev_fraction"});
    SynthSection& sec = config.synth;
    read_field(s, "synthlang", "feature_dim", sec.lang.feature_dim);
    read_field(s, "synthlang", "n_src", sec.lang.n_src);
    read_field(s, "synthlang", "n_tgt", sec.lang.n_tgt);
    read_field(s, "synthlang", "overlap_fraction", sec.lang.overlap_fraction);
    read_field(s, "synthlang", "sigma", sec.lang.sigma);
    read_field(s, "synthlang", "duration_min", sec.lang.duration_min);
    read_field(s, "synthlang", "duration_max", sec.lang.duration_max);
    read_field(s, "synthlang", "mean_box", sec.lang.mean_box);
    read_field(s, "synthlang", "utt_len_min", sec.utt_len_min);
    read_field(s, "synthlang", "utt_len_max", sec.utt_len_max);
    read_field(s, "synthlang", "source_minutes", sec.source_minutes);
    read_field(s, "synthlang", "target_minutes", sec.target_minutes);
    read_field(s, "synthlang", "dev_fraction", sec.dev_fraction);
    require(sec.lang.feature_dim >= 1, "synthlang.feature_dim", "must be >= 1");
    require(sec.lang.n_src >= 1, "synthlang.n_src", "must be >= 1");
    require(sec.lang.n_tgt >= 1, "synthlang.n_tgt", "must be >= 1");
    require(sec.lang.overlap_fraction >= 0.0 && sec.lang.overlap_fraction <= 1.0,
            "synthlang.overlap_fraction", "must lie in [0, 1]");
    require(sec.lang.sigma >= 0.0, "synthlang.sigma", "must be >= 0");
    require(sec.lang.duration_min >= 1, "synthlang.duration_min", "must be >= 1");
    require(sec.lang.duration_max >= sec.lang.duration_min, "synthlang.duration_max",
            "must be >= duration_min");
    require(sec.lang.mean_box > 0.0, "synthlang.mean_box", "must be > 0");
    require(sec.utt_len_min >= 1, "synthlang.utt_len_min", "must be >= 1");
    require(sec.utt_len_max >= sec.utt_len_min, "synthlang.utt_len_max",
            "must be >= utt_len_min");
    require(sec.source_minutes > 0.0, "synthlang.source_minutes", "must be > 0");
    require(sec.target_minutes > 0.0, "synthlang.target_minutes", "must be > 0");
    require(sec.dev_fraction > 0.0 && sec.dev_fraction < 1.0, "synthlang.dev_fraction",
            "must lie in (0, 1)");
  }

  {
    json s = section_or_empty(j, "asr");
    reject_unknown(s, "asr",
                   {"hidden", "n_blocks", "conv_kernel", "bn_eps", "bn_momentum", "epochs",
                    "patience", "learning_rate"});
    AsrSection& sec = config.asr;
    read_field(s, "asr", "hidden", sec.model.hidden);
    read_field(s, "asr", "n_blocks", sec.model.n_blocks);
    read_field(s, "asr", "conv_kernel", sec.model.conv_kernel);
    read_field(s, "asr", "bn_eps", sec.model.bn_eps);
    read_field(s, "asr", "bn_momentum", sec.model.bn_momentum);
    read_field(s, "asr", "epochs", sec.epochs);
    read_field(s, "asr", "patience", sec.patience);
    read_field(s, "asr", "learning_rate", sec.learning_rate);
    require(sec.model.hidden >= 1, "asr.hidden", "must be >= 1");
    require(sec.model.n_blocks >= 1, "asr.n_blocks", "must be >= 1");
    require(sec.model.conv_kernel >= 1 && sec.model.conv_kernel % 2 == 1, "asr.conv_kernel",
            "must be odd and >= 1");
    require(sec.model.bn_eps > 0.0, "asr.bn_eps", "must be > 0");
    require(sec.model.bn_momentum > 0.0 && sec.model.bn_momentum <= 1.0, "asr.bn_momentum",
            "must lie in (0, 1]");
    require(sec.epochs >= 1, "asr.epochs", "must be >= 1");
    require(sec.patience >= 1, "asr.patience", "must be >= 1");
    require(sec.learning_rate > 0.0, "asr.learning_rate", "must be > 0");
  }

  {
    json s = section_or_empty(j, "ptn");
    reject_unknown(s, "ptn", {"hidden", "dropout_rate", "epochs", "patience", "learning_rate"});
    PtnSection& sec = config.ptn;
    read_field(s, "ptn", "hidden", sec.model.hidden);
    read_field(s, "ptn", "dropout_rate", sec.model.dropout_rate);
    read_field(s, "ptn", "epochs", sec.epochs);
    read_field(s, "ptn", "patience", sec.patience);
    read_field(s, "ptn", "learning_rate", sec.learning_rate);
    require(sec.model.hidden >= 1, "ptn.hidden", "must be >= 1");
    require(sec.model.dropout_rate >= 0.0 && sec.model.dropout_rate < 1.0, "ptn.dropout_rate",
            "must lie in [0, 1)");
    require(sec.epochs >= 1, "ptn.epochs", "must be >= 1");
    require(sec.patience >= 1, "ptn.patience", "must be >= 1");
    require(sec.learning_rate > 0.0, "ptn.learning_rate", "must be > 0");
  }

  {
    json s = section_or_empty(j, "mapping");
    reject_unknown(s, "mapping", {"xi", "smoothing"});
    read_field(s, "mapping", "xi", config.mapping.xi);
    read_field(s, "mapping", "smoothing", config.mapping.smoothing);
    require(config.mapping.xi >= 0.0 && config.mapping.xi < 1.0, "mapping.xi",
            "must lie in [0, 1)");
    require(config.mapping.smoothing >= 0.0 && config.mapping.smoothing <= 1.0,
            "mapping.smoothing", "must lie in [0, 1]");
  }

  {
    json s = section_or_empty(j, "embedding");
    reject_unknown(s, "embedding", {"dim", "strategy", "unified_table"});
    EmbeddingSection& sec = config.embedding;
    read_field(s, "embedding", "dim", sec.dim);
    read_field(s, "embedding", "strategy", sec.strategy);
    read_field(s, "embedding", "unified_table", sec.unified_table);
    require(sec.dim >= 1, "embedding.dim", "must be >= 1");
    require(sec.strategy == "separate" || sec.strategy == "unified" || sec.strategy == "learned",
            "embedding.strategy", "must be one of separate, unified, learned");
    require(sec.strategy != "unified" || !sec.unified_table.empty(), "embedding.unified_table",
            "is required for the unified strategy");
  }

  {
    json s = section_or_empty(j, "evaluation");
    reject_unknown(s, "evaluation", {"mc_trials", "diagnostic_frames"});
    EvaluationSection& sec = config.evaluation;
    read_field(s, "evaluation", "mc_trials", sec.mc_trials);
    read_field(s, "evaluation", "diagnostic_frames", sec.diagnostic_frames);
    require(sec.mc_trials >= 1, "evaluation.mc_trials", "must be >= 1");
    require(sec.diagnostic_frames >= 0, "evaluation.diagnostic_frames", "must be >= 0");
  }

  return config;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("config: cannot open: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgumentError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir.generic_string()},
      {"synthlang",
       {{"feature_dim", c.synth.lang.feature_dim},
        {"n_src", c.synth.lang.n_src},
        {"n_tgt", c.synth.lang.n_tgt},
        {"overlap_fraction", c.synth.lang.overlap_fraction},
        {"sigma", c.synth.lang.sigma},
        {"duration_min", c.synth.lang.duration_min},
        {"duration_max", c.synth.lang.duration_max},
        {"mean_box", c.synth.lang.mean_box},
        {"utt_len_min", c.synth.utt_len_min},
        {"utt_len_max", c.synth.utt_len_max},
        {"source_minutes", c.synth.source_minutes},
        {"target_minutes", c.synth.target_minutes},
        {"dev_fraction", c.synth.dev_fraction}}},
      {"asr",
       {{"hidden", c.asr.model.hidden},
        {"n_blocks", c.asr.model.n_blocks},
        {"conv_kernel", c.asr.model.conv_kernel},
        {"bn_eps", c.asr.model.bn_eps},
        {"bn_momentum", c.asr.model.bn_momentum},
        {"epochs", c.asr.epochs},
        {"patience", c.asr.patience},
        {"learning_rate", c.asr.learning_rate}}},
      {"ptn",
       {{"hidden", c.ptn.model.hidden},
        {"dropout_rate", c.ptn.model.dropout_rate},
        {"epochs", c.ptn.epochs},
        {"patience", c.ptn.patience},
        {"learning_rate", c.ptn.learning_rate}}},
      {"mapping", {{"xi", c.mapping.xi}, {"smoothing", c.mapping.smoothing}}},
      {"embedding",
       {{"dim", c.embedding.dim},
        {"strategy", c.embedding.strategy},
        {"unified_table", c.embedding.unified_table}}},
      {"evaluation",
       {{"mc_trials", c.evaluation.mc_trials},
        {"diagnostic_frames", c.evaluation.diagnostic_frames}}}};
}

std::string config_digest(const PipelineConfig& config) {
  json j = config_to_json(config);
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

std::string section_digest(const PipelineConfig& config, const std::string& section) {
  json j = config_to_json(config);
  if (!j.contains(section)) {
    throw InvalidArgumentError("lineage: unknown config section '" + section + "'");
  }
  return sha256_hex(section + ":" + std::to_string(config.seed) + ":" + j.at(section).dump());
}

nlohmann::json lineage_json(const PipelineConfig& config,
                            const std::vector<std::string>& sections) {
  json j{{"seed", config.seed}};
  for (const std::string& s : sections) j[s] = section_digest(config, s);
  return j;
}

void check_lineage(const nlohmann::json& recorded, const PipelineConfig& config,
                   const std::string& artifact) {
  if (!recorded.is_object()) {
    throw IntegrityError("pipeline: " + artifact + " has a malformed lineage record");
  }
  for (const auto& item : recorded.items()) {
    if (item.key() == "seed") {
      std::uint64_t seed = 0;
      try {
        seed = item.value().get<std::uint64_t>();
      } catch (const json::exception&) {
        throw IntegrityError("pipeline: " + artifact + " has a malformed lineage seed");
      }
      if (seed != config.seed) {
        throw IntegrityError("pipeline: " + artifact + " was produced with seed " +
                             std::to_string(seed) + ", current config uses " +
                             std::to_string(config.seed));
      }
      continue;
    }
    std::string want;
    try {
      want = section_digest(config, item.key());
    } catch (const InvalidArgumentError&) {
      throw IntegrityError("pipeline: " + artifact + " records lineage for unknown section '" +
                           item.key() + "'");
    }
    if (!item.value().is_string() || item.value().get<std::string>() != want) {
      throw IntegrityError("pipeline: " + artifact + " was produced under a different '" +
                           item.key() + "' configuration; regenerate it or restore the config");
    }
  }
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag_seed,
                           std::optional<std::uint64_t> file_seed,
                           std::optional<std::string> env_text) {
  if (flag_seed.has_value()) return *flag_seed;
  if (file_seed.has_value()) return *file_seed;
  if (env_text.has_value()) {
    const std::string& text = *env_text;
    std::uint64_t value = 0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value, 10);
    if (text.empty() || ec != std::errc() || ptr != end) {
      throw InvalidArgumentError("PHONMAP_SEED must be a decimal unsigned integer, got '" +
                                 text + "'");
    }
    return value;
  }
  return PipelineConfig{}.seed;
}

ArtifactPaths artifact_paths(const fs::path& output_dir) {
  ArtifactPaths p;
  p.root = output_dir;
  p.src_train = output_dir / "data" / "src_train";
  p.src_dev = output_dir / "data" / "src_dev";
  p.tgt_train = output_dir / "data" / "tgt_train";
  p.tgt_dev = output_dir / "data" / "tgt_dev";
  p.truth = output_dir / "data" / "truth.tsv";
  p.asr_ckpt = output_dir / "models" / "asr.ckpt";
  p.ptn_ckpt = output_dir / "models" / "ptn.ckpt";
  p.mapping_tsv = output_dir / "mapping" / "mapping.tsv";
  p.w_src = output_dir / "embeddings" / "w_src.ckpt";
  p.w_tgt = output_dir / "embeddings" / "w_tgt.ckpt";
  p.transfer_report = output_dir / "embeddings" / "transfer_report.json";
  p.score = output_dir / "eval" / "score.json";
  p.run_dir = output_dir / "run";
  p.lock = output_dir / ".lock";
  return p;
}

CorpusPlan plan_corpus(const SynthSection& synth, double minutes) {
  const double mean_symbols =
      0.5 * static_cast<double>(synth.utt_len_min + synth.utt_len_max);
  const double mean_duration =
      0.5 * static_cast<double>(synth.lang.duration_min + synth.lang.duration_max);
  const double frames = static_cast<double>(minutes_to_frames(minutes));
  const auto total = static_cast<Index>(std::llround(frames / (mean_symbols * mean_duration)));
  CorpusPlan plan;
  const Index n = std::max<Index>(total, 2);
  plan.dev_utts = std::max<Index>(
      static_cast<Index>(std::llround(static_cast<double>(n) * synth.dev_fraction)), 1);
  if (plan.dev_utts >= n) plan.dev_utts = n - 1;
  plan.train_utts = n - plan.dev_utts;
  return plan;
}

StageOutcome stage_gen_data(const PipelineConfig& config) {
  return run_locked(config, gen_data_impl);
}
StageOutcome stage_train_asr(const PipelineConfig& config) {
  return run_locked(config, train_asr_impl);
}
StageOutcome stage_train_ptn(const PipelineConfig& config) {
  return run_locked(config, train_ptn_impl);
}
StageOutcome stage_discover_map(const PipelineConfig& config) {
  return run_locked(config, discover_map_impl);
}
StageOutcome stage_transfer_embeddings(const PipelineConfig& config) {
  return run_locked(config, transfer_impl);
}
StageOutcome stage_eval_map(const PipelineConfig& config) {
  return run_locked(config, eval_map_impl);
}

std::vector<StageOutcome> run_all(const PipelineConfig& config) {
  ArtifactPaths paths = artifact_paths(config.output_dir);
  OutputLock lock(paths);
  std::vector<StageOutcome> outcomes;
  const StageImpl stages[] = {gen_data_impl,     train_asr_impl, train_ptn_impl,
                              discover_map_impl, transfer_impl,  eval_map_impl};
  for (StageImpl impl : stages) {
    StageTimer timer;
    StageOutcome outcome = impl(config, paths);
    outcome.wall_seconds = timer.seconds();
    write_run_manifest(config, paths, outcome);
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

}  // namespace phonmap
