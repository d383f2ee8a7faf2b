// phonmap/pipeline.hpp
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
// Experiment orchestration: a validated configuration, content-hashed
// artifact lineage, and the staged pipeline (data generation, two training
// stages, mapping discovery, embedding transfer, evaluation) behind the CLI.

#ifndef PHONMAP_PIPELINE_HPP
#define PHONMAP_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phonmap/models.hpp"
#include "phonmap/synthlang.hpp"

namespace phonmap {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Configuration. One structured file with per-stage sections; every key is
// validated with an error naming it, and unknown keys are rejected.

struct SynthSection {
  SynthConfig lang;  // lang.seed mirrors the global seed
  Index utt_len_min = 5;
  Index utt_len_max = 15;
  double source_minutes = 30.0;  // total source-language audio budget
  double target_minutes = 15.0;  // total target-language audio budget
  double dev_fraction = 0.1;     // slice of each budget held out as dev
};

struct AsrSection {
  AsrConfig model;  // model.input_dim is tied to synthlang.feature_dim
  int epochs = 50;
  int patience = 10;
  double learning_rate = 1e-3;
};

struct PtnSection {
  PtnConfig model;
  int epochs = 100;
  int patience = 10;
  double learning_rate = 1e-3;
};

struct MappingSection {
  double xi = 0.4;
  double smoothing = 0.0;
};

struct EmbeddingSection {
  Index dim = 16;
  std::string strategy = "learned";  // separate | unified | learned
  std::string unified_table;         // path, required for the unified strategy
};

struct EvaluationSection {
  std::int64_t mc_trials = 100000;
  // Frames of dev audio pushed through the frozen stack for posteriorgram
  // diagnostics; 0 disables them.
  std::int64_t diagnostic_frames = 2000;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::filesystem::path output_dir = "out";
  SynthSection synth;
  AsrSection asr;
  PtnSection ptn;
  MappingSection mapping;
  EmbeddingSection embedding;
  EvaluationSection evaluation;
};

// Parses and validates a configuration object; unknown or ill-typed keys
// raise InvalidArgumentError naming the key. Missing keys take defaults.
PipelineConfig config_from_json(const nlohmann::json& j);

// Reads a JSON file and delegates to config_from_json.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Canonical JSON of the effective configuration (sorted keys, defaults
// materialized). Includes output_dir.
nlohmann::json config_to_json(const PipelineConfig& config);

// SHA-256 of the canonical configuration with output_dir removed, so the
// same experiment in two directories shares one digest.
std::string config_digest(const PipelineConfig& config);

// Digest of one named section plus the global seed: artifacts record the
// digests of exactly the sections they depend on, which lets a stage rerun
// with an unrelated section changed (e.g. a new xi) without invalidating
// upstream artifacts, while any change to what an artifact was built from is
// detected as an integrity error.
std::string section_digest(const PipelineConfig& config, const std::string& section);

// {"seed": seed, "<section>": section_digest, ...} for the named sections.
nlohmann::json lineage_json(const PipelineConfig& config,
                            const std::vector<std::string>& sections);

// Compares recorded lineage against the current configuration; throws
// IntegrityError naming the artifact and the diverging section.
void check_lineage(const nlohmann::json& recorded, const PipelineConfig& config,
                   const std::string& artifact);

// Seed precedence: command-line flag, then the config file, then the
// PHONMAP_SEED environment text, then the built-in default 7. Env text that
// is not a decimal u64 raises InvalidArgumentError.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag_seed,
                           std::optional<std::uint64_t> file_seed,
                           std::optional<std::string> env_text);

// ---------------------------------------------------------------------------
// Artifact layout inside the output directory.

struct ArtifactPaths {
  std::filesystem::path root;
  std::filesystem::path src_train, src_dev, tgt_train, tgt_dev;  // corpus dirs
  std::filesystem::path truth;
  std::filesystem::path asr_ckpt, ptn_ckpt;
  std::filesystem::path mapping_tsv;
  std::filesystem::path w_src, w_tgt, transfer_report;
  std::filesystem::path score;
  std::filesystem::path run_dir;  // per-stage run manifests (timing lives here)
  std::filesystem::path lock;
};

ArtifactPaths artifact_paths(const std::filesystem::path& output_dir);

// Planned corpus sizes for a minutes budget under the configured utterance
// shape (expected frames per utterance = mean symbols * mean duration).
struct CorpusPlan {
  Index train_utts = 0;
  Index dev_utts = 0;
};

CorpusPlan plan_corpus(const SynthSection& synth, double minutes);

// ---------------------------------------------------------------------------
// Stages. Each stage validates its upstream artifacts (DependencyError when
// missing, IntegrityError on digest or lineage mismatches), writes its
// outputs, and appends a run manifest under run/. Stage functions hold the
// output directory's lock file for their duration; a held lock raises
// InvalidStateError.

struct StageOutcome {
  std::string stage;
  double wall_seconds = 0.0;
  std::map<std::string, std::string> inputs;   // relative path -> sha256
  std::map<std::string, std::string> outputs;  // relative path -> sha256
};

StageOutcome stage_gen_data(const PipelineConfig& config);
StageOutcome stage_train_asr(const PipelineConfig& config);
StageOutcome stage_train_ptn(const PipelineConfig& config);
StageOutcome stage_discover_map(const PipelineConfig& config);
StageOutcome stage_transfer_embeddings(const PipelineConfig& config);
StageOutcome stage_eval_map(const PipelineConfig& config);

// All six stages in order under a single lock.
std::vector<StageOutcome> run_all(const PipelineConfig& config);

}  // namespace phonmap

#endif  // PHONMAP_PIPELINE_HPP
