// phonmap/training.hpp
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

#ifndef PHONMAP_TRAINING_HPP
#define PHONMAP_TRAINING_HPP

#include <filesystem>
#include <functional>
#include <vector>

#include "phonmap/adam.hpp"
#include "phonmap/corpus.hpp"
#include "phonmap/ctc.hpp"
#include "phonmap/models.hpp"

namespace phonmap {

// Levenshtein distance between two label sequences (insert/delete/substitute,
// unit costs).
Index edit_distance(const LabelSequence& a, const LabelSequence& b);

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_ser = 0.0;
  Index skipped_train = 0;  // utterances below the alignment length bound
};

struct TrainOptions {
  int epochs = 50;
  int patience = 10;  // epochs without dev improvement before stopping
  AdamConfig adam;
  std::uint64_t seed = 7;
  // Merged into the checkpoint's training metadata (e.g. config digest).
  nlohmann::json extra_meta = nlohmann::json::object();
  // Called after each epoch; may be empty.
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;  // model with the lowest dev loss
  int best_epoch = 0;
  double best_dev_loss = 0.0;
  std::vector<EpochLog> log;
};

// Trains the acoustic model with per-utterance CTC updates; batch statistics
// fold into running estimates during training, the returned checkpoint is the
// epoch with the best dev loss. Utterances too short for their labels are
// skipped and counted. Throws InvalidArgumentError on an empty corpus and
// TrainingError when nothing is trainable.
TrainResult train_asr(const Corpus& train, const Corpus& dev, const AsrConfig& model_config,
                      const TrainOptions& options);

// Stage two: loads the acoustic checkpoint from `asr_checkpoint_path`
// (validated; its file digest is recorded in the result's metadata), freezes
// it, and trains the transformation network on target-language labels against
// the frozen source posteriorgrams. Only network parameters receive updates;
// batch-norm running statistics stay frozen.
TrainResult train_ptn(const std::filesystem::path& asr_checkpoint_path, const Corpus& train,
                      const Corpus& dev, const PtnConfig& model_config,
                      const TrainOptions& options);

}  // namespace phonmap

#endif  // PHONMAP_TRAINING_HPP
