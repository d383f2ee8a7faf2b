// phonmap/training.cpp
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

#include "phonmap/training.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <utility>

#include "phonmap/digest.hpp"
#include "phonmap/nn.hpp"
#include "phonmap/rng.hpp"

namespace phonmap {

Index edit_distance(const LabelSequence& a, const LabelSequence& b) {
  const std::size_t n = a.ids.size();
  const std::size_t m = b.ids.size();
  std::vector<Index> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<Index>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<Index>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      Index sub = prev[j - 1] + (a.ids[i - 1] == b.ids[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

namespace {

// An utterance participates in training only when CTC has at least one legal
// alignment and batch statistics are defined (two frames or more).
bool trainable_utterance(const Utterance& u, bool needs_batch_stats) {
  if (needs_batch_stats && u.features.rows() < 2) return false;
  return u.features.rows() >= ctc_min_frames(u.labels);
}

void check_corpora(const Corpus& train, const Corpus& dev, const char* stage) {
  if (train.utts.empty()) {
    throw InvalidArgumentError(std::string(stage) + " training: train corpus is empty");
  }
  if (dev.utts.empty()) {
    throw InvalidArgumentError(std::string(stage) +
                               " training: dev corpus is empty (needed for model selection)");
  }
}

// Greedy-decode symbol error rate plus mean CTC loss over a dev set whose
// posteriorgrams are produced by `logits_fn`. Unalignable utterances are
// excluded from the loss average but still decoded for the error rate.
struct DevScore {
  double loss = 0.0;
  double ser = 0.0;
};

template <typename LogitsFn>
DevScore score_dev(const Corpus& dev, LogitsFn&& logits_fn, const char* stage) {
  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  Index edits = 0;
  Index ref_symbols = 0;
  for (const Utterance& u : dev.utts) {
    Matrix logits = logits_fn(u);
    LabelSequence decoded = greedy_decode(softmax_rows(logits));
    edits += edit_distance(decoded, u.labels);
    ref_symbols += static_cast<Index>(u.labels.ids.size());
    if (logits.rows() >= ctc_min_frames(u.labels)) {
      loss_sum += ctc_loss(logits, u.labels).loss;
      ++loss_count;
    }
  }
  if (loss_count == 0) {
    throw TrainingError(std::string(stage) +
                        " training: no dev utterance admits a CTC alignment");
  }
  if (ref_symbols == 0) {
    throw TrainingError(std::string(stage) + " training: dev corpus has no labels");
  }
  DevScore score;
  score.loss = loss_sum / static_cast<double>(loss_count);
  score.ser = static_cast<double>(edits) / static_cast<double>(ref_symbols);
  return score;
}

nlohmann::json training_meta(const TrainOptions& options, int best_epoch, int epochs_run,
                             double best_dev_loss, Index skipped) {
  nlohmann::json meta = options.extra_meta;
  meta["seed"] = options.seed;
  meta["best_epoch"] = best_epoch;
  meta["epochs_run"] = epochs_run;
  meta["best_dev_loss"] = best_dev_loss;
  meta["skipped_train_utterances"] = skipped;
  return meta;
}

void check_options(const TrainOptions& options, const char* stage) {
  if (options.epochs < 1) {
    throw InvalidArgumentError(std::string(stage) + " training: epochs must be >= 1");
  }
  if (options.patience < 1) {
    throw InvalidArgumentError(std::string(stage) + " training: patience must be >= 1");
  }
}

}  // namespace

TrainResult train_asr(const Corpus& train, const Corpus& dev, const AsrConfig& model_config,
                      const TrainOptions& options) {
  check_corpora(train, dev, "asr");
  check_options(options, "asr");
  for (const Utterance& u : train.utts) {
    if (u.features.cols() != model_config.input_dim) {
      throw InvalidArgumentError("asr training: utterance '" + u.id + "' feature width " +
                                 std::to_string(u.features.cols()) +
                                 " does not match input_dim " +
                                 std::to_string(model_config.input_dim));
    }
  }

  Rng init_rng(derive_seed(options.seed, "asr-init"));
  CnnAsr model(model_config, train.inventory, init_rng);
  std::vector<Param*> params = model.trainable_params();
  AdamState adam;
  adam.init(params);
  Rng shuffle_rng(derive_seed(options.seed, "asr-shuffle"));

  std::vector<std::size_t> order(train.utts.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.best_dev_loss = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::int64_t trained = 0;
    Index skipped = 0;
    for (std::size_t idx : order) {
      const Utterance& u = train.utts[idx];
      if (!trainable_utterance(u, /*needs_batch_stats=*/true)) {
        ++skipped;
        continue;
      }
      AsrTape tape;
      Matrix logits = model.forward_train(u.features, tape, /*update_running_stats=*/true);
      CtcResult res = ctc_loss(logits, u.labels);
      zero_grads(params);
      model.backward(tape, res.grad);
      adam_step(params, adam, options.adam);
      loss_sum += res.loss;
      ++trained;
    }
    if (trained == 0) {
      throw TrainingError("asr training: every train utterance is unusable "
                          "(too short for its labels)");
    }
    DevScore dev_score =
        score_dev(dev, [&](const Utterance& u) { return model.forward(u.features); }, "asr");

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(trained);
    log.dev_loss = dev_score.loss;
    log.dev_ser = dev_score.ser;
    log.skipped_train = skipped;
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);

    if (dev_score.loss < result.best_dev_loss) {
      result.best_dev_loss = dev_score.loss;
      result.best_epoch = epoch;
      result.best = asr_to_checkpoint(
          model, training_meta(options, epoch, epoch, dev_score.loss, skipped));
    } else if (epoch - result.best_epoch >= options.patience) {
      break;
    }
  }
  // Final epoch count differs from the snapshot's; refresh the metadata.
  result.best.meta["training"]["epochs_run"] = static_cast<int>(result.log.size());
  return result;
}

TrainResult train_ptn(const std::filesystem::path& asr_checkpoint_path, const Corpus& train,
                      const Corpus& dev, const PtnConfig& model_config,
                      const TrainOptions& options) {
  check_corpora(train, dev, "ptn");
  check_options(options, "ptn");
  Checkpoint asr_ckpt = load_checkpoint(asr_checkpoint_path);
  CnnAsr asr = asr_from_checkpoint(asr_ckpt);
  const std::string asr_file_digest = sha256_file_hex(asr_checkpoint_path);

  if (!(train.inventory == dev.inventory)) {
    throw InvalidArgumentError("ptn training: train/dev target inventories differ");
  }

  // The acoustic model is frozen, so source posteriorgrams are constants of
  // the data; compute each one exactly once.
  auto posteriorgrams = [&](const Corpus& corpus) {
    std::vector<Matrix> out;
    out.reserve(corpus.utts.size());
    for (const Utterance& u : corpus.utts) {
      out.push_back(softmax_rows(asr.forward(u.features)));
    }
    return out;
  };
  std::vector<Matrix> train_psrc = posteriorgrams(train);
  std::vector<Matrix> dev_psrc = posteriorgrams(dev);

  Rng init_rng(derive_seed(options.seed, "ptn-init"));
  Ptn model(model_config, asr.inventory(), train.inventory, init_rng);
  std::vector<Param*> params = model.trainable_params();
  AdamState adam;
  adam.init(params);
  Rng shuffle_rng(derive_seed(options.seed, "ptn-shuffle"));
  Rng dropout_rng(derive_seed(options.seed, "ptn-dropout"));

  std::vector<std::size_t> order(train.utts.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.best_dev_loss = std::numeric_limits<double>::infinity();
  auto meta_for = [&](int best_epoch, int epochs_run, double dev_loss, Index skipped) {
    nlohmann::json meta = training_meta(options, best_epoch, epochs_run, dev_loss, skipped);
    meta["asr_checkpoint_sha256"] = asr_file_digest;
    return meta;
  };

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::int64_t trained = 0;
    Index skipped = 0;
    for (std::size_t idx : order) {
      const Utterance& u = train.utts[idx];
      if (!trainable_utterance(u, /*needs_batch_stats=*/false)) {
        ++skipped;
        continue;
      }
      PtnTape tape;
      Matrix logits = model.forward_train_logits(train_psrc[idx], tape, dropout_rng);
      CtcResult res = ctc_loss(logits, u.labels);
      zero_grads(params);
      model.backward(tape, res.grad);
      adam_step(params, adam, options.adam);
      loss_sum += res.loss;
      ++trained;
    }
    if (trained == 0) {
      throw TrainingError("ptn training: every train utterance is unusable "
                          "(too short for its labels)");
    }
    std::size_t dev_idx = 0;
    DevScore dev_score = score_dev(
        dev,
        [&](const Utterance&) { return model.forward_logits(dev_psrc[dev_idx++]); }, "ptn");

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(trained);
    log.dev_loss = dev_score.loss;
    log.dev_ser = dev_score.ser;
    log.skipped_train = skipped;
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);

    if (dev_score.loss < result.best_dev_loss) {
      result.best_dev_loss = dev_score.loss;
      result.best_epoch = epoch;
      result.best = ptn_to_checkpoint(model, meta_for(epoch, epoch, dev_score.loss, skipped));
    } else if (epoch - result.best_epoch >= options.patience) {
      break;
    }
  }
  result.best.meta["training"]["epochs_run"] = static_cast<int>(result.log.size());
  return result;
}

}  // namespace phonmap
