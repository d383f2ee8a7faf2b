// phonmap/models.hpp
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

#ifndef PHONMAP_MODELS_HPP
#define PHONMAP_MODELS_HPP

#include <string>
#include <vector>

#include "phonmap/checkpoint.hpp"
#include "phonmap/inventory.hpp"
#include "phonmap/nn.hpp"
#include "phonmap/params.hpp"
#include "phonmap/rng.hpp"

namespace phonmap {

// ---------------------------------------------------------------------------
// CNN acoustic model: input projection, a stack of residual time-convolution
// blocks (conv K then conv 1, each with batch norm + ReLU, additive skip
// around the block), and an output projection to N_src + 1 logits. Time
// length is preserved end to end.

struct AsrConfig {
  Index input_dim = 8;
  Index hidden = 128;
  Index n_blocks = 4;
  Index conv_kernel = 5;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

// Activations recorded by a train-mode forward, consumed by backward().
struct AsrTape {
  Matrix input;
  Matrix proj_out;
  struct Block {
    Matrix conv_a_in;
    Matrix conv_a_out;
    BatchNormCache bn_a;
    Matrix bn_a_out;
    Matrix relu_a_out;
    Matrix conv_b_out;
    BatchNormCache bn_b;
    Matrix bn_b_out;
    Matrix relu_b_out;
  };
  std::vector<Block> blocks;
  Matrix stack_out;
};

class CnnAsr {
 public:
  struct Block {
    Param conv_a_kernels, conv_a_bias;
    Param bn_a_gamma, bn_a_beta, bn_a_mean, bn_a_var;
    Param conv_b_kernels, conv_b_bias;
    Param bn_b_gamma, bn_b_beta, bn_b_mean, bn_b_var;
  };

  CnnAsr(const AsrConfig& config, SymbolInventory inventory, Rng& rng);

  // Inference pass (running batch-norm statistics, no state mutation);
  // safe for concurrent callers on a frozen model.
  Matrix forward(const Matrix& features) const;

  // Train-mode pass with per-utterance batch statistics. Running stats are
  // folded in only when update_running_stats is set, so gradient checking
  // can re-evaluate the loss without drift.
  Matrix forward_train(const Matrix& features, AsrTape& tape, bool update_running_stats);

  // Accumulates parameter gradients for the recorded pass.
  void backward(const AsrTape& tape, const Matrix& grad_logits);

  std::vector<Param*> trainable_params();
  // Trainable parameters plus batch-norm running statistics, in checkpoint
  // order. Running stats participate in hashing and persistence.
  std::vector<Param*> all_tensors();
  std::vector<const Param*> all_tensors() const;

  const AsrConfig& config() const { return config_; }
  const SymbolInventory& inventory() const { return inventory_; }
  Index output_width() const { return inventory_.width(); }

 private:
  friend CnnAsr asr_from_checkpoint(const Checkpoint& ckpt);
  CnnAsr(const AsrConfig& config, SymbolInventory inventory);  // zero-initialized

  void check_features(const Matrix& features) const;

  AsrConfig config_;
  SymbolInventory inventory_;
  Param proj_weight_, proj_bias_;
  std::vector<Block> blocks_;
  Param out_weight_, out_bias_;
};

// ---------------------------------------------------------------------------
// Phonetic transformation network: three fully connected layers, ReLU after
// the first two, dropout after each hidden layer, softmax over the target
// inventory (incl. blank). Rows are processed independently.

struct PtnConfig {
  Index hidden = 128;
  double dropout_rate = 0.4;
};

struct PtnTape {
  Matrix input;
  Matrix z1, drop1, mask1;
  Matrix z2, drop2, mask2;
};

class Ptn {
 public:
  Ptn(const PtnConfig& config, SymbolInventory source_inventory,
      SymbolInventory target_inventory, Rng& rng);

  // Inference: distribution rows in, distribution rows out.
  Matrix forward(const Matrix& source_posteriors) const;
  // Inference logits (pre-softmax), used for CTC scoring on held-out data.
  Matrix forward_logits(const Matrix& source_posteriors) const;
  // Train-mode logits with live dropout.
  Matrix forward_train_logits(const Matrix& source_posteriors, PtnTape& tape,
                              Rng& dropout_rng);
  void backward(const PtnTape& tape, const Matrix& grad_logits);

  std::vector<Param*> trainable_params();
  std::vector<const Param*> all_tensors() const;

  const PtnConfig& config() const { return config_; }
  const SymbolInventory& source_inventory() const { return source_inventory_; }
  const SymbolInventory& target_inventory() const { return target_inventory_; }
  Index input_width() const { return source_inventory_.width(); }
  Index output_width() const { return target_inventory_.width(); }

 private:
  friend Ptn ptn_from_checkpoint(const Checkpoint& ckpt);
  Ptn(const PtnConfig& config, SymbolInventory source_inventory,
      SymbolInventory target_inventory);

  void check_input(const Matrix& source_posteriors) const;

  PtnConfig config_;
  SymbolInventory source_inventory_;
  SymbolInventory target_inventory_;
  Param w1_, b1_, w2_, b2_, w3_, b3_;
};

// ---------------------------------------------------------------------------
// Checkpoint conversion. `training_meta` lands under meta["training"] and is
// round-tripped untouched; loaders validate kind, config, and every tensor
// shape.

Checkpoint asr_to_checkpoint(const CnnAsr& model, nlohmann::json training_meta);
CnnAsr asr_from_checkpoint(const Checkpoint& ckpt);

Checkpoint ptn_to_checkpoint(const Ptn& model, nlohmann::json training_meta);
Ptn ptn_from_checkpoint(const Checkpoint& ckpt);

// SHA-256 over the concatenated row-major bytes of the listed tensors; the
// frozen-model contract is asserted against this.
std::string tensors_sha256(const std::vector<const Param*>& tensors);

}  // namespace phonmap

#endif  // PHONMAP_MODELS_HPP
