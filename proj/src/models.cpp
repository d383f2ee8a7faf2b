// phonmap/models.cpp
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

#include "phonmap/models.hpp"

#include <cmath>
#include <cstring>
#include <utility>

#include "phonmap/digest.hpp"

namespace phonmap {

namespace {

void check_asr_config(const AsrConfig& c) {
  if (c.input_dim < 1) throw InvalidArgumentError("asr config: input_dim must be >= 1");
  if (c.hidden < 1) throw InvalidArgumentError("asr config: hidden must be >= 1");
  if (c.n_blocks < 1) throw InvalidArgumentError("asr config: n_blocks must be >= 1");
  if (c.conv_kernel < 1 || c.conv_kernel % 2 == 0) {
    throw InvalidArgumentError("asr config: conv_kernel must be odd and >= 1");
  }
  if (!(c.bn_eps > 0.0)) throw InvalidArgumentError("asr config: bn_eps must be > 0");
  if (!(c.bn_momentum > 0.0) || c.bn_momentum > 1.0) {
    throw InvalidArgumentError("asr config: bn_momentum must be in (0, 1]");
  }
}

void check_ptn_config(const PtnConfig& c) {
  if (c.hidden < 1) throw InvalidArgumentError("ptn config: hidden must be >= 1");
  if (!(c.dropout_rate >= 0.0) || c.dropout_rate >= 1.0) {
    throw InvalidArgumentError("ptn config: dropout_rate must be in [0, 1)");
  }
}

// He-style init: entries ~ N(0, 2/fan_in). Biases, batch-norm shifts and
// running means start at zero; batch-norm scales and running variances at one.
Matrix he_normal(Rng& rng, Index rows, Index cols, Index fan_in) {
  return rng.normal_matrix(rows, cols, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Param zero_matrix_param(std::string name, Index rows, Index cols) {
  return Param::matrix(std::move(name), Matrix::Zero(rows, cols));
}

Param zero_row_param(std::string name, Index cols) {
  return Param::row(std::move(name), RowVector::Zero(cols));
}

Param ones_row_param(std::string name, Index cols) {
  return Param::row(std::move(name), RowVector::Ones(cols));
}

Param conv_param(std::string name, Index kernel_width, Index c_in, Index c_out) {
  Param p(std::move(name), {kernel_width, c_in, c_out},
          Matrix::Zero(kernel_width * c_in, c_out));
  return p;
}

nlohmann::json asr_config_json(const AsrConfig& c) {
  return nlohmann::json{{"input_dim", c.input_dim},   {"hidden", c.hidden},
                        {"n_blocks", c.n_blocks},     {"conv_kernel", c.conv_kernel},
                        {"bn_eps", c.bn_eps},         {"bn_momentum", c.bn_momentum}};
}

AsrConfig asr_config_from_json(const nlohmann::json& j) {
  AsrConfig c;
  try {
    c.input_dim = j.at("input_dim").get<Index>();
    c.hidden = j.at("hidden").get<Index>();
    c.n_blocks = j.at("n_blocks").get<Index>();
    c.conv_kernel = j.at("conv_kernel").get<Index>();
    c.bn_eps = j.at("bn_eps").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint meta: bad asr config: ") + e.what());
  }
  return c;
}

nlohmann::json ptn_config_json(const PtnConfig& c) {
  return nlohmann::json{{"hidden", c.hidden}, {"dropout_rate", c.dropout_rate}};
}

PtnConfig ptn_config_from_json(const nlohmann::json& j) {
  PtnConfig c;
  try {
    c.hidden = j.at("hidden").get<Index>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint meta: bad ptn config: ") + e.what());
  }
  return c;
}

SymbolInventory inventory_from_json(const nlohmann::json& j, const std::string& key) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw IntegrityError("checkpoint meta: missing inventory '" + key + "'");
  }
  std::vector<std::string> symbols;
  for (const auto& s : j.at(key)) symbols.push_back(s.get<std::string>());
  return SymbolInventory(std::move(symbols));
}

// Copies checkpoint tensors into the model's parameter slots, insisting on
// exact name and shape agreement.
void fill_params(const Checkpoint& ckpt, const std::vector<Param*>& params) {
  for (Param* p : params) {
    const Checkpoint::Entry& e = ckpt.at(p->name);
    if (e.shape != p->shape) {
      throw IntegrityError("checkpoint tensor '" + p->name + "': shape mismatch");
    }
    if (e.data.rows() != p->value.rows() || e.data.cols() != p->value.cols()) {
      throw IntegrityError("checkpoint tensor '" + p->name + "': size mismatch");
    }
    p->value = e.data;
  }
}

void add_params(Checkpoint& ckpt, const std::vector<const Param*>& params) {
  for (const Param* p : params) {
    ckpt.add(p->name, p->shape, p->value);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// CnnAsr

CnnAsr::CnnAsr(const AsrConfig& config, SymbolInventory inventory)
    : config_(config), inventory_(std::move(inventory)) {
  check_asr_config(config_);
  const Index h = config_.hidden;
  const Index k = config_.conv_kernel;
  proj_weight_ = zero_matrix_param("in_proj.weight", config_.input_dim, h);
  proj_bias_ = zero_row_param("in_proj.bias", h);
  blocks_.reserve(static_cast<std::size_t>(config_.n_blocks));
  for (Index i = 0; i < config_.n_blocks; ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".";
    Block b;
    b.conv_a_kernels = conv_param(prefix + "conv_a.kernels", k, h, h);
    b.conv_a_bias = zero_row_param(prefix + "conv_a.bias", h);
    b.bn_a_gamma = ones_row_param(prefix + "bn_a.gamma", h);
    b.bn_a_beta = zero_row_param(prefix + "bn_a.beta", h);
    b.bn_a_mean = zero_row_param(prefix + "bn_a.running_mean", h);
    b.bn_a_var = ones_row_param(prefix + "bn_a.running_var", h);
    b.conv_b_kernels = conv_param(prefix + "conv_b.kernels", 1, h, h);
    b.conv_b_bias = zero_row_param(prefix + "conv_b.bias", h);
    b.bn_b_gamma = ones_row_param(prefix + "bn_b.gamma", h);
    b.bn_b_beta = zero_row_param(prefix + "bn_b.beta", h);
    b.bn_b_mean = zero_row_param(prefix + "bn_b.running_mean", h);
    b.bn_b_var = ones_row_param(prefix + "bn_b.running_var", h);
    blocks_.push_back(std::move(b));
  }
  out_weight_ = zero_matrix_param("out_proj.weight", h, inventory_.width());
  out_bias_ = zero_row_param("out_proj.bias", inventory_.width());
}

CnnAsr::CnnAsr(const AsrConfig& config, SymbolInventory inventory, Rng& rng)
    : CnnAsr(config, std::move(inventory)) {
  const Index h = config_.hidden;
  const Index k = config_.conv_kernel;
  // Weight draws happen in declaration order; everything else is constant.
  proj_weight_.value = he_normal(rng, config_.input_dim, h, config_.input_dim);
  for (Block& b : blocks_) {
    b.conv_a_kernels.value = he_normal(rng, k * h, h, k * h);
    b.conv_b_kernels.value = he_normal(rng, h, h, h);
  }
  out_weight_.value = he_normal(rng, h, inventory_.width(), h);
}

void CnnAsr::check_features(const Matrix& features) const {
  if (features.rows() < 1) throw InvalidArgumentError("asr forward: empty feature matrix");
  if (features.cols() != config_.input_dim) {
    throw InvalidArgumentError("asr forward: feature dim " + std::to_string(features.cols()) +
                               " does not match model input_dim " +
                               std::to_string(config_.input_dim));
  }
  if (!features.allFinite()) throw InvalidArgumentError("asr forward: non-finite features");
}

Matrix CnnAsr::forward(const Matrix& features) const {
  check_features(features);
  Matrix x = linear_forward(features, proj_weight_.value, proj_bias_.value.row(0));
  for (const Block& b : blocks_) {
    Matrix a = conv1d_forward(x, b.conv_a_kernels.value, config_.conv_kernel,
                              b.conv_a_bias.value.row(0));
    Matrix na = batchnorm_infer_forward(a, b.bn_a_gamma.value.row(0), b.bn_a_beta.value.row(0),
                                        b.bn_a_mean.value.row(0), b.bn_a_var.value.row(0),
                                        config_.bn_eps);
    Matrix ra = relu(na);
    Matrix c = conv1d_forward(ra, b.conv_b_kernels.value, 1, b.conv_b_bias.value.row(0));
    Matrix nb = batchnorm_infer_forward(c, b.bn_b_gamma.value.row(0), b.bn_b_beta.value.row(0),
                                        b.bn_b_mean.value.row(0), b.bn_b_var.value.row(0),
                                        config_.bn_eps);
    x += relu(nb);
  }
  return linear_forward(x, out_weight_.value, out_bias_.value.row(0));
}

Matrix CnnAsr::forward_train(const Matrix& features, AsrTape& tape, bool update_running_stats) {
  check_features(features);
  tape.input = features;
  tape.blocks.clear();
  tape.blocks.reserve(blocks_.size());
  tape.proj_out = linear_forward(features, proj_weight_.value, proj_bias_.value.row(0));
  Matrix x = tape.proj_out;
  for (Block& b : blocks_) {
    AsrTape::Block tb;
    tb.conv_a_in = x;
    tb.conv_a_out = conv1d_forward(x, b.conv_a_kernels.value, config_.conv_kernel,
                                   b.conv_a_bias.value.row(0));
    tb.bn_a_out = batchnorm_train_forward(tb.conv_a_out, b.bn_a_gamma.value.row(0),
                                          b.bn_a_beta.value.row(0), config_.bn_eps, tb.bn_a);
    tb.relu_a_out = relu(tb.bn_a_out);
    tb.conv_b_out =
        conv1d_forward(tb.relu_a_out, b.conv_b_kernels.value, 1, b.conv_b_bias.value.row(0));
    tb.bn_b_out = batchnorm_train_forward(tb.conv_b_out, b.bn_b_gamma.value.row(0),
                                          b.bn_b_beta.value.row(0), config_.bn_eps, tb.bn_b);
    tb.relu_b_out = relu(tb.bn_b_out);
    if (update_running_stats) {
      RowVector rm = b.bn_a_mean.value.row(0);
      RowVector rv = b.bn_a_var.value.row(0);
      batchnorm_update_running(tb.bn_a, config_.bn_eps, config_.bn_momentum, rm, rv);
      b.bn_a_mean.value.row(0) = rm;
      b.bn_a_var.value.row(0) = rv;
      rm = b.bn_b_mean.value.row(0);
      rv = b.bn_b_var.value.row(0);
      batchnorm_update_running(tb.bn_b, config_.bn_eps, config_.bn_momentum, rm, rv);
      b.bn_b_mean.value.row(0) = rm;
      b.bn_b_var.value.row(0) = rv;
    }
    x += tb.relu_b_out;
    tape.blocks.push_back(std::move(tb));
  }
  tape.stack_out = x;
  return linear_forward(x, out_weight_.value, out_bias_.value.row(0));
}

void CnnAsr::backward(const AsrTape& tape, const Matrix& grad_logits) {
  if (tape.blocks.size() != blocks_.size()) {
    throw InvalidStateError("asr backward: tape does not match model depth");
  }
  LinearGrads out_g = linear_backward(tape.stack_out, out_weight_.value, grad_logits);
  out_weight_.grad += out_g.weight;
  out_bias_.grad.row(0) += out_g.bias;
  Matrix g = std::move(out_g.x);
  for (Index i = static_cast<Index>(blocks_.size()) - 1; i >= 0; --i) {
    Block& b = blocks_[static_cast<std::size_t>(i)];
    const AsrTape::Block& tb = tape.blocks[static_cast<std::size_t>(i)];
    // Skip connection: the incoming gradient feeds both the branch and the
    // block input directly.
    Matrix gb = relu_backward(tb.bn_b_out, g);
    BatchNormGrads bn_b_g = batchnorm_backward(tb.bn_b, b.bn_b_gamma.value.row(0), gb);
    b.bn_b_gamma.grad.row(0) += bn_b_g.gamma;
    b.bn_b_beta.grad.row(0) += bn_b_g.beta;
    Conv1dGrads conv_b_g = conv1d_backward(tb.relu_a_out, b.conv_b_kernels.value, 1, bn_b_g.x);
    b.conv_b_kernels.grad += conv_b_g.kernels;
    b.conv_b_bias.grad.row(0) += conv_b_g.bias;
    Matrix ga = relu_backward(tb.bn_a_out, conv_b_g.x);
    BatchNormGrads bn_a_g = batchnorm_backward(tb.bn_a, b.bn_a_gamma.value.row(0), ga);
    b.bn_a_gamma.grad.row(0) += bn_a_g.gamma;
    b.bn_a_beta.grad.row(0) += bn_a_g.beta;
    Conv1dGrads conv_a_g =
        conv1d_backward(tb.conv_a_in, b.conv_a_kernels.value, config_.conv_kernel, bn_a_g.x);
    b.conv_a_kernels.grad += conv_a_g.kernels;
    b.conv_a_bias.grad.row(0) += conv_a_g.bias;
    g += conv_a_g.x;
  }
  LinearGrads in_g = linear_backward(tape.input, proj_weight_.value, g);
  proj_weight_.grad += in_g.weight;
  proj_bias_.grad.row(0) += in_g.bias;
}

std::vector<Param*> CnnAsr::trainable_params() {
  std::vector<Param*> out{&proj_weight_, &proj_bias_};
  for (Block& b : blocks_) {
    out.push_back(&b.conv_a_kernels);
    out.push_back(&b.conv_a_bias);
    out.push_back(&b.bn_a_gamma);
    out.push_back(&b.bn_a_beta);
    out.push_back(&b.conv_b_kernels);
    out.push_back(&b.conv_b_bias);
    out.push_back(&b.bn_b_gamma);
    out.push_back(&b.bn_b_beta);
  }
  out.push_back(&out_weight_);
  out.push_back(&out_bias_);
  return out;
}

std::vector<Param*> CnnAsr::all_tensors() {
  std::vector<Param*> out{&proj_weight_, &proj_bias_};
  for (Block& b : blocks_) {
    out.push_back(&b.conv_a_kernels);
    out.push_back(&b.conv_a_bias);
    out.push_back(&b.bn_a_gamma);
    out.push_back(&b.bn_a_beta);
    out.push_back(&b.bn_a_mean);
    out.push_back(&b.bn_a_var);
    out.push_back(&b.conv_b_kernels);
    out.push_back(&b.conv_b_bias);
    out.push_back(&b.bn_b_gamma);
    out.push_back(&b.bn_b_beta);
    out.push_back(&b.bn_b_mean);
    out.push_back(&b.bn_b_var);
  }
  out.push_back(&out_weight_);
  out.push_back(&out_bias_);
  return out;
}

std::vector<const Param*> CnnAsr::all_tensors() const {
  auto mutable_list = const_cast<CnnAsr*>(this)->all_tensors();
  return std::vector<const Param*>(mutable_list.begin(), mutable_list.end());
}

// ---------------------------------------------------------------------------
// Ptn

Ptn::Ptn(const PtnConfig& config, SymbolInventory source_inventory,
         SymbolInventory target_inventory)
    : config_(config),
      source_inventory_(std::move(source_inventory)),
      target_inventory_(std::move(target_inventory)) {
  check_ptn_config(config_);
  const Index h = config_.hidden;
  w1_ = zero_matrix_param("fc1.weight", source_inventory_.width(), h);
  b1_ = zero_row_param("fc1.bias", h);
  w2_ = zero_matrix_param("fc2.weight", h, h);
  b2_ = zero_row_param("fc2.bias", h);
  w3_ = zero_matrix_param("fc3.weight", h, target_inventory_.width());
  b3_ = zero_row_param("fc3.bias", target_inventory_.width());
}

Ptn::Ptn(const PtnConfig& config, SymbolInventory source_inventory,
         SymbolInventory target_inventory, Rng& rng)
    : Ptn(config, std::move(source_inventory), std::move(target_inventory)) {
  const Index h = config_.hidden;
  w1_.value = he_normal(rng, source_inventory_.width(), h, source_inventory_.width());
  w2_.value = he_normal(rng, h, h, h);
  w3_.value = he_normal(rng, h, target_inventory_.width(), h);
}

void Ptn::check_input(const Matrix& source_posteriors) const {
  if (source_posteriors.rows() < 1) throw InvalidArgumentError("ptn forward: empty input");
  if (source_posteriors.cols() != source_inventory_.width()) {
    throw InvalidArgumentError(
        "ptn forward: input width " + std::to_string(source_posteriors.cols()) +
        " does not match source inventory width " + std::to_string(source_inventory_.width()));
  }
  if (!source_posteriors.allFinite()) {
    throw InvalidArgumentError("ptn forward: non-finite input");
  }
}

Matrix Ptn::forward_logits(const Matrix& source_posteriors) const {
  check_input(source_posteriors);
  Matrix h1 = relu(linear_forward(source_posteriors, w1_.value, b1_.value.row(0)));
  Matrix h2 = relu(linear_forward(h1, w2_.value, b2_.value.row(0)));
  return linear_forward(h2, w3_.value, b3_.value.row(0));
}

Matrix Ptn::forward(const Matrix& source_posteriors) const {
  return softmax_rows(forward_logits(source_posteriors));
}

Matrix Ptn::forward_train_logits(const Matrix& source_posteriors, PtnTape& tape,
                                 Rng& dropout_rng) {
  check_input(source_posteriors);
  tape.input = source_posteriors;
  tape.z1 = linear_forward(source_posteriors, w1_.value, b1_.value.row(0));
  tape.drop1 = dropout(relu(tape.z1), config_.dropout_rate, Mode::kTrain, dropout_rng,
                       &tape.mask1);
  tape.z2 = linear_forward(tape.drop1, w2_.value, b2_.value.row(0));
  tape.drop2 = dropout(relu(tape.z2), config_.dropout_rate, Mode::kTrain, dropout_rng,
                       &tape.mask2);
  return linear_forward(tape.drop2, w3_.value, b3_.value.row(0));
}

void Ptn::backward(const PtnTape& tape, const Matrix& grad_logits) {
  LinearGrads g3 = linear_backward(tape.drop2, w3_.value, grad_logits);
  w3_.grad += g3.weight;
  b3_.grad.row(0) += g3.bias;
  Matrix gz2 = relu_backward(tape.z2, dropout_backward(tape.mask2, g3.x));
  LinearGrads g2 = linear_backward(tape.drop1, w2_.value, gz2);
  w2_.grad += g2.weight;
  b2_.grad.row(0) += g2.bias;
  Matrix gz1 = relu_backward(tape.z1, dropout_backward(tape.mask1, g2.x));
  LinearGrads g1 = linear_backward(tape.input, w1_.value, gz1);
  w1_.grad += g1.weight;
  b1_.grad.row(0) += g1.bias;
}

std::vector<Param*> Ptn::trainable_params() {
  return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_};
}

std::vector<const Param*> Ptn::all_tensors() const {
  return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_};
}

// ---------------------------------------------------------------------------
// Checkpoint conversion

Checkpoint asr_to_checkpoint(const CnnAsr& model, nlohmann::json training_meta) {
  Checkpoint ckpt;
  ckpt.format_version = kCheckpointFormatVersion;
  ckpt.kind = "asr";
  ckpt.meta["config"] = asr_config_json(model.config());
  ckpt.meta["inventory"] = model.inventory().symbols();
  ckpt.meta["blank_index"] = model.inventory().blank_index();
  ckpt.meta["training"] = std::move(training_meta);
  add_params(ckpt, model.all_tensors());
  return ckpt;
}

CnnAsr asr_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, "asr");
  if (!ckpt.meta.contains("config")) {
    throw IntegrityError("checkpoint meta: missing asr config");
  }
  AsrConfig config = asr_config_from_json(ckpt.meta.at("config"));
  SymbolInventory inventory = inventory_from_json(ckpt.meta, "inventory");
  CnnAsr model(config, std::move(inventory));
  fill_params(ckpt, model.all_tensors());
  return model;
}

Checkpoint ptn_to_checkpoint(const Ptn& model, nlohmann::json training_meta) {
  Checkpoint ckpt;
  ckpt.format_version = kCheckpointFormatVersion;
  ckpt.kind = "ptn";
  ckpt.meta["config"] = ptn_config_json(model.config());
  ckpt.meta["source_inventory"] = model.source_inventory().symbols();
  ckpt.meta["target_inventory"] = model.target_inventory().symbols();
  ckpt.meta["blank_index"] = model.target_inventory().blank_index();
  ckpt.meta["training"] = std::move(training_meta);
  add_params(ckpt, model.all_tensors());
  return ckpt;
}

Ptn ptn_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, "ptn");
  if (!ckpt.meta.contains("config")) {
    throw IntegrityError("checkpoint meta: missing ptn config");
  }
  PtnConfig config = ptn_config_from_json(ckpt.meta.at("config"));
  SymbolInventory src = inventory_from_json(ckpt.meta, "source_inventory");
  SymbolInventory tgt = inventory_from_json(ckpt.meta, "target_inventory");
  Ptn model(config, std::move(src), std::move(tgt));
  std::vector<Param*> params{&model.w1_, &model.b1_, &model.w2_,
                             &model.b2_, &model.w3_, &model.b3_};
  fill_params(ckpt, params);
  return model;
}

std::string tensors_sha256(const std::vector<const Param*>& tensors) {
  std::string bytes;
  for (const Param* p : tensors) {
    const char* begin = reinterpret_cast<const char*>(p->value.data());
    bytes.append(begin, static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return sha256_hex(bytes);
}

}  // namespace phonmap
