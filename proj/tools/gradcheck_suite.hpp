// tools/gradcheck_suite.hpp
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
// Fixed gradient-check fixtures shared by the `gradcheck` subcommand and the
// acceptance harness: every differentiable layer alone, both models under a
// CTC head, and the frozen-encoder stack on a 10-frame utterance.

#ifndef PHONMAP_TOOLS_GRADCHECK_SUITE_HPP
#define PHONMAP_TOOLS_GRADCHECK_SUITE_HPP

#include <string>
#include <vector>

#include "phonmap/ctc.hpp"
#include "phonmap/gradcheck.hpp"
#include "phonmap/inventory.hpp"
#include "phonmap/models.hpp"
#include "phonmap/nn.hpp"
#include "phonmap/rng.hpp"

namespace phonmap::gradsuite {

struct SuiteResult {
  std::string name;
  double limit = 0.0;
  double rel_err = 0.0;
  bool ok() const { return rel_err < limit; }
};

inline Matrix loss_weights(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_matrix(rows, cols, 0.0, 1.0);
}

inline SymbolInventory suite_inventory(const std::string& prefix, int n) {
  std::vector<std::string> symbols;
  for (int i = 0; i < n; ++i) symbols.push_back(prefix + std::to_string(i));
  return SymbolInventory(symbols);
}

inline double check_linear() {
  Rng rng(3);
  Param x = Param::matrix("x", rng.normal_matrix(4, 3, 0.0, 1.0));
  Param w = Param::matrix("w", rng.normal_matrix(3, 2, 0.0, 1.0));
  Param b = Param::row("b", rng.normal_matrix(1, 2, 0.0, 1.0).row(0));
  Matrix r = loss_weights(4, 2, 99);
  auto loss_fn = [&](bool want_grads) {
    Matrix y = linear_forward(x.value, w.value, b.value.row(0));
    if (want_grads) {
      zero_grads({&x, &w, &b});
      LinearGrads g = linear_backward(x.value, w.value, r);
      x.grad = g.x;
      w.grad = g.weight;
      b.grad.row(0) = g.bias;
    }
    return (y.cwiseProduct(r)).sum();
  };
  return grad_check(loss_fn, {&x, &w, &b});
}

inline double check_conv1d() {
  Rng rng(5);
  Param x = Param::matrix("x", rng.normal_matrix(7, 3, 0.0, 1.0));
  Param kernels = Param::matrix("k", rng.normal_matrix(9, 2, 0.0, 1.0));
  Param bias = Param::row("b", rng.normal_matrix(1, 2, 0.0, 1.0).row(0));
  Matrix r = loss_weights(7, 2, 100);
  auto loss_fn = [&](bool want_grads) {
    Matrix y = conv1d_forward(x.value, kernels.value, 3, bias.value.row(0));
    if (want_grads) {
      zero_grads({&x, &kernels, &bias});
      Conv1dGrads g = conv1d_backward(x.value, kernels.value, 3, r);
      x.grad = g.x;
      kernels.grad = g.kernels;
      bias.grad.row(0) = g.bias;
    }
    return (y.cwiseProduct(r)).sum();
  };
  return grad_check(loss_fn, {&x, &kernels, &bias});
}

inline double check_batchnorm() {
  Rng rng(7);
  Param x = Param::matrix("x", rng.normal_matrix(6, 3, 0.5, 2.0));
  Param gamma = Param::row("gamma", rng.normal_matrix(1, 3, 1.0, 0.2).row(0));
  Param beta = Param::row("beta", rng.normal_matrix(1, 3, 0.0, 0.2).row(0));
  Matrix r = loss_weights(6, 3, 101);
  auto loss_fn = [&](bool want_grads) {
    BatchNormCache cache;
    Matrix y =
        batchnorm_train_forward(x.value, gamma.value.row(0), beta.value.row(0), 1e-5, cache);
    if (want_grads) {
      zero_grads({&x, &gamma, &beta});
      BatchNormGrads g = batchnorm_backward(cache, gamma.value.row(0), r);
      x.grad = g.x;
      gamma.grad.row(0) = g.gamma;
      beta.grad.row(0) = g.beta;
    }
    return (y.cwiseProduct(r)).sum();
  };
  return grad_check(loss_fn, {&x, &gamma, &beta});
}

inline double check_relu() {
  Rng rng(9);
  // Every element at least 0.5 from zero: central differences never straddle
  // the kink.
  Matrix base = rng.normal_matrix(5, 4, 0.0, 1.0);
  Matrix x0 = base.unaryExpr([](double v) { return v >= 0.0 ? v + 0.5 : v - 0.5; });
  Param x = Param::matrix("x", x0);
  Matrix r = loss_weights(5, 4, 102);
  auto loss_fn = [&](bool want_grads) {
    Matrix y = relu(x.value);
    if (want_grads) {
      x.zero_grad();
      x.grad = relu_backward(x.value, r);
    }
    return (y.cwiseProduct(r)).sum();
  };
  return grad_check(loss_fn, {&x});
}

inline double check_softmax() {
  Rng rng(12);
  Param x = Param::matrix("x", rng.normal_matrix(4, 5, 0.0, 1.5));
  Matrix r = loss_weights(4, 5, 103);
  auto loss_fn = [&](bool want_grads) {
    Matrix y = softmax_rows(x.value);
    if (want_grads) {
      x.zero_grad();
      x.grad = softmax_rows_backward(y, r);
    }
    return (y.cwiseProduct(r)).sum();
  };
  return grad_check(loss_fn, {&x});
}

inline double check_asr_ctc() {
  Rng rng(46);
  AsrConfig config;
  config.input_dim = 5;
  config.hidden = 8;
  config.n_blocks = 2;
  config.conv_kernel = 3;
  CnnAsr model(config, suite_inventory("s", 4), rng);
  Matrix features = rng.normal_matrix(10, 5, 0.0, 1.0);
  LabelSequence labels{{0, 2, 1}};
  std::vector<Param*> params = model.trainable_params();
  auto loss_fn = [&](bool want_grads) {
    AsrTape tape;
    Matrix logits = model.forward_train(features, tape, false);
    CtcResult res = ctc_loss(logits, labels);
    if (want_grads) {
      zero_grads(params);
      model.backward(tape, res.grad);
    }
    return res.loss;
  };
  return grad_check(loss_fn, params);
}

inline double check_ptn_ctc() {
  Rng rng(53);
  Ptn ptn(PtnConfig{12, 0.0}, suite_inventory("s", 4), suite_inventory("t", 4), rng);
  Matrix p_src = softmax_rows(rng.normal_matrix(8, 5, 0.0, 1.0));
  LabelSequence labels{{1, 0, 3}};
  std::vector<Param*> params = ptn.trainable_params();
  Rng drop(1);
  auto loss_fn = [&](bool want_grads) {
    PtnTape tape;
    Matrix logits = ptn.forward_train_logits(p_src, tape, drop);
    CtcResult res = ctc_loss(logits, labels);
    if (want_grads) {
      zero_grads(params);
      ptn.backward(tape, res.grad);
    }
    return res.loss;
  };
  return grad_check(loss_fn, params);
}

// Frozen encoder, trainable transformation network, CTC on top; a 10-frame
// utterance end to end.
inline double check_stack() {
  Rng rng(55);
  AsrConfig config;
  config.input_dim = 5;
  config.hidden = 8;
  config.n_blocks = 2;
  config.conv_kernel = 3;
  CnnAsr asr(config, suite_inventory("s", 4), rng);
  Ptn ptn(PtnConfig{12, 0.0}, suite_inventory("s", 4), suite_inventory("t", 4), rng);
  Matrix features = rng.normal_matrix(10, 5, 0.0, 1.0);
  LabelSequence labels{{0, 3}};
  Matrix p_src = softmax_rows(asr.forward(features));
  std::vector<Param*> params = ptn.trainable_params();
  Rng drop(1);
  auto loss_fn = [&](bool want_grads) {
    PtnTape tape;
    Matrix logits = ptn.forward_train_logits(p_src, tape, drop);
    CtcResult res = ctc_loss(logits, labels);
    if (want_grads) {
      zero_grads(params);
      ptn.backward(tape, res.grad);
    }
    return res.loss;
  };
  return grad_check(loss_fn, params);
}

// Runs every check; smooth single ops at 1e-6, batch-norm paths at 1e-5, the
// CTC-headed models and the frozen stack at 1e-4.
inline std::vector<SuiteResult> run_suite() {
  struct Check {
    const char* name;
    double limit;
    double (*run)();
  };
  const Check checks[] = {
      {"linear", 1e-6, check_linear},
      {"conv1d", 1e-6, check_conv1d},
      {"relu", 1e-6, check_relu},
      {"softmax", 1e-6, check_softmax},
      {"batchnorm", 1e-5, check_batchnorm},
      {"asr-ctc", 1e-4, check_asr_ctc},
      {"ptn-ctc", 1e-5, check_ptn_ctc},
      {"frozen-asr+ptn+ctc", 1e-4, check_stack},
  };
  std::vector<SuiteResult> results;
  for (const Check& c : checks) results.push_back({c.name, c.limit, c.run()});
  return results;
}

}  // namespace phonmap::gradsuite

#endif  // PHONMAP_TOOLS_GRADCHECK_SUITE_HPP
