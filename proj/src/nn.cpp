// phonmap/nn.cpp
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

#include "phonmap/nn.hpp"

#include <cmath>
#include <string>

namespace phonmap {

namespace {

void check_finite_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw InvalidArgumentError("dropout: rate must lie in [0, 1), got " +
                               std::to_string(rate));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// linear

Matrix linear_forward(const Matrix& x, const Matrix& weight, const RowVector& bias) {
  if (x.cols() != weight.rows() || bias.cols() != weight.cols()) {
    throw InvalidArgumentError("linear: shapes do not conform: x " + shape_str(x) +
                               ", weight " + shape_str(weight) + ", bias 1x" +
                               std::to_string(bias.cols()));
  }
  Matrix y = x * weight;
  y.rowwise() += bias;
  return y;
}

LinearGrads linear_backward(const Matrix& x, const Matrix& weight, const Matrix& grad_out) {
  if (grad_out.rows() != x.rows() || grad_out.cols() != weight.cols()) {
    throw InvalidArgumentError("linear backward: grad " + shape_str(grad_out) +
                               " does not match output of x " + shape_str(x) +
                               " * weight " + shape_str(weight));
  }
  LinearGrads g;
  g.x = grad_out * weight.transpose();
  g.weight = x.transpose() * grad_out;
  g.bias = grad_out.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// conv1d over time

namespace {

void check_conv_shapes(const Matrix& x, const Matrix& kernels, Index kernel_width,
                       const RowVector& bias) {
  if (kernel_width <= 0 || kernel_width % 2 == 0) {
    throw InvalidArgumentError("conv1d: kernel width must be odd and positive, got " +
                               std::to_string(kernel_width));
  }
  if (kernels.rows() != kernel_width * x.cols()) {
    throw InvalidArgumentError("conv1d: kernels " + shape_str(kernels) +
                               " do not match width " + std::to_string(kernel_width) +
                               " x input " + shape_str(x));
  }
  if (bias.cols() != kernels.cols()) {
    throw InvalidArgumentError("conv1d: bias 1x" + std::to_string(bias.cols()) +
                               " does not match kernels " + shape_str(kernels));
  }
}

}  // namespace

Matrix conv1d_forward(const Matrix& x, const Matrix& kernels, Index kernel_width,
                      const RowVector& bias) {
  check_conv_shapes(x, kernels, kernel_width, bias);
  const Index t_len = x.rows();
  const Index c_in = x.cols();
  const Index c_out = kernels.cols();
  const Index pad = (kernel_width - 1) / 2;

  Matrix y = bias.replicate(t_len, 1);
  for (Index k = 0; k < kernel_width; ++k) {
    const Index offset = k - pad;
    const Index n = t_len - std::abs(offset);
    if (n <= 0) continue;
    const Index ya = offset < 0 ? -offset : 0;
    const Index xa = offset > 0 ? offset : 0;
    y.middleRows(ya, n).noalias() += x.middleRows(xa, n) * kernels.middleRows(k * c_in, c_in);
  }
  (void)c_out;
  return y;
}

Conv1dGrads conv1d_backward(const Matrix& x, const Matrix& kernels, Index kernel_width,
                            const Matrix& grad_out) {
  if (grad_out.rows() != x.rows() || grad_out.cols() != kernels.cols()) {
    throw InvalidArgumentError("conv1d backward: grad " + shape_str(grad_out) +
                               " does not match output " + std::to_string(x.rows()) + "x" +
                               std::to_string(kernels.cols()));
  }
  const Index t_len = x.rows();
  const Index c_in = x.cols();
  const Index pad = (kernel_width - 1) / 2;

  Conv1dGrads g;
  g.x = Matrix::Zero(x.rows(), x.cols());
  g.kernels = Matrix::Zero(kernels.rows(), kernels.cols());
  g.bias = grad_out.colwise().sum();
  for (Index k = 0; k < kernel_width; ++k) {
    const Index offset = k - pad;
    const Index n = t_len - std::abs(offset);
    if (n <= 0) continue;
    const Index ya = offset < 0 ? -offset : 0;
    const Index xa = offset > 0 ? offset : 0;
    g.kernels.middleRows(k * c_in, c_in).noalias() +=
        x.middleRows(xa, n).transpose() * grad_out.middleRows(ya, n);
    g.x.middleRows(xa, n).noalias() +=
        grad_out.middleRows(ya, n) * kernels.middleRows(k * c_in, c_in).transpose();
  }
  return g;
}

// ---------------------------------------------------------------------------
// batch normalization

Matrix batchnorm_train_forward(const Matrix& x, const RowVector& gamma,
                               const RowVector& beta, double eps, BatchNormCache& cache) {
  if (x.rows() < 2) {
    throw InvalidArgumentError("batchnorm: train mode needs at least 2 frames, got " +
                               std::to_string(x.rows()));
  }
  if (gamma.cols() != x.cols() || beta.cols() != x.cols()) {
    throw InvalidArgumentError("batchnorm: gamma/beta width does not match input " +
                               shape_str(x));
  }
  if (!(eps > 0.0)) {
    throw InvalidArgumentError("batchnorm: epsilon must be positive");
  }
  const double t_len = static_cast<double>(x.rows());
  cache.mean = x.colwise().mean();
  Matrix centered = x.rowwise() - cache.mean;
  RowVector var = centered.array().square().colwise().sum() / t_len;
  cache.inv_std = (var.array() + eps).sqrt().inverse();
  cache.x_hat = centered.array().rowwise() * cache.inv_std.array();
  Matrix y = cache.x_hat.array().rowwise() * gamma.array();
  y.rowwise() += beta;
  return y;
}

void batchnorm_update_running(const BatchNormCache& cache, double eps, double momentum,
                              RowVector& running_mean, RowVector& running_var) {
  RowVector var = cache.inv_std.array().square().inverse() - eps;
  running_mean = (1.0 - momentum) * running_mean + momentum * cache.mean;
  running_var = (1.0 - momentum) * running_var + momentum * var;
}

Matrix batchnorm_infer_forward(const Matrix& x, const RowVector& gamma,
                               const RowVector& beta, const RowVector& running_mean,
                               const RowVector& running_var, double eps) {
  if (gamma.cols() != x.cols() || running_mean.cols() != x.cols()) {
    throw InvalidArgumentError("batchnorm: stats width does not match input " + shape_str(x));
  }
  const RowVector inv_std = (running_var.array() + eps).sqrt().inverse();
  Matrix y = ((x.rowwise() - running_mean).array().rowwise() *
              (inv_std.array() * gamma.array()));
  y.rowwise() += beta;
  return y;
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const RowVector& gamma,
                                  const Matrix& grad_out) {
  const double t_len = static_cast<double>(grad_out.rows());
  BatchNormGrads g;
  g.beta = grad_out.colwise().sum();
  g.gamma = (grad_out.array() * cache.x_hat.array()).colwise().sum();

  // dL/dx via the usual single-pass reduction of the normalization graph.
  Matrix dxhat = grad_out.array().rowwise() * gamma.array();
  RowVector sum_dxhat = dxhat.colwise().sum();
  RowVector sum_dxhat_xhat = (dxhat.array() * cache.x_hat.array()).colwise().sum();
  Matrix inner = (t_len * dxhat).rowwise() - sum_dxhat;
  inner.array() -= cache.x_hat.array().rowwise() * sum_dxhat_xhat.array();
  g.x = inner.array().rowwise() * (cache.inv_std.array() / t_len);
  return g;
}

// ---------------------------------------------------------------------------
// relu

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& x, const Matrix& grad_out) {
  return (x.array() > 0.0).select(grad_out, Matrix::Zero(x.rows(), x.cols()));
}

// ---------------------------------------------------------------------------
// softmax

Matrix softmax_rows(const Matrix& x) {
  Matrix shifted = x.colwise() - x.rowwise().maxCoeff();
  Matrix e = shifted.array().exp();
  Vector sums = e.rowwise().sum();
  return e.array().colwise() / sums.array();
}

Matrix log_softmax_rows(const Matrix& x) {
  Matrix shifted = x.colwise() - x.rowwise().maxCoeff();
  Vector log_sums = shifted.array().exp().rowwise().sum().log();
  return shifted.colwise() - log_sums;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& grad_out) {
  Vector dot = (y.array() * grad_out.array()).rowwise().sum();
  return y.array() * (grad_out.colwise() - dot).array();
}

// ---------------------------------------------------------------------------
// dropout

Matrix dropout(const Matrix& x, double rate, Mode mode, Rng& rng, Matrix* mask_out) {
  check_finite_rate(rate);
  if (mode == Mode::kInfer || rate == 0.0) {
    if (mask_out != nullptr) {
      *mask_out = Matrix::Ones(x.rows(), x.cols());
    }
    return x;
  }
  const double scale = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      mask(r, c) = rng.uniform() < rate ? 0.0 : scale;
    }
  }
  Matrix y = x.cwiseProduct(mask);
  if (mask_out != nullptr) {
    *mask_out = std::move(mask);
  }
  return y;
}

Matrix dropout_backward(const Matrix& mask, const Matrix& grad_out) {
  return grad_out.cwiseProduct(mask);
}

}  // namespace phonmap
