// phonmap/nn.hpp
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
// Dense sequence kernels. Every forward has a matching analytic backward;
// inputs are time-major (rows = frames, cols = channels).

#ifndef PHONMAP_NN_HPP
#define PHONMAP_NN_HPP

#include "phonmap/common.hpp"
#include "phonmap/rng.hpp"

namespace phonmap {

enum class Mode { kTrain, kInfer };

// ---------------------------------------------------------------------------
// Affine projection: y[t] = x[t] * weight + bias.

Matrix linear_forward(const Matrix& x, const Matrix& weight, const RowVector& bias);

struct LinearGrads {
  Matrix x;
  Matrix weight;
  RowVector bias;
};

LinearGrads linear_backward(const Matrix& x, const Matrix& weight, const Matrix& grad_out);

// ---------------------------------------------------------------------------
// 1-D convolution across time (cross-correlation), channels fully connected.
// Kernels for a width-K filter bank are stored as a (K*C_in) x C_out matrix;
// tap k occupies rows [k*C_in, (k+1)*C_in). K must be odd and the input is
// zero-padded by (K-1)/2 frames on each side, so T_out == T_in.

Matrix conv1d_forward(const Matrix& x, const Matrix& kernels, Index kernel_width,
                      const RowVector& bias);

struct Conv1dGrads {
  Matrix x;
  Matrix kernels;
  RowVector bias;
};

Conv1dGrads conv1d_backward(const Matrix& x, const Matrix& kernels, Index kernel_width,
                            const Matrix& grad_out);

// ---------------------------------------------------------------------------
// Per-channel batch normalization over the time axis of one utterance.

struct BatchNormCache {
  RowVector mean;
  RowVector inv_std;  // 1/sqrt(var + eps)
  Matrix x_hat;       // normalized input
};

// Train mode: normalizes with batch statistics (requires T >= 2) and fills
// `cache` for the backward pass.
Matrix batchnorm_train_forward(const Matrix& x, const RowVector& gamma,
                               const RowVector& beta, double eps, BatchNormCache& cache);

// Folds the cached batch statistics into the running estimates.
void batchnorm_update_running(const BatchNormCache& cache, double eps, double momentum,
                              RowVector& running_mean, RowVector& running_var);

// Infer mode: normalizes with the running estimates; works for any T >= 1.
Matrix batchnorm_infer_forward(const Matrix& x, const RowVector& gamma,
                               const RowVector& beta, const RowVector& running_mean,
                               const RowVector& running_var, double eps);

struct BatchNormGrads {
  Matrix x;
  RowVector gamma;
  RowVector beta;
};

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const RowVector& gamma,
                                  const Matrix& grad_out);

// ---------------------------------------------------------------------------
// Elementwise ReLU. The subgradient at exactly 0 is taken to be 0.

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& grad_out);

// ---------------------------------------------------------------------------
// Row-wise softmax with max subtraction; stable for any finite input.

Matrix softmax_rows(const Matrix& x);
Matrix log_softmax_rows(const Matrix& x);
Matrix softmax_rows_backward(const Matrix& y, const Matrix& grad_out);

// ---------------------------------------------------------------------------
// Inverted dropout. Train mode zeroes each element with probability `rate`
// and scales survivors by 1/(1-rate); infer mode is the identity. The mask
// written to `mask_out` (when non-null) already carries the survivor scale,
// so backward is an elementwise product with it.

Matrix dropout(const Matrix& x, double rate, Mode mode, Rng& rng, Matrix* mask_out = nullptr);
Matrix dropout_backward(const Matrix& mask, const Matrix& grad_out);

}  // namespace phonmap

#endif  // PHONMAP_NN_HPP
