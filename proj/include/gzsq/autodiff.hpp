/* Copyright 2026 The gzsq-toolkit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <optional>
#include <vector>

#include "gzsq/graph.hpp"

namespace gzsq {

// Where a loss term attaches inside a layer.
enum class TapPoint {
    ConvOut,        // raw convolution output, before BN and activation
    PostActivation, // f^n, the layer output
};

// Adjoints a loss contributes to the reverse pass. Vectors are flat row-major
// buffers matching the tapped tensor; an empty vector means all-zero.
struct LossSeed {
    std::vector<double> d_output;
    struct Injection {
        int layer_id = 0;
        TapPoint tap = TapPoint::PostActivation;
        std::vector<double> adjoint;
    };
    std::vector<Injection> injections;
    // Direct gradient w.r.t. the model input (input-prior terms).
    std::vector<double> d_input;
};

// A scalar objective over one forward pass. Implementations are built from
// the supported reduction algebra (per-channel mean/std statistics and the
// distillation losses) or act on the final output directly.
class LossFunction {
public:
    virtual ~LossFunction() = default;
    virtual double value(const Tensor &output, const ActivationTrace &trace,
                         const Tensor &input) const = 0;
    virtual LossSeed seed(const Tensor &output, const ActivationTrace &trace,
                          const Tensor &input) const = 0;
};

// Primal record of one forward pass: replaying the stored values through the
// loss reproduces the recorded scalar exactly.
struct Tape {
    Tensor input;
    ActivationTrace trace;
    Tensor output;
    double loss = 0.0;

    double replay_loss(const LossFunction &fn) const { return fn.value(output, trace, input); }
};

Tape record_tape(const ModelGraph &model, const Tensor &input, const LossFunction &loss);

struct LayerGrads {
    std::optional<WeightTensor> d_weights;
    std::optional<std::vector<float>> d_bias;
    std::optional<std::vector<float>> d_gamma;
    std::optional<std::vector<float>> d_beta;
};

struct Gradients {
    Tensor d_input;
    // Parallel to model.layers when weight gradients were requested.
    std::vector<LayerGrads> d_layers;
    double loss = 0.0;
};

// Exact reverse-mode gradients of loss w.r.t. the input (and, when requested,
// w.r.t. weights, biases and BN affine parameters).
Gradients backward(const ModelGraph &model, const Tensor &input, const LossFunction &loss,
                   bool weight_grads = false);

// Max over a seeded subsample of input coordinates (>= 64 when available) of
// |analytic - central difference| / max(1, |analytic|).
double finite_diff_check(const ModelGraph &model, const Tensor &input, const LossFunction &loss,
                         double epsilon, int64_t sample_coords = 64, uint64_t seed = 0);

} // namespace gzsq
