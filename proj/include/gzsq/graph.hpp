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
#include <string>
#include <vector>

#include "gzsq/tensor.hpp"

namespace gzsq {

enum class LayerKind {
    Conv2d,
    DepthwiseConv2d,
    FullyConnected,
    Add,
    GlobalAvgPool,
    Flatten,
};

enum class Activation {
    None,
    ReLU,
    ReLU6,
};

const char *to_string(LayerKind k);
const char *to_string(Activation a);
LayerKind layer_kind_from_string(const std::string &s);
Activation activation_from_string(const std::string &s);

// Inference-time batch norm: y = gamma * (x - running_mean) / sqrt(running_std^2 + epsilon) + beta,
// applied per channel. running_std stores the standard deviation, not the
// variance. epsilon >= 0; running_std[k]^2 + epsilon must be positive.
struct BNParams {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> running_mean;
    std::vector<float> running_std;
    float epsilon = 1e-5f;

    size_t size() const noexcept { return gamma.size(); }
    bool operator==(const BNParams &) const = default;
};

struct LayerSpec {
    int id = 0;
    LayerKind kind = LayerKind::Conv2d;
    std::optional<WeightTensor> weights;
    std::optional<std::vector<float>> bias;
    int stride = 1;
    int padding = 0;
    std::optional<BNParams> bn;
    Activation activation = Activation::None;
    // Add only: id of the earlier layer whose output is the second addend.
    int residual_source = -1;
    // Set by fold_bn on biases it synthesizes; drives the refined-mean term
    // in statistics estimation when folding precedes distillation.
    bool bias_from_fold = false;

    bool is_conv_like() const noexcept {
        return kind == LayerKind::Conv2d || kind == LayerKind::DepthwiseConv2d ||
               kind == LayerKind::FullyConnected;
    }
    bool operator==(const LayerSpec &) const = default;
};

struct Shape3 {
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;
    bool operator==(const Shape3 &) const = default;
};

// Sequential chain plus residual Add links. Layer ids are unique and appear
// in execution order; each layer consumes the previous layer's output (the
// model input for the first layer).
struct ModelGraph {
    std::vector<LayerSpec> layers;
    Shape3 input_shape;
    std::string name;
    std::string version;

    bool has_bn() const noexcept;
    const LayerSpec *layer_by_id(int id) const noexcept;
    bool operator==(const ModelGraph &) const = default;
};

// Post-activation outputs f^n per layer, in execution order. conv_out is the
// raw convolution output (before BN and activation) and is recorded for
// conv-like layers only; it is what BN-statistics matching taps into.
struct ActivationTrace {
    struct Entry {
        int layer_id = 0;
        Tensor post_activation;
        std::optional<Tensor> conv_out;
    };
    std::vector<Entry> entries;

    const Entry *find(int layer_id) const noexcept;
};

enum class TraceMode {
    None,     // output only
    Post,     // post-activation outputs
    Full,     // post-activation outputs plus conv outputs
};

struct ForwardResult {
    Tensor output;
    std::optional<ActivationTrace> trace;
};

// Shape of each layer's output given the model input shape. Throws
// invalid_argument_error on inconsistent chains.
std::vector<Shape3> layer_output_shapes(const ModelGraph &model);

// Runs the model on `input` (batch size free; c/h/w must match
// model.input_shape). Throws numeric_fault naming the layer if a non-finite
// value appears.
ForwardResult forward(const ModelGraph &model, const Tensor &input, TraceMode mode = TraceMode::None);

// Structural diagnostics; empty means every ModelGraph invariant holds.
std::vector<std::string> validate_graph(const ModelGraph &model);

// Model directory format "gzsq-model/1": manifest.json plus one raw
// little-endian f32 blob per weight/bias/BN vector. Round-trips bit-exactly.
void save_model(const ModelGraph &model, const std::string &dir);
ModelGraph load_model(const std::string &dir);

// Building blocks shared with the gradient machinery.

// Per-channel affine view of inference BN: y = scale[c] * x + shift[c].
struct BNAffine {
    std::vector<double> scale;
    std::vector<double> shift;
};
BNAffine bn_affine(const BNParams &bn);

Tensor conv2d_direct(const Tensor &x, const WeightTensor &w, const std::vector<float> *bias,
                     int stride, int padding, bool depthwise);

// Evaluates one layer. `residual` is required for Add layers; when `conv_out`
// is non-null it receives the raw convolution output of conv-like layers.
Tensor layer_eval(const LayerSpec &l, const Tensor &input, const Tensor *residual,
                  Tensor *conv_out);

} // namespace gzsq
