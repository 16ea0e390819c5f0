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

#include <map>
#include <string>
#include <vector>

#include "gzsq/graph.hpp"

namespace gzsq {

enum class Granularity { PerTensor, PerChannel };
enum class Symmetry { Symmetric, Affine };

const char *to_string(Granularity g);
const char *to_string(Symmetry s);
Granularity granularity_from_string(const std::string &s);
Symmetry symmetry_from_string(const std::string &s);

// Fixed-point mapping q = clamp(round(x * scale) + zero_point, qmin, qmax)
// with multiplicative scale. zero_point is stored exactly and integer-valued;
// symmetric schemes have zero_point == 0 and drop the most negative code so
// the grid is magnitude-symmetric. bits == 32 marks the identity
// (quantization disabled) parameter set. Rounding is half-away-from-zero.
struct QuantParams {
    int bits = 8;
    Granularity granularity = Granularity::PerTensor;
    Symmetry symmetry = Symmetry::Affine;
    std::vector<double> scale;      // size 1 or channel count
    std::vector<double> zero_point; // same size as scale

    bool identity() const noexcept { return bits == 32; }
    int64_t qmin() const noexcept {
        return symmetry == Symmetry::Symmetric ? -((int64_t(1) << (bits - 1)) - 1) : 0;
    }
    int64_t qmax() const noexcept {
        return symmetry == Symmetry::Symmetric ? (int64_t(1) << (bits - 1)) - 1
                                               : (int64_t(1) << bits) - 1;
    }
    bool operator==(const QuantParams &) const = default;
};

struct QuantizedTensor {
    Shape4 shape;
    std::vector<int32_t> values;
    bool operator==(const QuantizedTensor &) const = default;
};

// Per-tensor parameters for the closed range [range_min, range_max]. The
// degenerate range (max == min) widens to [min - 0.5, max + 0.5]; an all-zero
// symmetric range widens the same way. bits must be in [2, 8].
QuantParams compute_qparams(double range_min, double range_max, int bits, Symmetry symmetry);

// Identity (bits = 32) parameters: quantize/dequantize are pass-throughs.
QuantParams identity_qparams();

// Per-channel quantization follows the C axis of the tensor; weights are
// quantized through their (1, o, i*kh, kw) view so out-channels line up.
QuantizedTensor quantize(const Tensor &x, const QuantParams &p);
Tensor dequantize(const QuantizedTensor &q, const QuantParams &p);
Tensor fake_quantize(const Tensor &x, const QuantParams &p);

Tensor weight_as_tensor(const WeightTensor &w);

enum class ObserverKind { MinMax, PerChannelMinMax, Histogram };

const char *to_string(ObserverKind k);
ObserverKind observer_kind_from_string(const std::string &s);

// Streaming range accumulator. MinMax tracks global extrema,
// PerChannelMinMax per-C-axis extrema, Histogram a fixed-bin-count density
// over the observed support (the grid is re-sampled proportionally when the
// support grows). finalize picks quantization parameters from the
// accumulated state; the histogram finalizer scans bin-aligned candidate
// sub-ranges for the one minimizing expected squared quantization error.
class Observer {
public:
    explicit Observer(ObserverKind kind, int histogram_bins = 2048);

    void observe(const Tensor &t);
    QuantParams finalize(int bits, Symmetry symmetry) const;

    ObserverKind kind() const noexcept { return kind_; }
    int64_t observed_count() const noexcept { return observed_; }
    double range_min() const;
    double range_max() const;
    const std::vector<double> &histogram_counts() const noexcept { return counts_; }
    double histogram_lo() const noexcept { return lo_; }
    double histogram_hi() const noexcept { return hi_; }

private:
    void observe_histogram(const Tensor &t);

    ObserverKind kind_;
    int bins_;
    int64_t observed_ = 0;
    double min_ = 0.0, max_ = 0.0;
    std::vector<double> ch_min_, ch_max_;
    std::vector<double> counts_;
    double lo_ = 0.0, hi_ = 0.0;
};

// Expected-squared-error of quantizing the histogram mass (bin centers) to a
// uniform grid of `levels` codes over [a, b]; shared with the test oracle.
double histogram_range_error(const std::vector<double> &counts, double lo, double bin_width,
                             double a, double b, int64_t levels);

// Activation parameters for every layer boundary; the model input boundary
// is included. Activations are per-tensor.
struct ActQuantParams {
    QuantParams input;
    std::map<int, QuantParams> per_layer;
    // Observed (min, max) per boundary, input under key -1.
    std::map<int, std::pair<double, double>> observed_ranges;
};

ActQuantParams calibrate_activations(const ModelGraph &model, const std::vector<Tensor> &batches,
                                     ObserverKind kind, int bits, Symmetry symmetry);

// Identity activation parameters (bits = 32) for the disabled-quantization path.
ActQuantParams identity_act_params(const ModelGraph &model);

struct QuantizedModel {
    ModelGraph graph; // original fp32 backbone
    ActQuantParams act;
    struct WeightPayload {
        QuantParams params;
        QuantizedTensor q;
    };
    std::map<int, WeightPayload> weights;

    // graph with weights replaced by their fake-quantized values; rebuilt on
    // load, never serialized.
    ModelGraph sim_graph;
};

// Quantizes weights at the given precision/scheme and binds activation
// parameters. weight_bits == 32 leaves weights untouched (identity path).
QuantizedModel quantize_model(const ModelGraph &model, const ActQuantParams &act, int weight_bits,
                              Granularity weight_granularity, Symmetry weight_symmetry);

// Simulated integer inference: weights fake-quantized once, activations
// fake-quantized at the input boundary and after every layer.
Tensor quantized_forward(const QuantizedModel &qm, const Tensor &input);

// Directory format: the graph format under model/ plus qparams.json and one
// 8-bit weight payload blob per quantized layer.
void save_quantized_model(const QuantizedModel &qm, const std::string &dir);
QuantizedModel load_quantized_model(const std::string &dir);

// Standalone activation-parameter document, format "gzsq-actparams/1".
void save_act_params(const ActQuantParams &act, const std::string &path);
ActQuantParams load_act_params(const std::string &path);

} // namespace gzsq
