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

#include <string>
#include <vector>

#include "gzsq/distill.hpp"
#include "gzsq/folding.hpp"
#include "gzsq/quant.hpp"

namespace gzsq {

struct Dataset {
    Tensor samples; // N x c x h x w
    std::vector<int> labels;
    int num_classes = 0;
    std::string split; // "train" or "test"

    int64_t size() const noexcept { return samples.shape().n; }
};

enum class DatasetKind { GaussianBlobs, StripedPatterns };

const char *to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string &s);

// Synthetic images: class-specific smooth mean patterns (blobs) or oriented
// sinusoid textures with random phase (stripes), plus unit Gaussian pixel
// noise. `separation` scales the class signal against the noise.
Dataset gen_dataset(DatasetKind kind, int classes, int n_per_class, Shape3 shape, uint64_t seed,
                    const std::string &split, double separation = 3.0);

// data.bin (little-endian f32) + labels.csv + meta.json.
void save_dataset(const Dataset &d, const std::string &dir);
Dataset load_dataset(const std::string &dir);

// Rows of `samples` selected by index, in order.
Tensor gather_samples(const Tensor &samples, const std::vector<int64_t> &indices);

// Mean cross-entropy against integer labels; output shape must be
// (n, classes, 1, 1).
class CrossEntropyLoss : public LossFunction {
public:
    explicit CrossEntropyLoss(std::vector<int> labels) : labels_(std::move(labels)) {}
    double value(const Tensor &output, const ActivationTrace &trace,
                 const Tensor &input) const override;
    LossSeed seed(const Tensor &output, const ActivationTrace &trace,
                  const Tensor &input) const override;

private:
    std::vector<int> labels_;
};

// Re-estimates every BN layer's running stats from the conv outputs observed
// on the given batch; gamma/beta are untouched. momentum blends toward the
// fresh estimate (1 = replace outright).
void refresh_bn_stats(ModelGraph &model, const Tensor &batch, double momentum = 1.0);

// Adam training of weights, biases and BN affine parameters on cross-entropy.
// Models with BN alternate between running-stat refreshes (start of each
// epoch and once after the last) and gradient steps against frozen stats.
// Deterministic per seed.
ModelGraph train_tiny(const ModelGraph &model, const Dataset &train, int epochs, double lr,
                      uint64_t seed);

double eval_accuracy(const ModelGraph &model, const Dataset &d);
double eval_accuracy(const QuantizedModel &qm, const Dataset &d);

// Model builders.

// conv_layers convolutions (stride-2 in the second), global average pooling
// and a classifier head. with_bn attaches BN to each convolution.
ModelGraph make_reference_cnn(Shape3 input_shape, int classes, bool with_bn, uint64_t seed,
                              int conv_layers = 3);

// The pinned Gaussian-init fixture used by the distillation convergence
// regression: four 3x3 convolutions, no activations, N(0, 0.3) weights.
ModelGraph make_distill_fixture(uint64_t seed);

struct RandomModelOptions {
    int min_layers = 1;
    int max_layers = 5;
    bool allow_bn = true;
    bool allow_residual = true;
    bool allow_depthwise = true;
};

// Random small CNN with mixed ReLU/ReLU6/None activations, optional BN and
// residual links; weights are fan-in scaled. Always validates cleanly.
ModelGraph random_model(uint64_t seed, const RandomModelOptions &opts = {});

// Calibration-strategy comparison.

enum class CalibMethod { UnitGaussian, GzsqDistilled, ZeroqBnBaseline, RealTrainSubset };

const char *to_string(CalibMethod m);
CalibMethod calib_method_from_string(const std::string &s);

struct QuantConfig {
    int weight_bits = 8;
    Granularity weight_granularity = Granularity::PerChannel;
    Symmetry weight_symmetry = Symmetry::Symmetric;
    int act_bits = 8;
    ObserverKind observer = ObserverKind::MinMax;
    Symmetry act_symmetry = Symmetry::Affine;

    std::string label() const;
};

struct CompareOptions {
    std::vector<CalibMethod> methods;
    std::vector<QuantConfig> configs;
    int runs = 10;
    uint64_t seed = 1;
    // Each synthesized-data method runs with its own default optimizer
    // settings, as the original methods do. The seed fields are ignored;
    // each run derives its own.
    DistillConfig distill;          // the weight-statistics distillation
    DistillConfig baseline_distill; // the BN-statistics baseline (lr 0.5)
    int64_t calib_samples = 8;
    EsaPolicySet policies;

    CompareOptions() { baseline_distill.learning_rate = 0.5; }
};

struct ComparisonReport {
    struct Cell {
        std::string method;
        std::string fold_timing; // "before", "after" or "n/a"
        std::string config;
        bool skipped = false;
        std::string skip_reason;
        std::vector<double> run_accuracies;
        double mean = 0.0;
        double stddev = 0.0;
        // Observed activation ranges from the first run (input under -1).
        std::vector<std::tuple<int, double, double>> ranges;
        // (initial, final) objective per run for distillation methods.
        std::vector<std::pair<double, double>> distill_losses;
    };
    std::string model_name;
    double fp32_accuracy = 0.0;
    int runs = 0;
    uint64_t seed = 0;
    std::vector<Cell> cells;

    const Cell *find(const std::string &method, const std::string &fold_timing,
                     const std::string &config) const noexcept;
};

// Full grid evaluation: every method x config (x fold timing on BN models),
// each cell averaged over `runs` pipeline seeds against the test split.
// Incompatible method/model pairs yield skipped cells, not failures.
ComparisonReport compare_calibrations(const ModelGraph &model, const Dataset &train,
                                      const Dataset &test, const CompareOptions &options);

// BN-statistics matching objective of the comparison baseline: squared
// distance between traced conv-output stats and the recorded BN running
// stats, summed over channels and layers. `bn_source` provides the
// statistics; `target_model` is the graph the data will be distilled
// through (the same model, or its folded image).
StatMatchLoss make_bn_stats_loss(const ModelGraph &bn_source, const ModelGraph &target_model);

void save_report_json(const ComparisonReport &report, const std::string &path);
std::string report_text_table(const ComparisonReport &report);

} // namespace gzsq
