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

#include "gzsq/autodiff.hpp"
#include "gzsq/calib.hpp"

namespace gzsq {

enum class LossKind {
    Zscore,
    L1,
    L1MeanOnly,
    L1StdOnly,
    L2,
    L2MeanOnly,
    L2StdOnly,
    KLStdOnly,
};

const char *to_string(LossKind k);
LossKind loss_kind_from_string(const std::string &s);

// Z-score distance between two stat vectors, averaged over channels:
// mean_k |mu_u - mu_v| / sqrt((sigma_u+s)^2 + (sigma_v+s)^2).
double zscore_loss(const ChannelStats &u, const ChannelStats &v, double s);

// Differentiable sum of per-layer statistics-matching terms. Each term
// compares the tapped tensor's channel stats against a fixed target under the
// selected distance. With average_channels the per-channel values are
// averaged (the distillation convention); without it they are summed (the
// BN-statistics matching baseline). input_prior adds a term pulling the
// model input's channel stats toward (0, 1).
class StatMatchLoss : public LossFunction {
public:
    struct Term {
        int layer_id = 0;
        TapPoint tap = TapPoint::PostActivation;
        ChannelStats target;
    };

    StatMatchLoss(std::vector<Term> terms, LossKind kind, double s, bool average_channels,
                  bool input_prior);

    double value(const Tensor &output, const ActivationTrace &trace,
                 const Tensor &input) const override;
    LossSeed seed(const Tensor &output, const ActivationTrace &trace,
                  const Tensor &input) const override;

    // Per-term values in term order, the input-prior term last when enabled.
    std::vector<double> term_values(const ActivationTrace &trace, const Tensor &input) const;

    const std::vector<Term> &terms() const noexcept { return terms_; }
    bool has_input_prior() const noexcept { return input_prior_; }

private:
    std::vector<Term> terms_;
    LossKind kind_;
    double s_;
    bool average_channels_;
    bool input_prior_;
};

// Builds the distillation objective from a substitute set: one term per
// substitute entry tapping the post-activation output, plus the input prior.
StatMatchLoss make_distill_loss(const ModelGraph &model, const SubstituteSet &subs, LossKind kind,
                                double s);

// Convenience evaluation of the distillation objective at a given input.
double distill_loss(const ModelGraph &model, const Tensor &y, const SubstituteSet &subs,
                    LossKind kind, double s);

struct DistillConfig {
    int iterations = 500;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int64_t batch = 8;
    uint64_t seed = 0;
    double s = 1e-6;
    LossKind loss_kind = LossKind::Zscore;

    void validate() const;
};

struct DistilledData {
    Tensor data; // batch x input shape, the best-so-far iterate
    std::vector<double> loss_history; // loss at each iterate before its update
    std::vector<std::pair<int, double>> final_layer_losses; // per layer id, at the returned iterate
    double final_input_prior = 0.0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Synthesizes calibration data: y starts as seeded N(0,1) and is refined by
// Adam against the distillation objective for exactly config.iterations
// steps. Returns the iterate with the lowest recorded loss.
DistilledData distill(const ModelGraph &model, const SubstituteSet &subs,
                      const DistillConfig &config);

// The Adam-over-input loop behind distill, usable with any objective (the
// BN-statistics matching baseline rides on this). loss_kind in config is
// ignored; the provided loss defines the objective.
DistilledData optimize_input(const ModelGraph &model, const LossFunction &loss,
                             const DistillConfig &config);

// Raw f32 blob plus JSON sidecar, format "gzsq-distill/1".
void save_distilled(const DistilledData &d, const DistillConfig &config, const std::string &dir);
DistilledData load_distilled(const std::string &dir);

} // namespace gzsq
