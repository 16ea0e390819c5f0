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
#include <optional>
#include <string>

#include "gzsq/graph.hpp"

namespace gzsq {

// Scalar resizing rules for reconciling a stats vector with a different
// channel count. `repeat` tiles the source cyclically from index 0; the rest
// broadcast one scalar derived from the source vector.
enum class EsaRule {
    Min,
    MeanMinusMin,
    MeanPlusMin,
    Mean,
    MaxMinusMean,
    MaxPlusMean,
    Max,
    Repeat,
};

const char *to_string(EsaRule r);
EsaRule esa_rule_from_string(const std::string &s);

// Separate rules per direction (expansion: target > source; contraction:
// target < source) and per vector (mean vs std). Total over any non-empty
// input; std outputs are clamped at 0.
struct EsaPolicy {
    EsaRule mean_expansion = EsaRule::Repeat;
    EsaRule mean_contraction = EsaRule::MeanMinusMin;
    EsaRule std_expansion = EsaRule::Repeat;
    EsaRule std_contraction = EsaRule::MeanMinusMin;

    bool operator==(const EsaPolicy &) const = default;
};

struct EsaPolicySet {
    EsaPolicy default_policy;
    std::map<int, EsaPolicy> per_layer;

    const EsaPolicy &for_layer(int layer_id) const {
        auto it = per_layer.find(layer_id);
        return it == per_layer.end() ? default_policy : it->second;
    }
};

// Ordered per-layer BN-statistic substitutes.
struct SubstituteSet {
    struct Entry {
        int layer_id = 0;
        ChannelStats stats;
    };
    std::vector<Entry> entries;

    const Entry *find(int layer_id) const noexcept;
};

// One statistics-propagation step: mean adds, variances add. fold_bias, when
// present, contributes the folded-bias term to the mean.
ChannelStats se_step(const ChannelStats &prev, const ChannelStats &w_stats,
                     const std::vector<float> *fold_bias = nullptr);

// Resizes stats to target_c channels under the policy. Identity when the
// count already matches.
ChannelStats esa_adjust(const ChannelStats &stats, int64_t target_c, const EsaPolicy &policy);

// Walks the model once, alternating adjustment and propagation: the first
// statistic-bearing layer is seeded with (0, 1); live-BN layers pin the
// substitute to (beta, |gamma|); Add combines branches mean-additively and
// std in quadrature; pooling passes through; flatten resizes via the policy.
// With folded_before set, the model must be BN-free and conv biases marked
// bias_from_fold feed the refined-mean term.
SubstituteSet estimate_substitutes(const ModelGraph &model, const EsaPolicySet &policies,
                                   bool folded_before);

// JSON document (layer id -> mean[], std[]), format "gzsq-subs/1".
void save_substitutes(const SubstituteSet &subs, const std::string &path);
SubstituteSet load_substitutes(const std::string &path);

} // namespace gzsq
