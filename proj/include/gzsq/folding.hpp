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

#include "gzsq/graph.hpp"

namespace gzsq {

struct FoldReport {
    struct Layer {
        int layer_id = 0;
        bool folded = false;
        // max |folded - unfolded| / (1 + |unfolded|) over this layer's output
        // on the sampled inputs.
        float max_rel_deviation = 0.0f;
    };
    std::vector<Layer> layers;
};

struct FoldResult {
    ModelGraph model;
    FoldReport report;
};

// Absorbs every BN into the preceding convolution: weights scaled per
// out-channel by gamma/sqrt(std^2+eps), bias replaced by the BN affine image
// of the existing bias. The folded model carries bias_from_fold on layers it
// touched and contains no BNParams. Function-preserving within float
// round-off; the report samples random inputs to record the deviation.
FoldResult fold_bn(const ModelGraph &model);

} // namespace gzsq
