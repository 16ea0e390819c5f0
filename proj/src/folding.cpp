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
#include "gzsq/folding.hpp"

#include <cmath>

namespace gzsq {

FoldResult fold_bn(const ModelGraph &model) {
    FoldResult result;
    result.model = model;
    bool any_folded = false;

    for (auto &l : result.model.layers) {
        FoldReport::Layer rl;
        rl.layer_id = l.id;
        if (l.bn) {
            if (!l.is_conv_like() || !l.weights)
                throw invalid_argument_error("fold_bn: layer " + std::to_string(l.id) +
                                             " carries BN but is not conv-like");
            const BNAffine aff = bn_affine(*l.bn);
            WeightTensor &w = *l.weights;
            const int64_t per_channel = w.i * w.kh * w.kw;
            for (int64_t oc = 0; oc < w.o; ++oc) {
                const double scale = aff.scale[static_cast<size_t>(oc)];
                float *p = w.data.data() + oc * per_channel;
                for (int64_t j = 0; j < per_channel; ++j)
                    p[j] = static_cast<float>(scale * p[j]);
            }
            std::vector<float> b_fold(static_cast<size_t>(w.o));
            for (int64_t oc = 0; oc < w.o; ++oc) {
                const size_t k = static_cast<size_t>(oc);
                const double b = l.bias ? (*l.bias)[k] : 0.0;
                b_fold[k] = static_cast<float>(aff.scale[k] * b + aff.shift[k]);
            }
            l.bias = std::move(b_fold);
            l.bias_from_fold = true;
            l.bn.reset();
            rl.folded = true;
            any_folded = true;
        }
        result.report.layers.push_back(rl);
    }

    if (any_folded) {
        // Sample a few random inputs and record the per-layer deviation
        // between folded and unfolded forward passes.
        RngState rng(0x666f6c64ULL); // "fold"
        const Shape4 shape{2, model.input_shape.c, model.input_shape.h, model.input_shape.w};
        for (int trial = 0; trial < 4; ++trial) {
            const Tensor x = gaussian_tensor(shape, 0.0, 1.0, rng);
            const ForwardResult ref = forward(model, x, TraceMode::Post);
            const ForwardResult got = forward(result.model, x, TraceMode::Post);
            for (size_t i = 0; i < result.report.layers.size(); ++i) {
                const auto a = got.trace->entries[i].post_activation.data();
                const auto b = ref.trace->entries[i].post_activation.data();
                float dev = result.report.layers[i].max_rel_deviation;
                for (size_t j = 0; j < a.size(); ++j) {
                    const float d = std::abs(a[j] - b[j]) / (1.0f + std::abs(b[j]));
                    if (d > dev)
                        dev = d;
                }
                result.report.layers[i].max_rel_deviation = dev;
            }
        }
    }
    return result;
}

} // namespace gzsq
