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
#include "gzsq/graph.hpp"

#include <cmath>
#include <map>
#include <string>

namespace gzsq {

const char *to_string(LayerKind k) {
    switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::DepthwiseConv2d: return "depthwise_conv2d";
    case LayerKind::FullyConnected: return "fully_connected";
    case LayerKind::Add: return "add";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

const char *to_string(Activation a) {
    switch (a) {
    case Activation::None: return "none";
    case Activation::ReLU: return "relu";
    case Activation::ReLU6: return "relu6";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string &s) {
    if (s == "conv2d") return LayerKind::Conv2d;
    if (s == "depthwise_conv2d") return LayerKind::DepthwiseConv2d;
    if (s == "fully_connected") return LayerKind::FullyConnected;
    if (s == "add") return LayerKind::Add;
    if (s == "global_avg_pool") return LayerKind::GlobalAvgPool;
    if (s == "flatten") return LayerKind::Flatten;
    throw parse_error("unknown layer kind: " + s);
}

Activation activation_from_string(const std::string &s) {
    if (s == "none") return Activation::None;
    if (s == "relu") return Activation::ReLU;
    if (s == "relu6") return Activation::ReLU6;
    throw parse_error("unknown activation: " + s);
}

bool ModelGraph::has_bn() const noexcept {
    for (const auto &l : layers)
        if (l.bn)
            return true;
    return false;
}

const LayerSpec *ModelGraph::layer_by_id(int id) const noexcept {
    for (const auto &l : layers)
        if (l.id == id)
            return &l;
    return nullptr;
}

const ActivationTrace::Entry *ActivationTrace::find(int layer_id) const noexcept {
    for (const auto &e : entries)
        if (e.layer_id == layer_id)
            return &e;
    return nullptr;
}

namespace {

int64_t conv_out_extent(int64_t in, int64_t k, int stride, int padding) {
    return (in + 2 * padding - k) / stride + 1;
}

Shape3 layer_output_shape(const LayerSpec &l, const Shape3 &in,
                          const std::map<int, Shape3> &by_id) {
    switch (l.kind) {
    case LayerKind::Conv2d: {
        const auto &w = *l.weights;
        if (w.i != in.c)
            throw invalid_argument_error("layer " + std::to_string(l.id) +
                                         ": conv2d in-channels mismatch");
        const int64_t oh = conv_out_extent(in.h, w.kh, l.stride, l.padding);
        const int64_t ow = conv_out_extent(in.w, w.kw, l.stride, l.padding);
        if (oh < 1 || ow < 1)
            throw invalid_argument_error("layer " + std::to_string(l.id) +
                                         ": conv output collapses to zero extent");
        return {w.o, oh, ow};
    }
    case LayerKind::DepthwiseConv2d: {
        const auto &w = *l.weights;
        if (w.i != 1 || w.o != in.c)
            throw invalid_argument_error("layer " + std::to_string(l.id) +
                                         ": depthwise conv channel mismatch");
        const int64_t oh = conv_out_extent(in.h, w.kh, l.stride, l.padding);
        const int64_t ow = conv_out_extent(in.w, w.kw, l.stride, l.padding);
        if (oh < 1 || ow < 1)
            throw invalid_argument_error("layer " + std::to_string(l.id) +
                                         ": conv output collapses to zero extent");
        return {w.o, oh, ow};
    }
    case LayerKind::FullyConnected: {
        const auto &w = *l.weights;
        if (w.kh != 1 || w.kw != 1)
            throw invalid_argument_error("layer " + std::to_string(l.id) +
                                         ": fully-connected weights must be o x i x 1 x 1");
        if (in.h != 1 || in.w != 1 || w.i != in.c)
            throw invalid_argument_error("layer " + std::to_string(l.id) +
                                         ": fully-connected input must be (i,1,1)");
        return {w.o, 1, 1};
    }
    case LayerKind::Add: {
        auto it = by_id.find(l.residual_source);
        if (it == by_id.end())
            throw invalid_argument_error("layer " + std::to_string(l.id) +
                                         ": add references unknown earlier layer " +
                                         std::to_string(l.residual_source));
        if (!(it->second == in))
            throw invalid_argument_error("layer " + std::to_string(l.id) +
                                         ": add branch shapes differ");
        return in;
    }
    case LayerKind::GlobalAvgPool:
        return {in.c, 1, 1};
    case LayerKind::Flatten:
        return {in.c * in.h * in.w, 1, 1};
    }
    throw invalid_argument_error("unreachable layer kind");
}

} // namespace

std::vector<Shape3> layer_output_shapes(const ModelGraph &model) {
    std::vector<Shape3> shapes;
    shapes.reserve(model.layers.size());
    std::map<int, Shape3> by_id;
    Shape3 cur = model.input_shape;
    for (const auto &l : model.layers) {
        cur = layer_output_shape(l, cur, by_id);
        by_id[l.id] = cur;
        shapes.push_back(cur);
    }
    return shapes;
}

BNAffine bn_affine(const BNParams &bn) {
    BNAffine a;
    a.scale.resize(bn.size());
    a.shift.resize(bn.size());
    for (size_t k = 0; k < bn.size(); ++k) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(bn.running_std[k]) * bn.running_std[k] +
                                           static_cast<double>(bn.epsilon));
        a.scale[k] = bn.gamma[k] * inv;
        a.shift[k] = bn.beta[k] - a.scale[k] * bn.running_mean[k];
    }
    return a;
}

namespace {

void apply_bn_inplace(Tensor &t, const BNParams &bn) {
    const Shape4 &s = t.shape();
    const int64_t plane = s.h * s.w;
    const BNAffine a = bn_affine(bn);
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            const size_t k = static_cast<size_t>(c);
            float *p = t.data().data() + (n * s.c + c) * plane;
            for (int64_t j = 0; j < plane; ++j)
                p[j] = static_cast<float>(a.scale[k] * p[j] + a.shift[k]);
        }
    }
}

void apply_activation_inplace(Tensor &t, Activation a) {
    switch (a) {
    case Activation::None:
        return;
    case Activation::ReLU:
        for (float &v : t.data())
            v = v > 0.0f ? v : 0.0f;
        return;
    case Activation::ReLU6:
        for (float &v : t.data()) {
            if (v < 0.0f)
                v = 0.0f;
            else if (v > 6.0f)
                v = 6.0f;
        }
        return;
    }
}

} // namespace

// Direct NCHW convolution with zero padding; accumulation in double keeps the
// reduction order-independent enough to compare against naive oracles.
Tensor conv2d_direct(const Tensor &x, const WeightTensor &w, const std::vector<float> *bias,
                     int stride, int padding, bool depthwise) {
    const Shape4 &s = x.shape();
    const int64_t oh = conv_out_extent(s.h, w.kh, stride, padding);
    const int64_t ow = conv_out_extent(s.w, w.kw, stride, padding);
    Tensor out({s.n, w.o, oh, ow});
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t oc = 0; oc < w.o; ++oc) {
            const double b = bias ? (*bias)[static_cast<size_t>(oc)] : 0.0;
            for (int64_t y = 0; y < oh; ++y) {
                for (int64_t x0 = 0; x0 < ow; ++x0) {
                    double acc = b;
                    const int64_t ci_begin = depthwise ? oc : 0;
                    const int64_t ci_count = depthwise ? 1 : w.i;
                    for (int64_t ci = 0; ci < ci_count; ++ci) {
                        const int64_t ic = ci_begin + ci;
                        for (int64_t ky = 0; ky < w.kh; ++ky) {
                            const int64_t iy = y * stride + ky - padding;
                            if (iy < 0 || iy >= s.h)
                                continue;
                            for (int64_t kx = 0; kx < w.kw; ++kx) {
                                const int64_t ix = x0 * stride + kx - padding;
                                if (ix < 0 || ix >= s.w)
                                    continue;
                                acc += static_cast<double>(x.at(n, ic, iy, ix)) *
                                       static_cast<double>(w.at(oc, ci, ky, kx));
                            }
                        }
                    }
                    out.at(n, oc, y, x0) = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

Tensor layer_eval(const LayerSpec &l, const Tensor &input, const Tensor *residual,
                  Tensor *conv_out) {
    Tensor z;
    switch (l.kind) {
    case LayerKind::Conv2d:
        z = conv2d_direct(input, *l.weights, l.bias ? &*l.bias : nullptr, l.stride, l.padding, false);
        break;
    case LayerKind::DepthwiseConv2d:
        z = conv2d_direct(input, *l.weights, l.bias ? &*l.bias : nullptr, l.stride, l.padding, true);
        break;
    case LayerKind::FullyConnected:
        z = conv2d_direct(input, *l.weights, l.bias ? &*l.bias : nullptr, 1, 0, false);
        break;
    case LayerKind::Add: {
        z = input;
        const Shape4 &s = z.shape();
        if (!(residual->shape() == s))
            throw invalid_argument_error("layer " + std::to_string(l.id) + ": add shape mismatch");
        auto a = z.data();
        auto b = residual->data();
        for (int64_t j = 0; j < z.numel(); ++j)
            a[j] += b[j];
        break;
    }
    case LayerKind::GlobalAvgPool: {
        const Shape4 &s = input.shape();
        z = Tensor({s.n, s.c, 1, 1});
        const int64_t plane = s.h * s.w;
        for (int64_t n = 0; n < s.n; ++n) {
            for (int64_t c = 0; c < s.c; ++c) {
                double acc = 0.0;
                const float *p = input.data().data() + (n * s.c + c) * plane;
                for (int64_t j = 0; j < plane; ++j)
                    acc += p[j];
                z.at(n, c, 0, 0) = static_cast<float>(acc / static_cast<double>(plane));
            }
        }
        break;
    }
    case LayerKind::Flatten: {
        const Shape4 &s = input.shape();
        z = Tensor({s.n, s.c * s.h * s.w, 1, 1}, std::vector<float>(input.data().begin(), input.data().end()));
        break;
    }
    }
    if (conv_out && l.is_conv_like())
        *conv_out = z;
    if (l.bn)
        apply_bn_inplace(z, *l.bn);
    apply_activation_inplace(z, l.activation);
    return z;
}

ForwardResult forward(const ModelGraph &model, const Tensor &input, TraceMode mode) {
    const Shape4 &s = input.shape();
    if (s.c != model.input_shape.c || s.h != model.input_shape.h || s.w != model.input_shape.w)
        throw invalid_argument_error("forward: input shape does not match model input shape");
    if (s.n < 1)
        throw invalid_argument_error("forward: empty batch");

    ForwardResult result;
    if (mode != TraceMode::None)
        result.trace.emplace();

    // Outputs of layers referenced later by Add must stay alive.
    std::map<int, Tensor> kept;
    std::map<int, int> keep_refcount;
    for (const auto &l : model.layers)
        if (l.kind == LayerKind::Add)
            keep_refcount[l.residual_source] += 1;

    Tensor cur = input;
    for (const auto &l : model.layers) {
        const Tensor *residual = nullptr;
        if (l.kind == LayerKind::Add) {
            auto it = kept.find(l.residual_source);
            if (it == kept.end())
                throw invalid_argument_error("layer " + std::to_string(l.id) +
                                             ": add references unavailable layer " +
                                             std::to_string(l.residual_source));
            residual = &it->second;
        }
        Tensor conv_out;
        const bool want_conv = mode == TraceMode::Full && l.is_conv_like();
        Tensor next = layer_eval(l, cur, residual, want_conv ? &conv_out : nullptr);
        if (!next.all_finite())
            throw numeric_fault("forward: non-finite value at layer " + std::to_string(l.id));
        if (result.trace) {
            ActivationTrace::Entry e;
            e.layer_id = l.id;
            e.post_activation = next;
            if (want_conv)
                e.conv_out = std::move(conv_out);
            result.trace->entries.push_back(std::move(e));
        }
        if (keep_refcount.count(l.id))
            kept[l.id] = next;
        cur = std::move(next);
    }
    result.output = std::move(cur);
    return result;
}

std::vector<std::string> validate_graph(const ModelGraph &model) {
    std::vector<std::string> diags;
    auto complain = [&](int id, const std::string &msg) {
        diags.push_back("layer " + std::to_string(id) + ": " + msg);
    };

    if (model.input_shape.c < 1 || model.input_shape.h < 1 || model.input_shape.w < 1)
        diags.push_back("model: input shape must be positive in all dims");

    std::map<int, size_t> position;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const auto &l = model.layers[i];
        if (position.count(l.id))
            complain(l.id, "duplicate layer id");
        position[l.id] = i;

        if (l.is_conv_like()) {
            if (!l.weights)
                complain(l.id, "conv-like layer carries no weights");
            else {
                if (static_cast<int64_t>(l.weights->data.size()) != l.weights->numel())
                    complain(l.id, "weight data length does not match o*i*kh*kw");
                if (l.bias && static_cast<int64_t>(l.bias->size()) != l.weights->o)
                    complain(l.id, "bias length does not equal out-channel count");
            }
            if (l.stride < 1)
                complain(l.id, "stride must be >= 1");
            if (l.padding < 0)
                complain(l.id, "padding must be >= 0");
        } else {
            if (l.weights)
                complain(l.id, "non-conv layer must not carry weights");
            if (l.bias)
                complain(l.id, "non-conv layer must not carry bias");
            if (l.bn)
                complain(l.id, "batch norm is only supported on conv-like layers");
        }
        if (l.bn && l.is_conv_like() && l.weights) {
            const size_t c = static_cast<size_t>(l.weights->o);
            if (l.bn->gamma.size() != c || l.bn->beta.size() != c ||
                l.bn->running_mean.size() != c || l.bn->running_std.size() != c)
                complain(l.id, "bn vector lengths must equal out-channel count");
            if (l.bn->epsilon < 0.0f)
                complain(l.id, "bn epsilon must be >= 0");
            for (size_t k = 0; k < l.bn->running_std.size(); ++k) {
                if (l.bn->running_std[k] < 0.0f) {
                    complain(l.id, "bn running_std must be >= 0");
                    break;
                }
                if (static_cast<double>(l.bn->running_std[k]) * l.bn->running_std[k] + l.bn->epsilon <= 0.0) {
                    complain(l.id, "bn running_std^2 + epsilon must be positive");
                    break;
                }
            }
        }
        if (l.kind == LayerKind::Add) {
            auto it = position.find(l.residual_source);
            if (l.residual_source == l.id || it == position.end())
                complain(l.id, "add must reference an earlier layer");
        }
    }

    if (diags.empty()) {
        try {
            layer_output_shapes(model);
        } catch (const invalid_argument_error &e) {
            diags.push_back(e.what());
        }
    }
    return diags;
}

} // namespace gzsq
