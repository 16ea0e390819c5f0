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
#include "gzsq/autodiff.hpp"

#include <cmath>
#include <map>
#include <set>

namespace gzsq {

Tape record_tape(const ModelGraph &model, const Tensor &input, const LossFunction &loss) {
    Tape tape;
    tape.input = input;
    ForwardResult fwd = forward(model, input, TraceMode::Full);
    tape.trace = std::move(*fwd.trace);
    tape.output = std::move(fwd.output);
    tape.loss = loss.value(tape.output, tape.trace, tape.input);
    if (!std::isfinite(tape.loss))
        throw numeric_fault("loss evaluated to a non-finite value");
    return tape;
}

namespace {

// Activation derivative masks follow from the recorded post-activation value:
// ReLU passes where f > 0, ReLU6 where 0 < f < 6. Kink points (f == 0 or
// f == 6) take subgradient 0.
void apply_activation_backward(std::vector<double> &g, const Tensor &post, Activation a) {
    if (a == Activation::None)
        return;
    auto f = post.data();
    if (a == Activation::ReLU) {
        for (size_t j = 0; j < g.size(); ++j)
            if (!(f[j] > 0.0f))
                g[j] = 0.0;
    } else {
        for (size_t j = 0; j < g.size(); ++j)
            if (!(f[j] > 0.0f && f[j] < 6.0f))
                g[j] = 0.0;
    }
}

void accumulate(std::vector<double> &dst, const std::vector<double> &src) {
    if (src.empty())
        return;
    if (dst.empty())
        dst.assign(src.size(), 0.0);
    for (size_t j = 0; j < src.size(); ++j)
        dst[j] += src[j];
}

struct ConvBackwardResult {
    std::vector<double> d_input;
    std::vector<double> d_weights;
    std::vector<double> d_bias;
};

ConvBackwardResult conv2d_backward(const Tensor &x, const WeightTensor &w,
                                   const std::vector<double> &g_out, const Shape4 &out_shape,
                                   int stride, int padding, bool depthwise, bool want_params) {
    ConvBackwardResult r;
    const Shape4 &s = x.shape();
    r.d_input.assign(static_cast<size_t>(s.numel()), 0.0);
    if (want_params) {
        r.d_weights.assign(static_cast<size_t>(w.numel()), 0.0);
        r.d_bias.assign(static_cast<size_t>(w.o), 0.0);
    }
    const int64_t oh = out_shape.h;
    const int64_t ow = out_shape.w;
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t oc = 0; oc < w.o; ++oc) {
            for (int64_t y = 0; y < oh; ++y) {
                for (int64_t x0 = 0; x0 < ow; ++x0) {
                    const double g = g_out[static_cast<size_t>(((n * w.o + oc) * oh + y) * ow + x0)];
                    if (g == 0.0)
                        continue;
                    if (want_params)
                        r.d_bias[static_cast<size_t>(oc)] += g;
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
                                const size_t in_idx =
                                    static_cast<size_t>(((n * s.c + ic) * s.h + iy) * s.w + ix);
                                const size_t w_idx = static_cast<size_t>(
                                    ((oc * w.i + (depthwise ? 0 : ci)) * w.kh + ky) * w.kw + kx);
                                r.d_input[in_idx] += g * w.data[w_idx];
                                if (want_params)
                                    r.d_weights[w_idx] += g * x.at(n, ic, iy, ix);
                            }
                        }
                    }
                }
            }
        }
    }
    return r;
}

std::vector<float> to_float(const std::vector<double> &v) {
    std::vector<float> out(v.size());
    for (size_t j = 0; j < v.size(); ++j)
        out[j] = static_cast<float>(v[j]);
    return out;
}

void check_finite(const std::vector<double> &v, int layer_id) {
    for (double x : v)
        if (!std::isfinite(x))
            throw numeric_fault("backward: non-finite adjoint at layer " + std::to_string(layer_id));
}

} // namespace

Gradients backward(const ModelGraph &model, const Tensor &input, const LossFunction &loss,
                   bool weight_grads) {
    const Tape tape = record_tape(model, input, loss);
    const LossSeed seed = loss.seed(tape.output, tape.trace, tape.input);
    const size_t n_layers = model.layers.size();
    const auto &entries = tape.trace.entries;

    // Adjoints of each layer's post-activation output, accumulated in double.
    std::vector<std::vector<double>> g_post(n_layers);
    std::map<int, size_t> index_of;
    for (size_t i = 0; i < n_layers; ++i)
        index_of[model.layers[i].id] = i;

    // Pending ConvOut injections, applied once the reverse pass reaches the
    // layer (after its activation/BN adjoints are unwound).
    std::map<size_t, std::vector<double>> conv_injections;
    for (const auto &inj : seed.injections) {
        auto it = index_of.find(inj.layer_id);
        if (it == index_of.end())
            throw invalid_argument_error("loss injects adjoint at unknown layer " +
                                         std::to_string(inj.layer_id));
        if (inj.tap == TapPoint::PostActivation)
            accumulate(g_post[it->second], inj.adjoint);
        else
            accumulate(conv_injections[it->second], inj.adjoint);
    }
    if (!seed.d_output.empty())
        accumulate(g_post[n_layers - 1], seed.d_output);

    Gradients grads;
    grads.loss = tape.loss;
    if (weight_grads)
        grads.d_layers.resize(n_layers);
    std::vector<double> d_input(static_cast<size_t>(input.numel()), 0.0);
    if (!seed.d_input.empty())
        accumulate(d_input, seed.d_input);

    for (size_t i = n_layers; i-- > 0;) {
        const LayerSpec &l = model.layers[i];
        const Tensor &layer_input = i == 0 ? input : entries[i - 1].post_activation;
        std::vector<double> g = std::move(g_post[i]);
        const size_t out_numel = static_cast<size_t>(entries[i].post_activation.numel());
        const bool has_conv_inject = conv_injections.count(i) > 0;
        if (g.empty() && !has_conv_inject)
            continue; // no adjoint reaches this layer
        if (g.empty())
            g.assign(out_numel, 0.0);

        apply_activation_backward(g, entries[i].post_activation, l.activation);

        switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::DepthwiseConv2d:
        case LayerKind::FullyConnected: {
            if (l.bn) {
                const Tensor &z = *entries[i].conv_out;
                const BNAffine aff = bn_affine(*l.bn);
                const Shape4 &os = z.shape();
                const int64_t plane = os.h * os.w;
                std::vector<double> d_gamma, d_beta;
                if (weight_grads) {
                    d_gamma.assign(l.bn->size(), 0.0);
                    d_beta.assign(l.bn->size(), 0.0);
                }
                for (int64_t n = 0; n < os.n; ++n) {
                    for (int64_t c = 0; c < os.c; ++c) {
                        const size_t k = static_cast<size_t>(c);
                        const double inv_std =
                            1.0 / std::sqrt(static_cast<double>(l.bn->running_std[k]) *
                                                l.bn->running_std[k] +
                                            static_cast<double>(l.bn->epsilon));
                        double *gp = g.data() + (n * os.c + c) * plane;
                        const float *zp = z.data().data() + (n * os.c + c) * plane;
                        for (int64_t j = 0; j < plane; ++j) {
                            if (weight_grads) {
                                const double xhat = (zp[j] - l.bn->running_mean[k]) * inv_std;
                                d_gamma[k] += gp[j] * xhat;
                                d_beta[k] += gp[j];
                            }
                            gp[j] *= aff.scale[k];
                        }
                    }
                }
                if (weight_grads) {
                    grads.d_layers[i].d_gamma = to_float(d_gamma);
                    grads.d_layers[i].d_beta = to_float(d_beta);
                }
            }
            if (has_conv_inject)
                accumulate(g, conv_injections[i]);
            const Shape4 out_shape = entries[i].post_activation.shape();
            const bool depthwise = l.kind == LayerKind::DepthwiseConv2d;
            const int stride = l.kind == LayerKind::FullyConnected ? 1 : l.stride;
            const int padding = l.kind == LayerKind::FullyConnected ? 0 : l.padding;
            ConvBackwardResult r = conv2d_backward(layer_input, *l.weights, g, out_shape, stride,
                                                   padding, depthwise, weight_grads);
            if (weight_grads) {
                WeightTensor dw;
                dw.o = l.weights->o;
                dw.i = l.weights->i;
                dw.kh = l.weights->kh;
                dw.kw = l.weights->kw;
                dw.data = to_float(r.d_weights);
                grads.d_layers[i].d_weights = std::move(dw);
                if (l.bias)
                    grads.d_layers[i].d_bias = to_float(r.d_bias);
            }
            check_finite(r.d_input, l.id);
            if (i == 0)
                accumulate(d_input, r.d_input);
            else
                accumulate(g_post[i - 1], r.d_input);
            break;
        }
        case LayerKind::Add: {
            const size_t src = index_of.at(l.residual_source);
            accumulate(g_post[src], g);
            if (i == 0)
                throw invalid_argument_error("add cannot be the first layer");
            accumulate(g_post[i - 1], g);
            break;
        }
        case LayerKind::GlobalAvgPool: {
            const Shape4 &is = layer_input.shape();
            const int64_t plane = is.h * is.w;
            std::vector<double> gi(static_cast<size_t>(is.numel()), 0.0);
            for (int64_t n = 0; n < is.n; ++n)
                for (int64_t c = 0; c < is.c; ++c) {
                    const double v = g[static_cast<size_t>(n * is.c + c)] / static_cast<double>(plane);
                    double *p = gi.data() + (n * is.c + c) * plane;
                    for (int64_t j = 0; j < plane; ++j)
                        p[j] = v;
                }
            if (i == 0)
                accumulate(d_input, gi);
            else
                accumulate(g_post[i - 1], gi);
            break;
        }
        case LayerKind::Flatten: {
            // Pure reshape: adjoint flows through unchanged.
            if (i == 0)
                accumulate(d_input, g);
            else
                accumulate(g_post[i - 1], g);
            break;
        }
        }
    }

    check_finite(d_input, model.layers.empty() ? -1 : model.layers.front().id);
    grads.d_input = Tensor(input.shape(), to_float(d_input));
    return grads;
}

double finite_diff_check(const ModelGraph &model, const Tensor &input, const LossFunction &loss,
                         double epsilon, int64_t sample_coords, uint64_t seed) {
    if (!(epsilon > 0.0))
        throw invalid_argument_error("finite_diff_check: epsilon must be > 0");
    const Gradients grads = backward(model, input, loss, false);

    const int64_t total = input.numel();
    std::set<int64_t> coords;
    if (total <= sample_coords) {
        for (int64_t j = 0; j < total; ++j)
            coords.insert(j);
    } else {
        RngState rng(seed);
        while (static_cast<int64_t>(coords.size()) < sample_coords)
            coords.insert(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total))));
    }

    auto loss_at = [&](const Tensor &x) {
        const ForwardResult fwd = forward(model, x, TraceMode::Full);
        return loss.value(fwd.output, *fwd.trace, x);
    };

    double max_rel = 0.0;
    Tensor probe = input;
    for (int64_t j : coords) {
        const float saved = probe.data()[static_cast<size_t>(j)];
        probe.data()[static_cast<size_t>(j)] = static_cast<float>(saved + epsilon);
        const double up = loss_at(probe);
        probe.data()[static_cast<size_t>(j)] = static_cast<float>(saved - epsilon);
        const double down = loss_at(probe);
        probe.data()[static_cast<size_t>(j)] = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double analytic = grads.d_input.data()[static_cast<size_t>(j)];
        const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
        if (rel > max_rel)
            max_rel = rel;
    }
    return max_rel;
}

} // namespace gzsq
