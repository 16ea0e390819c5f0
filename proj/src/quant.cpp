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
#include "gzsq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gzsq {

const char *to_string(Granularity g) {
    return g == Granularity::PerTensor ? "per-tensor" : "per-channel";
}

const char *to_string(Symmetry s) { return s == Symmetry::Symmetric ? "symmetric" : "affine"; }

Granularity granularity_from_string(const std::string &s) {
    if (s == "per-tensor") return Granularity::PerTensor;
    if (s == "per-channel") return Granularity::PerChannel;
    throw parse_error("unknown granularity: " + s);
}

Symmetry symmetry_from_string(const std::string &s) {
    if (s == "symmetric") return Symmetry::Symmetric;
    if (s == "affine") return Symmetry::Affine;
    throw parse_error("unknown symmetry: " + s);
}

const char *to_string(ObserverKind k) {
    switch (k) {
    case ObserverKind::MinMax: return "minmax";
    case ObserverKind::PerChannelMinMax: return "per-channel-minmax";
    case ObserverKind::Histogram: return "histogram";
    }
    return "?";
}

ObserverKind observer_kind_from_string(const std::string &s) {
    if (s == "minmax") return ObserverKind::MinMax;
    if (s == "per-channel-minmax") return ObserverKind::PerChannelMinMax;
    if (s == "histogram") return ObserverKind::Histogram;
    throw parse_error("unknown observer kind: " + s);
}

namespace {

double round_half_away(double x) { return std::round(x); }

void check_bits(int bits) {
    if (bits < 2 || bits > 8)
        throw invalid_argument_error("quantization bits must be in [2, 8]");
}

// One (scale, zero_point) pair for a closed range.
void qparams_for_range(double rmin, double rmax, int bits, Symmetry sym, double &scale,
                       double &zero_point) {
    if (rmax < rmin)
        throw invalid_argument_error("compute_qparams: max < min");
    if (rmax == rmin) {
        rmin -= 0.5;
        rmax += 0.5;
    }
    if (sym == Symmetry::Affine) {
        const double n = static_cast<double>((int64_t(1) << bits) - 1);
        scale = n / (rmax - rmin);
        zero_point = round_half_away(-scale * rmin);
    } else {
        double amax = std::max(std::abs(rmin), std::abs(rmax));
        if (amax == 0.0)
            amax = 0.5;
        scale = static_cast<double>((int64_t(1) << (bits - 1)) - 1) / amax;
        zero_point = 0.0;
    }
}

} // namespace

QuantParams compute_qparams(double range_min, double range_max, int bits, Symmetry symmetry) {
    check_bits(bits);
    QuantParams p;
    p.bits = bits;
    p.granularity = Granularity::PerTensor;
    p.symmetry = symmetry;
    p.scale.resize(1);
    p.zero_point.resize(1);
    qparams_for_range(range_min, range_max, bits, symmetry, p.scale[0], p.zero_point[0]);
    return p;
}

QuantParams identity_qparams() {
    QuantParams p;
    p.bits = 32;
    p.granularity = Granularity::PerTensor;
    p.symmetry = Symmetry::Affine;
    p.scale = {1.0};
    p.zero_point = {0.0};
    return p;
}

namespace {

void check_channel_params(const Tensor &x, const QuantParams &p) {
    if (p.scale.empty() || p.scale.size() != p.zero_point.size())
        throw invalid_argument_error("quantize: malformed params");
    if (p.granularity == Granularity::PerChannel &&
        static_cast<int64_t>(p.scale.size()) != x.shape().c)
        throw invalid_argument_error("quantize: per-channel params do not match channel count");
}

} // namespace

QuantizedTensor quantize(const Tensor &x, const QuantParams &p) {
    if (p.identity())
        throw invalid_argument_error("quantize: identity params have no integer grid");
    check_channel_params(x, p);
    QuantizedTensor q;
    q.shape = x.shape();
    q.values.resize(static_cast<size_t>(x.numel()));
    const Shape4 &s = x.shape();
    const int64_t plane = s.h * s.w;
    const double lo = static_cast<double>(p.qmin());
    const double hi = static_cast<double>(p.qmax());
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            const size_t k = p.granularity == Granularity::PerChannel ? static_cast<size_t>(c) : 0;
            const double scale = p.scale[k];
            const double zp = p.zero_point[k];
            const float *in = x.data().data() + (n * s.c + c) * plane;
            int32_t *out = q.values.data() + (n * s.c + c) * plane;
            for (int64_t j = 0; j < plane; ++j) {
                const double v = round_half_away(in[j] * scale) + zp;
                out[j] = static_cast<int32_t>(std::clamp(v, lo, hi));
            }
        }
    }
    return q;
}

Tensor dequantize(const QuantizedTensor &q, const QuantParams &p) {
    if (p.identity())
        throw invalid_argument_error("dequantize: identity params have no integer grid");
    Tensor x(q.shape);
    const Shape4 &s = q.shape;
    const int64_t plane = s.h * s.w;
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            const size_t k = p.granularity == Granularity::PerChannel ? static_cast<size_t>(c) : 0;
            const double inv = 1.0 / p.scale[k];
            const double zp = p.zero_point[k];
            const int32_t *in = q.values.data() + (n * s.c + c) * plane;
            float *out = x.data().data() + (n * s.c + c) * plane;
            for (int64_t j = 0; j < plane; ++j)
                out[j] = static_cast<float>((in[j] - zp) * inv);
        }
    }
    return x;
}

Tensor fake_quantize(const Tensor &x, const QuantParams &p) {
    if (p.identity())
        return x;
    return dequantize(quantize(x, p), p);
}

Tensor weight_as_tensor(const WeightTensor &w) {
    return Tensor({1, w.o, w.i * w.kh, w.kw}, w.data);
}

Observer::Observer(ObserverKind kind, int histogram_bins) : kind_(kind), bins_(histogram_bins) {
    if (kind == ObserverKind::Histogram) {
        if (bins_ < 1)
            throw invalid_argument_error("histogram observer: bins must be >= 1");
        counts_.assign(static_cast<size_t>(bins_), 0.0);
    }
}

void Observer::observe(const Tensor &t) {
    if (t.numel() == 0)
        throw invalid_argument_error("observer: empty tensor");
    double tmin = t.data()[0], tmax = t.data()[0];
    for (float v : t.data()) {
        tmin = std::min(tmin, static_cast<double>(v));
        tmax = std::max(tmax, static_cast<double>(v));
    }
    if (observed_ == 0) {
        min_ = tmin;
        max_ = tmax;
    } else {
        min_ = std::min(min_, tmin);
        max_ = std::max(max_, tmax);
    }

    if (kind_ == ObserverKind::PerChannelMinMax) {
        const Shape4 &s = t.shape();
        if (observed_ == 0) {
            ch_min_.assign(static_cast<size_t>(s.c), std::numeric_limits<double>::infinity());
            ch_max_.assign(static_cast<size_t>(s.c), -std::numeric_limits<double>::infinity());
        } else if (static_cast<int64_t>(ch_min_.size()) != s.c) {
            throw invalid_argument_error("observer: channel count changed between observations");
        }
        const int64_t plane = s.h * s.w;
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c) {
                const float *p = t.data().data() + (n * s.c + c) * plane;
                double lo = ch_min_[static_cast<size_t>(c)];
                double hi = ch_max_[static_cast<size_t>(c)];
                for (int64_t j = 0; j < plane; ++j) {
                    lo = std::min(lo, static_cast<double>(p[j]));
                    hi = std::max(hi, static_cast<double>(p[j]));
                }
                ch_min_[static_cast<size_t>(c)] = lo;
                ch_max_[static_cast<size_t>(c)] = hi;
            }
    } else if (kind_ == ObserverKind::Histogram) {
        observe_histogram(t);
    }
    observed_ += t.numel();
}

void Observer::observe_histogram(const Tensor &t) {
    double tmin = t.data()[0], tmax = t.data()[0];
    for (float v : t.data()) {
        tmin = std::min(tmin, static_cast<double>(v));
        tmax = std::max(tmax, static_cast<double>(v));
    }
    if (observed_ == 0) {
        lo_ = tmin;
        hi_ = tmax;
        if (hi_ == lo_) {
            lo_ -= 0.5;
            hi_ += 0.5;
        }
    } else if (tmin < lo_ || tmax > hi_) {
        // Grow the support and redistribute existing mass proportionally to
        // bin overlap. Counts stay summed to the number of observed values.
        const double new_lo = std::min(lo_, tmin);
        const double new_hi = std::max(hi_, tmax);
        const double old_width = (hi_ - lo_) / bins_;
        const double new_width = (new_hi - new_lo) / bins_;
        std::vector<double> fresh(static_cast<size_t>(bins_), 0.0);
        for (int b = 0; b < bins_; ++b) {
            const double mass = counts_[static_cast<size_t>(b)];
            if (mass == 0.0)
                continue;
            const double a0 = lo_ + b * old_width;
            const double a1 = a0 + old_width;
            int j0 = static_cast<int>(std::floor((a0 - new_lo) / new_width));
            int j1 = static_cast<int>(std::floor((a1 - new_lo) / new_width));
            j0 = std::clamp(j0, 0, bins_ - 1);
            j1 = std::clamp(j1, 0, bins_ - 1);
            if (j0 == j1) {
                fresh[static_cast<size_t>(j0)] += mass;
                continue;
            }
            for (int j = j0; j <= j1; ++j) {
                const double c0 = std::max(a0, new_lo + j * new_width);
                const double c1 = std::min(a1, new_lo + (j + 1) * new_width);
                fresh[static_cast<size_t>(j)] += mass * std::max(0.0, c1 - c0) / old_width;
            }
        }
        counts_ = std::move(fresh);
        lo_ = new_lo;
        hi_ = new_hi;
    }

    const double width = (hi_ - lo_) / bins_;
    for (float v : t.data()) {
        int b = static_cast<int>(std::floor((v - lo_) / width));
        b = std::clamp(b, 0, bins_ - 1);
        counts_[static_cast<size_t>(b)] += 1.0;
    }
}

double Observer::range_min() const {
    if (observed_ == 0)
        throw empty_observer_error("observer: no observations");
    return min_;
}

double Observer::range_max() const {
    if (observed_ == 0)
        throw empty_observer_error("observer: no observations");
    return max_;
}

double histogram_range_error(const std::vector<double> &counts, double lo, double bin_width,
                             double a, double b, int64_t levels) {
    // Mass sits at bin centers; in-range mass incurs the uniform-rounding
    // expected squared error step^2 / 12, clipped mass its squared distance
    // to the nearest range edge.
    const double step = (b - a) / static_cast<double>(levels);
    const double in_range_err = step * step / 12.0;
    double total = 0.0;
    for (size_t j = 0; j < counts.size(); ++j) {
        const double mass = counts[j];
        if (mass == 0.0)
            continue;
        const double x = lo + (static_cast<double>(j) + 0.5) * bin_width;
        if (x < a)
            total += mass * (a - x) * (a - x);
        else if (x > b)
            total += mass * (x - b) * (x - b);
        else
            total += mass * in_range_err;
    }
    return total;
}

QuantParams Observer::finalize(int bits, Symmetry symmetry) const {
    if (observed_ == 0)
        throw empty_observer_error("observer: finalize with no observations");
    check_bits(bits);
    switch (kind_) {
    case ObserverKind::MinMax:
        return compute_qparams(min_, max_, bits, symmetry);
    case ObserverKind::PerChannelMinMax: {
        QuantParams p;
        p.bits = bits;
        p.granularity = Granularity::PerChannel;
        p.symmetry = symmetry;
        p.scale.resize(ch_min_.size());
        p.zero_point.resize(ch_min_.size());
        for (size_t k = 0; k < ch_min_.size(); ++k)
            qparams_for_range(ch_min_[k], ch_max_[k], bits, symmetry, p.scale[k], p.zero_point[k]);
        return p;
    }
    case ObserverKind::Histogram: {
        const double width = (hi_ - lo_) / bins_;
        const int64_t levels = (int64_t(1) << bits) - 1;
        const int stride = std::max(1, bins_ / 128);
        double best_err = std::numeric_limits<double>::infinity();
        double best_a = lo_, best_b = hi_;
        for (int ia = 0; ia < bins_; ia += stride) {
            const double a = lo_ + ia * width;
            for (int ib = bins_; ib > ia; ib -= stride) {
                const double b = lo_ + ib * width;
                const double err = histogram_range_error(counts_, lo_, width, a, b, levels);
                if (err < best_err) {
                    best_err = err;
                    best_a = a;
                    best_b = b;
                }
            }
        }
        return compute_qparams(best_a, best_b, bits, symmetry);
    }
    }
    throw invalid_argument_error("unreachable observer kind");
}

ActQuantParams calibrate_activations(const ModelGraph &model, const std::vector<Tensor> &batches,
                                     ObserverKind kind, int bits, Symmetry symmetry) {
    if (batches.empty())
        throw invalid_argument_error("calibrate_activations: no calibration batches");
    if (kind == ObserverKind::PerChannelMinMax)
        throw invalid_argument_error(
            "calibrate_activations: per-channel activation quantization is not supported");

    Observer input_obs(kind);
    std::map<int, Observer> layer_obs;
    for (const auto &l : model.layers)
        layer_obs.emplace(l.id, Observer(kind));

    for (const Tensor &batch : batches) {
        const ForwardResult fwd = forward(model, batch, TraceMode::Post);
        input_obs.observe(batch);
        for (const auto &e : fwd.trace->entries)
            layer_obs.at(e.layer_id).observe(e.post_activation);
    }

    ActQuantParams act;
    act.input = input_obs.finalize(bits, symmetry);
    act.observed_ranges[-1] = {input_obs.range_min(), input_obs.range_max()};
    for (const auto &[id, obs] : layer_obs) {
        act.per_layer[id] = obs.finalize(bits, symmetry);
        act.observed_ranges[id] = {obs.range_min(), obs.range_max()};
    }
    return act;
}

ActQuantParams identity_act_params(const ModelGraph &model) {
    ActQuantParams act;
    act.input = identity_qparams();
    for (const auto &l : model.layers)
        act.per_layer[l.id] = identity_qparams();
    return act;
}

QuantizedModel quantize_model(const ModelGraph &model, const ActQuantParams &act, int weight_bits,
                              Granularity weight_granularity, Symmetry weight_symmetry) {
    for (const auto &l : model.layers)
        if (!act.per_layer.count(l.id))
            throw invalid_argument_error("quantize_model: missing activation params for layer " +
                                         std::to_string(l.id));

    QuantizedModel qm;
    qm.graph = model;
    qm.act = act;
    qm.sim_graph = model;

    if (weight_bits != 32) {
        check_bits(weight_bits);
        for (size_t i = 0; i < model.layers.size(); ++i) {
            const LayerSpec &l = model.layers[i];
            if (!l.is_conv_like())
                continue;
            const Tensor wt = weight_as_tensor(*l.weights);
            QuantParams p;
            p.bits = weight_bits;
            p.granularity = weight_granularity;
            p.symmetry = weight_symmetry;
            if (weight_granularity == Granularity::PerChannel) {
                const Shape4 &s = wt.shape();
                const int64_t plane = s.h * s.w;
                p.scale.resize(static_cast<size_t>(s.c));
                p.zero_point.resize(static_cast<size_t>(s.c));
                for (int64_t c = 0; c < s.c; ++c) {
                    const float *ptr = wt.data().data() + c * plane;
                    double lo = ptr[0], hi = ptr[0];
                    for (int64_t j = 0; j < plane; ++j) {
                        lo = std::min(lo, static_cast<double>(ptr[j]));
                        hi = std::max(hi, static_cast<double>(ptr[j]));
                    }
                    qparams_for_range(lo, hi, weight_bits, weight_symmetry,
                                      p.scale[static_cast<size_t>(c)],
                                      p.zero_point[static_cast<size_t>(c)]);
                }
            } else {
                double lo = wt.data()[0], hi = wt.data()[0];
                for (float v : wt.data()) {
                    lo = std::min(lo, static_cast<double>(v));
                    hi = std::max(hi, static_cast<double>(v));
                }
                p.scale.resize(1);
                p.zero_point.resize(1);
                qparams_for_range(lo, hi, weight_bits, weight_symmetry, p.scale[0],
                                  p.zero_point[0]);
            }
            QuantizedModel::WeightPayload payload;
            payload.params = p;
            payload.q = quantize(wt, p);
            const Tensor fq = dequantize(payload.q, p);
            qm.sim_graph.layers[i].weights->data.assign(fq.data().begin(), fq.data().end());
            qm.weights[l.id] = std::move(payload);
        }
    }
    return qm;
}

Tensor quantized_forward(const QuantizedModel &qm, const Tensor &input) {
    const Shape4 &s = input.shape();
    const ModelGraph &g = qm.sim_graph;
    if (s.c != g.input_shape.c || s.h != g.input_shape.h || s.w != g.input_shape.w)
        throw invalid_argument_error("quantized_forward: input shape mismatch");

    std::map<int, Tensor> kept;
    std::map<int, int> keep_refcount;
    for (const auto &l : g.layers)
        if (l.kind == LayerKind::Add)
            keep_refcount[l.residual_source] += 1;

    Tensor cur = fake_quantize(input, qm.act.input);
    for (const auto &l : g.layers) {
        const Tensor *residual = nullptr;
        if (l.kind == LayerKind::Add)
            residual = &kept.at(l.residual_source);
        Tensor next = layer_eval(l, cur, residual, nullptr);
        next = fake_quantize(next, qm.act.per_layer.at(l.id));
        if (!next.all_finite())
            throw numeric_fault("quantized_forward: non-finite value at layer " +
                                std::to_string(l.id));
        if (keep_refcount.count(l.id))
            kept[l.id] = next;
        cur = std::move(next);
    }
    return cur;
}

} // namespace gzsq
