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
#include "gzsq/tensor.hpp"

#include <cmath>

namespace gzsq {

Tensor::Tensor(Shape4 shape, float fill) : shape_(shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw invalid_argument_error("tensor shape dims must be non-negative");
    data_.assign(static_cast<size_t>(shape.numel()), fill);
}

Tensor::Tensor(Shape4 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape.numel())
        throw invalid_argument_error("tensor data length does not match shape");
}

bool Tensor::all_finite() const noexcept {
    for (float v : data_)
        if (!std::isfinite(v))
            return false;
    return true;
}

uint64_t RngState::next_u64() noexcept {
    // SplitMix64 (Steele, Lea, Flood 2014).
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double RngState::uniform01() noexcept {
    // 53-bit mantissa, mapped to (0, 1] so log() is always defined.
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return 1.0 - u;
}

void RngState::normal_pair(double &z0, double &z1) noexcept {
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    z0 = r * std::cos(theta);
    z1 = r * std::sin(theta);
}

uint64_t RngState::next_below(uint64_t bound) noexcept {
    // Rejection-free modulo is fine here: bound is tiny relative to 2^64 in
    // every call site, so the bias is far below observable levels.
    return next_u64() % bound;
}

Tensor gaussian_tensor(Shape4 shape, double mean, double std, RngState &rng) {
    if (std < 0.0)
        throw invalid_argument_error("gaussian_tensor: std must be >= 0");
    Tensor t(shape);
    auto out = t.data();
    int64_t i = 0;
    const int64_t count = t.numel();
    while (i < count) {
        double z0, z1;
        rng.normal_pair(z0, z1);
        out[i] = static_cast<float>(mean + std * z0);
        ++i;
        if (i < count) {
            out[i] = static_cast<float>(mean + std * z1);
            ++i;
        }
    }
    return t;
}

namespace {

// Shared two-pass reduction: mean then centered second moment, both in
// double, rounded once to float.
ChannelStats stats_over_groups(std::span<const float> data, int64_t channels, int64_t group_size,
                               int64_t outer, int64_t outer_stride) {
    ChannelStats stats;
    stats.mean.resize(static_cast<size_t>(channels));
    stats.std.resize(static_cast<size_t>(channels));
    const int64_t count = outer * group_size;
    for (int64_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (int64_t n = 0; n < outer; ++n) {
            const float *p = data.data() + n * outer_stride + c * group_size;
            for (int64_t k = 0; k < group_size; ++k)
                sum += p[k];
        }
        const double mean = sum / static_cast<double>(count);
        double sq = 0.0;
        for (int64_t n = 0; n < outer; ++n) {
            const float *p = data.data() + n * outer_stride + c * group_size;
            for (int64_t k = 0; k < group_size; ++k) {
                const double d = p[k] - mean;
                sq += d * d;
            }
        }
        stats.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
        stats.std[static_cast<size_t>(c)] = static_cast<float>(std::sqrt(sq / static_cast<double>(count)));
    }
    return stats;
}

} // namespace

ChannelStats activation_channel_stats(const Tensor &t) {
    if (t.numel() == 0)
        throw invalid_argument_error("activation_channel_stats: empty tensor");
    const Shape4 &s = t.shape();
    return stats_over_groups(t.data(), s.c, s.h * s.w, s.n, s.c * s.h * s.w);
}

ChannelStats weight_channel_stats(const WeightTensor &w) {
    if (w.numel() == 0 || w.data.empty())
        throw invalid_argument_error("weight_channel_stats: empty weights");
    return stats_over_groups(w.data, w.o, w.i * w.kh * w.kw, 1, 0);
}

} // namespace gzsq
