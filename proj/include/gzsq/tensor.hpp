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

#include <cstdint>
#include <span>
#include <vector>

#include "gzsq/error.hpp"

namespace gzsq {

// NCHW shape. All dims must be >= 1 for a non-empty tensor.
struct Shape4 {
    int64_t n = 0;
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;

    int64_t numel() const noexcept { return n * c * h * w; }
    bool operator==(const Shape4 &) const = default;
};

// Dense 4-D float tensor, row-major NCHW. Values are immutable by convention
// once handed to another module; all operations below are pure.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape4 shape, float fill = 0.0f);
    Tensor(Shape4 shape, std::vector<float> data);

    const Shape4 &shape() const noexcept { return shape_; }
    int64_t numel() const noexcept { return shape_.numel(); }
    bool empty() const noexcept { return data_.empty(); }

    float &at(int64_t n, int64_t c, int64_t h, int64_t w) noexcept {
        return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }
    float at(int64_t n, int64_t c, int64_t h, int64_t w) const noexcept {
        return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    bool all_finite() const noexcept;

    bool operator==(const Tensor &) const = default;

private:
    Shape4 shape_{};
    std::vector<float> data_;
};

// Convolution weights, OIHW layout. Fully-connected weights use kh = kw = 1;
// depthwise weights use i = 1 with one group per output channel.
struct WeightTensor {
    int64_t o = 0;
    int64_t i = 0;
    int64_t kh = 0;
    int64_t kw = 0;
    std::vector<float> data;

    int64_t numel() const noexcept { return o * i * kh * kw; }
    float &at(int64_t oo, int64_t ii, int64_t y, int64_t x) noexcept {
        return data[((oo * i + ii) * kh + y) * kw + x];
    }
    float at(int64_t oo, int64_t ii, int64_t y, int64_t x) const noexcept {
        return data[((oo * i + ii) * kh + y) * kw + x];
    }

    bool operator==(const WeightTensor &) const = default;
};

// Per-channel (mean, std) pair vectors. std is the population standard
// deviation (divide by count). Arithmetic that produces ChannelStats is
// evaluated in double and rounded once to float per element, so independent
// recomputations of the same formula are bit-identical.
struct ChannelStats {
    std::vector<float> mean;
    std::vector<float> std;

    size_t size() const noexcept { return mean.size(); }
    bool operator==(const ChannelStats &) const = default;
};

// Deterministic PRNG: SplitMix64 over a 64-bit state, normal deviates via
// Box-Muller on 53-bit uniforms. Two uniforms are consumed per pair of
// normals; no state is shared between instances.
class RngState {
public:
    explicit RngState(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() noexcept;
    // Uniform in (0, 1].
    double uniform01() noexcept;
    // One pair of independent N(0,1) deviates.
    void normal_pair(double &z0, double &z1) noexcept;
    // Uniform integer in [0, bound). bound must be > 0.
    uint64_t next_below(uint64_t bound) noexcept;

private:
    uint64_t state_;
};

// i.i.d. N(mean, std^2) samples. std must be >= 0; std == 0 yields a constant
// tensor. Deterministic for a given rng state.
Tensor gaussian_tensor(Shape4 shape, double mean, double std, RngState &rng);

// Per-channel mean / population std over the (n, h, w) axes.
ChannelStats activation_channel_stats(const Tensor &t);

// Per-out-channel mean / population std over the (i, kh, kw) axes.
ChannelStats weight_channel_stats(const WeightTensor &w);

} // namespace gzsq
