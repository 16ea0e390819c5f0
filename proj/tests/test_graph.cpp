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
#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "gzsq/graph.hpp"
#include "gzsq/harness.hpp"
#include "gzsq/io.hpp"

using namespace gzsq;

namespace {

WeightTensor weights_of(std::vector<float> data, int64_t o, int64_t i, int64_t kh, int64_t kw) {
    WeightTensor w;
    w.o = o;
    w.i = i;
    w.kh = kh;
    w.kw = kw;
    w.data = std::move(data);
    return w;
}

// Naive convolution written independently of the production kernel: iterates
// input-major and accumulates into the output.
Tensor oracle_conv(const Tensor &x, const WeightTensor &w, int stride, int padding) {
    const Shape4 &s = x.shape();
    const int64_t oh = (s.h + 2 * padding - w.kh) / stride + 1;
    const int64_t ow = (s.w + 2 * padding - w.kw) / stride + 1;
    std::vector<double> acc(static_cast<size_t>(s.n * w.o * oh * ow), 0.0);
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t ic = 0; ic < s.c; ++ic)
            for (int64_t iy = 0; iy < s.h; ++iy)
                for (int64_t ix = 0; ix < s.w; ++ix) {
                    const double v = x.at(n, ic, iy, ix);
                    for (int64_t oc = 0; oc < w.o; ++oc)
                        for (int64_t ky = 0; ky < w.kh; ++ky)
                            for (int64_t kx = 0; kx < w.kw; ++kx) {
                                const int64_t oy_num = iy + padding - ky;
                                const int64_t ox_num = ix + padding - kx;
                                if (oy_num < 0 || ox_num < 0 || oy_num % stride || ox_num % stride)
                                    continue;
                                const int64_t oy = oy_num / stride;
                                const int64_t ox = ox_num / stride;
                                if (oy >= oh || ox >= ow)
                                    continue;
                                acc[static_cast<size_t>(((n * w.o + oc) * oh + oy) * ow + ox)] +=
                                    v * w.at(oc, ic, ky, kx);
                            }
                }
    Tensor out({s.n, w.o, oh, ow});
    for (int64_t j = 0; j < out.numel(); ++j)
        out.data()[static_cast<size_t>(j)] = static_cast<float>(acc[static_cast<size_t>(j)]);
    return out;
}

ModelGraph three_layer_net(uint64_t seed) {
    RngState rng(seed);
    ModelGraph m;
    m.input_shape = {3, 6, 6};
    m.name = "t3";
    m.version = "1";
    auto fill = [&](WeightTensor &w) {
        for (size_t j = 0; j < w.data.size(); j += 2) {
            double z0, z1;
            rng.normal_pair(z0, z1);
            w.data[j] = static_cast<float>(0.4 * z0);
            if (j + 1 < w.data.size())
                w.data[j + 1] = static_cast<float>(0.4 * z1);
        }
    };
    LayerSpec l0;
    l0.id = 0;
    l0.kind = LayerKind::Conv2d;
    l0.weights = weights_of(std::vector<float>(4 * 3 * 3 * 3), 4, 3, 3, 3);
    fill(*l0.weights);
    l0.padding = 1;
    l0.activation = Activation::ReLU;
    LayerSpec l1;
    l1.id = 1;
    l1.kind = LayerKind::Conv2d;
    l1.weights = weights_of(std::vector<float>(4 * 4 * 3 * 3), 4, 4, 3, 3);
    fill(*l1.weights);
    l1.stride = 2;
    l1.padding = 1;
    l1.activation = Activation::ReLU6;
    LayerSpec l2;
    l2.id = 2;
    l2.kind = LayerKind::Conv2d;
    l2.weights = weights_of(std::vector<float>(2 * 4 * 1 * 1), 2, 4, 1, 1);
    fill(*l2.weights);
    m.layers = {l0, l1, l2};
    return m;
}

} // namespace

TEST_CASE("1x1 conv with weight 2 doubles the input") {
    ModelGraph m;
    m.input_shape = {1, 2, 2};
    LayerSpec l;
    l.id = 0;
    l.kind = LayerKind::Conv2d;
    l.weights = weights_of({2.0f}, 1, 1, 1, 1);
    l.bias = std::vector<float>{0.0f};
    m.layers = {l};
    const Tensor x({1, 1, 2, 2}, 3.0f);
    const Tensor out = forward(m, x).output;
    for (float v : out.data())
        CHECK(v == doctest::Approx(6.0));
}

TEST_CASE("relu6 clips to [0, 6]") {
    ModelGraph m;
    m.input_shape = {1, 1, 3};
    LayerSpec l;
    l.id = 0;
    l.kind = LayerKind::Conv2d;
    l.weights = weights_of({1.0f}, 1, 1, 1, 1);
    l.activation = Activation::ReLU6;
    m.layers = {l};
    const Tensor x({1, 1, 1, 3}, {-1.0f, 3.0f, 9.0f});
    const Tensor out = forward(m, x).output;
    CHECK(out.data()[0] == 0.0f);
    CHECK(out.data()[1] == 3.0f);
    CHECK(out.data()[2] == 6.0f);
}

TEST_CASE("forward matches the naive convolution oracle") {
    const ModelGraph m = three_layer_net(17);
    RngState rng(3);
    const Tensor x = gaussian_tensor({2, 3, 6, 6}, 0.0, 1.0, rng);

    Tensor expect = x;
    expect = oracle_conv(expect, *m.layers[0].weights, 1, 1);
    for (float &v : expect.data())
        v = std::max(v, 0.0f);
    expect = oracle_conv(expect, *m.layers[1].weights, 2, 1);
    for (float &v : expect.data())
        v = std::min(std::max(v, 0.0f), 6.0f);
    expect = oracle_conv(expect, *m.layers[2].weights, 1, 0);

    const Tensor got = forward(m, x).output;
    REQUIRE(got.shape() == expect.shape());
    for (int64_t j = 0; j < got.numel(); ++j) {
        const float e = expect.data()[static_cast<size_t>(j)];
        const float g = got.data()[static_cast<size_t>(j)];
        CHECK(std::abs(g - e) <= 1e-4f * (1.0f + std::abs(e)));
    }
}

TEST_CASE("depthwise convolution equals per-channel single-channel convolutions") {
    RngState rng(71);
    ModelGraph m;
    m.input_shape = {3, 5, 5};
    LayerSpec l;
    l.id = 0;
    l.kind = LayerKind::DepthwiseConv2d;
    WeightTensor w;
    w.o = 3;
    w.i = 1;
    w.kh = 3;
    w.kw = 3;
    w.data.resize(27);
    for (auto &v : w.data) {
        double z0, z1;
        rng.normal_pair(z0, z1);
        v = static_cast<float>(0.5 * z0);
    }
    l.weights = w;
    l.padding = 1;
    m.layers = {l};
    const Tensor x = gaussian_tensor({2, 3, 5, 5}, 0.0, 1.0, rng);
    const Tensor got = forward(m, x).output;

    for (int64_t c = 0; c < 3; ++c) {
        // single-channel slice through the oracle convolution
        Tensor slice({2, 1, 5, 5});
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t h = 0; h < 5; ++h)
                for (int64_t ww = 0; ww < 5; ++ww)
                    slice.at(n, 0, h, ww) = x.at(n, c, h, ww);
        WeightTensor one;
        one.o = 1;
        one.i = 1;
        one.kh = 3;
        one.kw = 3;
        one.data.assign(w.data.begin() + c * 9, w.data.begin() + (c + 1) * 9);
        const Tensor want = oracle_conv(slice, one, 1, 1);
        for (int64_t n = 0; n < 2; ++n)
            for (int64_t h = 0; h < 5; ++h)
                for (int64_t ww = 0; ww < 5; ++ww)
                    CHECK(got.at(n, c, h, ww) ==
                          doctest::Approx(want.at(n, 0, h, ww)).epsilon(1e-6));
    }
}

TEST_CASE("forward rejects shape mismatches") {
    const ModelGraph m = three_layer_net(17);
    CHECK_THROWS_AS(forward(m, Tensor({1, 2, 6, 6}, 0.0f)), invalid_argument_error);
}

TEST_CASE("forward reports non-finite intermediates as numeric faults") {
    ModelGraph m;
    m.input_shape = {1, 1, 1};
    LayerSpec l;
    l.id = 0;
    l.kind = LayerKind::Conv2d;
    l.weights = weights_of({3e38f}, 1, 1, 1, 1);
    m.layers = {l};
    const Tensor x({1, 1, 1, 1}, 3e38f);
    CHECK_THROWS_AS(forward(m, x), numeric_fault);
}

TEST_CASE("linearity for activation-free zero-bias models") {
    ModelGraph m = three_layer_net(23);
    for (auto &l : m.layers)
        l.activation = Activation::None;
    RngState rng(4);
    const Tensor x = gaussian_tensor({1, 3, 6, 6}, 0.0, 1.0, rng);
    Tensor x2 = x;
    for (float &v : x2.data())
        v *= 2.0f;
    const Tensor y = forward(m, x).output;
    const Tensor y2 = forward(m, x2).output;
    for (int64_t j = 0; j < y.numel(); ++j) {
        const float expect = 2.0f * y.data()[static_cast<size_t>(j)];
        CHECK(std::abs(y2.data()[static_cast<size_t>(j)] - expect) <=
              1e-5f * (1.0f + std::abs(expect)));
    }
}

TEST_CASE("trace is consistent with running the prefix sub-graph") {
    const ModelGraph m = three_layer_net(29);
    RngState rng(5);
    const Tensor x = gaussian_tensor({1, 3, 6, 6}, 0.0, 1.0, rng);
    const ForwardResult full = forward(m, x, TraceMode::Post);
    for (size_t k = 0; k < m.layers.size(); ++k) {
        ModelGraph prefix = m;
        prefix.layers.assign(m.layers.begin(), m.layers.begin() + static_cast<int64_t>(k) + 1);
        const Tensor out = forward(prefix, x).output;
        CHECK(out == full.trace->entries[k].post_activation);
    }
}

TEST_CASE("BN inference matches the per-element affine oracle") {
    ModelGraph m;
    m.input_shape = {2, 2, 2};
    LayerSpec l;
    l.id = 0;
    l.kind = LayerKind::Conv2d;
    l.weights = weights_of({1.0f, 0.0f, 0.0f, 1.0f}, 2, 2, 1, 1); // identity mix
    BNParams bn;
    bn.gamma = {2.0f, 0.5f};
    bn.beta = {0.25f, -1.0f};
    bn.running_mean = {1.0f, -0.5f};
    bn.running_std = {2.0f, 1.5f};
    bn.epsilon = 1e-5f;
    l.bn = bn;
    m.layers = {l};
    RngState rng(6);
    const Tensor x = gaussian_tensor({1, 2, 2, 2}, 0.0, 1.0, rng);
    const Tensor out = forward(m, x).output;
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t h = 0; h < 2; ++h)
            for (int64_t w = 0; w < 2; ++w) {
                const size_t k = static_cast<size_t>(c);
                const double want = bn.gamma[k] * (x.at(0, c, h, w) - bn.running_mean[k]) /
                                        std::sqrt(static_cast<double>(bn.running_std[k]) * bn.running_std[k] +
                                                  bn.epsilon) +
                                    bn.beta[k];
                CHECK(out.at(0, c, h, w) == doctest::Approx(want).epsilon(1e-6));
            }
}

TEST_CASE("residual add combines the traced source") {
    ModelGraph m;
    m.input_shape = {2, 3, 3};
    LayerSpec l0;
    l0.id = 0;
    l0.kind = LayerKind::Conv2d;
    l0.weights = weights_of({1.0f, 0.0f, 0.0f, 1.0f}, 2, 2, 1, 1);
    LayerSpec l1 = l0;
    l1.id = 1;
    l1.weights = weights_of({0.5f, 0.0f, 0.0f, 0.5f}, 2, 2, 1, 1);
    LayerSpec add;
    add.id = 2;
    add.kind = LayerKind::Add;
    add.residual_source = 0;
    m.layers = {l0, l1, add};
    RngState rng(8);
    const Tensor x = gaussian_tensor({1, 2, 3, 3}, 0.0, 1.0, rng);
    const Tensor out = forward(m, x).output;
    for (int64_t j = 0; j < out.numel(); ++j) {
        const float want = 1.5f * x.data()[static_cast<size_t>(j)];
        CHECK(out.data()[static_cast<size_t>(j)] == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("validate_graph accepts a consistent net") {
    CHECK(validate_graph(three_layer_net(31)).empty());
}

TEST_CASE("validate_graph flags a forward residual reference") {
    ModelGraph m = three_layer_net(31);
    LayerSpec add;
    add.id = 9;
    add.kind = LayerKind::Add;
    add.residual_source = 99; // not an earlier layer
    m.layers.insert(m.layers.begin() + 1, add);
    const auto diags = validate_graph(m);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].find("layer 9") != std::string::npos);
}

TEST_CASE("validate_graph flags a bias length mismatch") {
    ModelGraph m = three_layer_net(31);
    m.layers[0].bias = std::vector<float>{1.0f, 2.0f}; // out channels = 4
    const auto diags = validate_graph(m);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].find("bias") != std::string::npos);
}

TEST_CASE("model save/load round-trips bit-exactly") {
    const std::string dir = (std::filesystem::temp_directory_path() / "gzsq_model_rt").string();
    std::filesystem::remove_all(dir);
    ModelGraph m = make_reference_cnn({3, 8, 8}, 3, true, 77);
    m.layers[0].bias = std::vector<float>{0.1f, -0.2f, 0.3f, 0.0f, 1.5f, -2.5f, 0.25f, 1e-30f};
    save_model(m, dir);
    const ModelGraph back = load_model(dir);
    CHECK(back == m);
}

TEST_CASE("truncated weight blob raises parse_error") {
    const std::string dir = (std::filesystem::temp_directory_path() / "gzsq_model_trunc").string();
    std::filesystem::remove_all(dir);
    save_model(make_reference_cnn({3, 8, 8}, 3, false, 77), dir);
    std::filesystem::resize_file(dir + "/layer0.weight.bin", 10);
    CHECK_THROWS_AS(load_model(dir), parse_error);
}

TEST_CASE("missing blob raises parse_error naming the blob") {
    const std::string dir = (std::filesystem::temp_directory_path() / "gzsq_model_missing").string();
    std::filesystem::remove_all(dir);
    save_model(make_reference_cnn({3, 8, 8}, 3, false, 77), dir);
    std::filesystem::remove(dir + "/layer1.weight.bin");
    try {
        load_model(dir);
        FAIL("expected parse_error");
    } catch (const parse_error &e) {
        CHECK(std::string(e.what()).find("layer1.weight.bin") != std::string::npos);
    }
}

TEST_CASE("malformed manifest raises parse_error; version mismatch raises version_error") {
    const std::string dir = (std::filesystem::temp_directory_path() / "gzsq_model_bad").string();
    std::filesystem::remove_all(dir);
    save_model(make_reference_cnn({3, 8, 8}, 3, false, 77), dir);

    const std::string manifest = io::read_text_file(dir + "/manifest.json");
    io::write_text_file(dir + "/manifest.json", manifest.substr(0, manifest.size() / 2));
    CHECK_THROWS_AS(load_model(dir), parse_error);

    std::string patched = manifest;
    const auto pos = patched.find("gzsq-model/1");
    patched.replace(pos, std::string("gzsq-model/1").size(), "gzsq-model/9");
    io::write_text_file(dir + "/manifest.json", patched);
    CHECK_THROWS_AS(load_model(dir), version_error);
}
