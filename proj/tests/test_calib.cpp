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

#include <doctest.h>

#include "gzsq/calib.hpp"
#include "gzsq/harness.hpp"

using namespace gzsq;

// Straight-line recomputation of the adjustment/propagation chain, written
// directly from the formulas and kept separate from the production walk. The
// arithmetic convention is shared (double evaluation, one rounding to float),
// so agreement is bit-exact.
namespace oracle {

std::vector<float> resize(const std::vector<float> &src, int64_t target, EsaRule rule, bool clamp) {
    std::vector<float> out(static_cast<size_t>(target));
    if (rule == EsaRule::Repeat) {
        for (int64_t j = 0; j < target; ++j)
            out[static_cast<size_t>(j)] =
                src[static_cast<size_t>(j % static_cast<int64_t>(src.size()))];
    } else {
        double mn = src[0], mx = src[0], sum = 0.0;
        for (float v : src) {
            mn = std::min(mn, static_cast<double>(v));
            mx = std::max(mx, static_cast<double>(v));
            sum += v;
        }
        const double mean = sum / static_cast<double>(src.size());
        double value = 0.0;
        switch (rule) {
        case EsaRule::Min: value = mn; break;
        case EsaRule::MeanMinusMin: value = mean - mn; break;
        case EsaRule::MeanPlusMin: value = mean + mn; break;
        case EsaRule::Mean: value = mean; break;
        case EsaRule::MaxMinusMean: value = mx - mean; break;
        case EsaRule::MaxPlusMean: value = mx + mean; break;
        case EsaRule::Max: value = mx; break;
        case EsaRule::Repeat: break;
        }
        for (auto &v : out)
            v = static_cast<float>(value);
    }
    if (clamp)
        for (auto &v : out)
            v = v < 0.0f ? 0.0f : v;
    return out;
}

ChannelStats weight_stats(const WeightTensor &w) {
    ChannelStats st;
    const int64_t per = w.i * w.kh * w.kw;
    for (int64_t o = 0; o < w.o; ++o) {
        double sum = 0.0;
        for (int64_t j = 0; j < per; ++j)
            sum += w.data[static_cast<size_t>(o * per + j)];
        const double mean = sum / static_cast<double>(per);
        double sq = 0.0;
        for (int64_t j = 0; j < per; ++j) {
            const double d = w.data[static_cast<size_t>(o * per + j)] - mean;
            sq += d * d;
        }
        st.mean.push_back(static_cast<float>(mean));
        st.std.push_back(static_cast<float>(std::sqrt(sq / static_cast<double>(per))));
    }
    return st;
}

SubstituteSet recompute(const ModelGraph &model, const EsaPolicySet &policies, bool folded_before) {
    const auto shapes = layer_output_shapes(model);
    SubstituteSet subs;
    ChannelStats prev;
    bool seed = true;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec &l = model.layers[i];
        const EsaPolicy &pol = policies.for_layer(l.id);
        ChannelStats entry;
        auto seed_stats = [&](int64_t c) {
            ChannelStats s;
            s.mean.assign(static_cast<size_t>(c), 0.0f);
            s.std.assign(static_cast<size_t>(c), 1.0f);
            return s;
        };
        if (l.is_conv_like()) {
            const int64_t out_c = l.weights->o;
            if (l.bn) {
                entry.mean = l.bn->beta;
                for (float g : l.bn->gamma)
                    entry.std.push_back(std::abs(g));
            } else {
                ChannelStats adj;
                if (seed) {
                    adj = seed_stats(out_c);
                } else if (static_cast<int64_t>(prev.size()) == out_c) {
                    adj = prev;
                } else {
                    const bool expand = out_c > static_cast<int64_t>(prev.size());
                    adj.mean = resize(prev.mean, out_c,
                                      expand ? pol.mean_expansion : pol.mean_contraction, false);
                    adj.std = resize(prev.std, out_c,
                                     expand ? pol.std_expansion : pol.std_contraction, true);
                }
                const ChannelStats ws = weight_stats(*l.weights);
                for (size_t k = 0; k < adj.size(); ++k) {
                    double mean = static_cast<double>(ws.mean[k]) + adj.mean[k];
                    if (folded_before && l.bias && l.bias_from_fold)
                        mean += (*l.bias)[k];
                    entry.mean.push_back(static_cast<float>(mean));
                    const double a = ws.std[k], b = adj.std[k];
                    entry.std.push_back(static_cast<float>(std::sqrt(a * a + b * b)));
                }
            }
        } else if (l.kind == LayerKind::Add) {
            const ChannelStats &src = subs.find(l.residual_source)->stats;
            const ChannelStats left = seed ? seed_stats(static_cast<int64_t>(src.size())) : prev;
            for (size_t k = 0; k < left.size(); ++k) {
                entry.mean.push_back(
                    static_cast<float>(static_cast<double>(left.mean[k]) + src.mean[k]));
                const double a = left.std[k], b = src.std[k];
                entry.std.push_back(static_cast<float>(std::sqrt(a * a + b * b)));
            }
        } else if (l.kind == LayerKind::GlobalAvgPool) {
            entry = seed ? seed_stats(shapes[i].c) : prev;
        } else { // Flatten
            if (seed) {
                entry = seed_stats(shapes[i].c);
            } else if (static_cast<int64_t>(prev.size()) == shapes[i].c) {
                entry = prev;
            } else {
                const bool expand = shapes[i].c > static_cast<int64_t>(prev.size());
                entry.mean = resize(prev.mean, shapes[i].c,
                                    expand ? pol.mean_expansion : pol.mean_contraction, false);
                entry.std = resize(prev.std, shapes[i].c,
                                   expand ? pol.std_expansion : pol.std_contraction, true);
            }
        }
        subs.entries.push_back({l.id, entry});
        prev = entry;
        seed = false;
    }
    return subs;
}

} // namespace oracle

TEST_CASE("se_step: identity weight statistics") {
    const ChannelStats prev{{0.0f}, {1.0f}};
    const ChannelStats w{{0.0f}, {0.0f}};
    const ChannelStats out = se_step(prev, w);
    CHECK(out.mean[0] == 0.0f);
    CHECK(out.std[0] == 1.0f);
}

TEST_CASE("se_step: 0.6/0.8/1.0 triangle") {
    const ChannelStats prev{{0.5f}, {0.6f}};
    const ChannelStats w{{0.1f}, {0.8f}};
    const ChannelStats out = se_step(prev, w);
    CHECK(out.mean[0] == doctest::Approx(0.6));
    CHECK(out.std[0] == doctest::Approx(1.0));
}

TEST_CASE("se_step: folded bias feeds the refined mean") {
    const ChannelStats prev{{0.0f}, {1.0f}};
    const ChannelStats w{{0.2f}, {0.0f}};
    const std::vector<float> bias{-0.9f};
    const ChannelStats out = se_step(prev, w, &bias);
    CHECK(out.mean[0] == doctest::Approx(-0.7));
    CHECK(out.std[0] == doctest::Approx(1.0));
}

TEST_CASE("se_step rejects mismatched channel counts") {
    const ChannelStats prev{{0.0f, 1.0f}, {1.0f, 1.0f}};
    const ChannelStats w{{0.0f}, {0.0f}};
    CHECK_THROWS_AS(se_step(prev, w), invalid_argument_error);
}

TEST_CASE("esa_adjust: repeat tiles cyclically") {
    const ChannelStats st{{1.0f, 2.0f}, {0.1f, 0.2f}};
    EsaPolicy pol; // repeat expansion by default
    const ChannelStats out = esa_adjust(st, 4, pol);
    CHECK(out.mean == std::vector<float>{1.0f, 2.0f, 1.0f, 2.0f});
    CHECK(out.std == std::vector<float>{0.1f, 0.2f, 0.1f, 0.2f});
}

TEST_CASE("esa_adjust: mean-min contraction broadcasts a scalar") {
    const ChannelStats st{{1.0f, 2.0f, 3.0f}, {1.0f, 1.0f, 1.0f}};
    EsaPolicy pol; // mean-min contraction by default
    const ChannelStats out = esa_adjust(st, 2, pol);
    CHECK(out.mean == std::vector<float>{1.0f, 1.0f}); // mean 2 - min 1
}

TEST_CASE("esa_adjust: mean+min expansion for std vectors") {
    const ChannelStats st{{0.0f, 0.0f}, {0.2f, 0.4f}};
    EsaPolicy pol;
    pol.std_expansion = EsaRule::MeanPlusMin;
    const ChannelStats out = esa_adjust(st, 3, pol);
    CHECK(out.std == std::vector<float>{0.5f, 0.5f, 0.5f}); // mean 0.3 + min 0.2
}

TEST_CASE("esa_adjust is total and never emits negative std") {
    RngState rng(41);
    const EsaRule rules[] = {EsaRule::Min,         EsaRule::MeanMinusMin, EsaRule::MeanPlusMin,
                             EsaRule::Mean,        EsaRule::MaxMinusMean, EsaRule::MaxPlusMean,
                             EsaRule::Max,         EsaRule::Repeat};
    for (int trial = 0; trial < 200; ++trial) {
        const size_t len = 1 + rng.next_below(6);
        ChannelStats st;
        for (size_t k = 0; k < len; ++k) {
            double z0, z1;
            rng.normal_pair(z0, z1);
            st.mean.push_back(static_cast<float>(2.0 * z0));
            st.std.push_back(static_cast<float>(std::abs(z1)));
        }
        EsaPolicy pol;
        pol.mean_expansion = rules[rng.next_below(8)];
        pol.mean_contraction = rules[rng.next_below(8)];
        pol.std_expansion = rules[rng.next_below(8)];
        pol.std_contraction = rules[rng.next_below(8)];
        const int64_t target = 1 + static_cast<int64_t>(rng.next_below(9));
        const ChannelStats out = esa_adjust(st, target, pol);
        REQUIRE(static_cast<int64_t>(out.size()) == target);
        for (float v : out.std)
            CHECK(v >= 0.0f);
    }
}

TEST_CASE("single constant-weight layer: substitute is (w0, 1)") {
    ModelGraph m;
    m.input_shape = {2, 3, 3};
    LayerSpec l;
    l.id = 0;
    l.kind = LayerKind::Conv2d;
    WeightTensor w;
    w.o = 1;
    w.i = 2;
    w.kh = 3;
    w.kw = 3;
    w.data.assign(18, 0.37f);
    l.weights = w;
    m.layers = {l};
    const SubstituteSet subs = estimate_substitutes(m, EsaPolicySet{}, false);
    REQUIRE(subs.entries.size() == 1);
    CHECK(subs.entries[0].stats.mean[0] == doctest::Approx(0.37));
    CHECK(subs.entries[0].stats.std[0] == doctest::Approx(1.0));
}

TEST_CASE("two matched layers follow the chained closed form bit-exactly") {
    RngState rng(51);
    ModelGraph m;
    m.input_shape = {4, 4, 4};
    for (int i = 0; i < 2; ++i) {
        LayerSpec l;
        l.id = i;
        l.kind = LayerKind::Conv2d;
        WeightTensor w;
        w.o = 4;
        w.i = 4;
        w.kh = 3;
        w.kw = 3;
        w.data.resize(static_cast<size_t>(w.numel()));
        for (auto &v : w.data) {
            double z0, z1;
            rng.normal_pair(z0, z1);
            v = static_cast<float>(0.3 * z0);
        }
        l.weights = std::move(w);
        l.padding = 1;
        m.layers.push_back(std::move(l));
    }
    const SubstituteSet got = estimate_substitutes(m, EsaPolicySet{}, false);
    const SubstituteSet want = oracle::recompute(m, EsaPolicySet{}, false);
    REQUIRE(got.entries.size() == want.entries.size());
    for (size_t i = 0; i < got.entries.size(); ++i) {
        CHECK(got.entries[i].stats.mean == want.entries[i].stats.mean);
        CHECK(got.entries[i].stats.std == want.entries[i].stats.std);
    }
}

TEST_CASE("expansion adjusts entry lengths to the target layer") {
    RngState rng(52);
    ModelGraph m;
    m.input_shape = {2, 4, 4};
    LayerSpec l0;
    l0.id = 0;
    l0.kind = LayerKind::Conv2d;
    WeightTensor w0;
    w0.o = 2;
    w0.i = 2;
    w0.kh = 1;
    w0.kw = 1;
    w0.data = {0.5f, -0.25f, 0.75f, 0.1f};
    l0.weights = w0;
    LayerSpec l1;
    l1.id = 1;
    l1.kind = LayerKind::Conv2d;
    WeightTensor w1;
    w1.o = 4;
    w1.i = 2;
    w1.kh = 1;
    w1.kw = 1;
    w1.data = {0.5f, -0.25f, 0.75f, 0.1f, 0.3f, 0.2f, -0.4f, 0.6f};
    l1.weights = w1;
    m.layers = {l0, l1};
    const SubstituteSet subs = estimate_substitutes(m, EsaPolicySet{}, false);
    CHECK(subs.entries[0].stats.size() == 2);
    CHECK(subs.entries[1].stats.size() == 4);
}

TEST_CASE("oracle equivalence across random models, bit-exact") {
    int expansions = 0, contractions = 0;
    for (uint64_t seed = 0; seed < 30; ++seed) {
        const ModelGraph m = random_model(seed);
        bool was_folded = false;
        ModelGraph target = m;
        if (m.has_bn() && seed % 2 == 0) {
            target = fold_bn(m).model;
            was_folded = true;
        }
        const SubstituteSet got = estimate_substitutes(target, EsaPolicySet{}, was_folded);
        const SubstituteSet want = oracle::recompute(target, EsaPolicySet{}, was_folded);
        REQUIRE(got.entries.size() == want.entries.size());
        for (size_t i = 0; i < got.entries.size(); ++i) {
            CHECK(got.entries[i].layer_id == want.entries[i].layer_id);
            CHECK(got.entries[i].stats.mean == want.entries[i].stats.mean);
            CHECK(got.entries[i].stats.std == want.entries[i].stats.std);
        }
        // Count channel-size transitions so the suite provably covers both.
        const auto &layers = target.layers;
        for (size_t i = 1; i < layers.size(); ++i) {
            if (!layers[i].is_conv_like() || layers[i].bn)
                continue;
            const size_t prev_c = want.entries[i - 1].stats.size();
            const size_t cur_c = static_cast<size_t>(layers[i].weights->o);
            if (cur_c > prev_c)
                ++expansions;
            else if (cur_c < prev_c)
                ++contractions;
        }
    }
    CHECK(expansions > 0);
    CHECK(contractions > 0);
}

TEST_CASE("variance is monotone along the propagation chain") {
    for (uint64_t seed = 100; seed < 110; ++seed) {
        const ModelGraph m = random_model(seed, {.allow_bn = false, .allow_residual = false});
        const SubstituteSet subs = estimate_substitutes(m, EsaPolicySet{}, false);
        ChannelStats prev;
        bool first = true;
        for (size_t i = 0; i < m.layers.size(); ++i) {
            if (!m.layers[i].is_conv_like()) {
                prev = subs.entries[i].stats;
                first = false;
                continue;
            }
            const ChannelStats &cur = subs.entries[i].stats;
            const ChannelStats base =
                first ? ChannelStats{std::vector<float>(cur.size(), 0.0f),
                                     std::vector<float>(cur.size(), 1.0f)}
                      : esa_adjust(prev, static_cast<int64_t>(cur.size()), EsaPolicy{});
            for (size_t k = 0; k < cur.size(); ++k)
                CHECK(cur.std[k] >= base.std[k]);
            prev = cur;
            first = false;
        }
    }
}

TEST_CASE("live BN pins substitutes to (beta, |gamma|)") {
    ModelGraph m = make_reference_cnn({3, 8, 8}, 3, true, 61);
    RngState rng(62);
    for (auto &l : m.layers) {
        if (!l.bn)
            continue;
        for (size_t k = 0; k < l.bn->size(); ++k) {
            double z0, z1;
            rng.normal_pair(z0, z1);
            l.bn->beta[k] = static_cast<float>(z0);
            l.bn->gamma[k] = static_cast<float>(z1); // signs exercised
        }
    }
    const SubstituteSet subs = estimate_substitutes(m, EsaPolicySet{}, false);
    for (size_t i = 0; i < m.layers.size(); ++i) {
        if (!m.layers[i].bn)
            continue;
        for (size_t k = 0; k < m.layers[i].bn->size(); ++k) {
            CHECK(subs.entries[i].stats.mean[k] == m.layers[i].bn->beta[k]);
            CHECK(subs.entries[i].stats.std[k] == std::abs(m.layers[i].bn->gamma[k]));
        }
    }
}

TEST_CASE("folded_before demands a BN-free model") {
    const ModelGraph m = make_reference_cnn({3, 8, 8}, 3, true, 63);
    CHECK_THROWS_AS(estimate_substitutes(m, EsaPolicySet{}, true), invalid_argument_error);
}

TEST_CASE("substitute sets round-trip through JSON bit-exactly") {
    const ModelGraph m = random_model(71);
    const SubstituteSet subs = estimate_substitutes(m, EsaPolicySet{}, false);
    const std::string path =
        (std::filesystem::temp_directory_path() / "gzsq_subs_rt.json").string();
    save_substitutes(subs, path);
    const SubstituteSet back = load_substitutes(path);
    REQUIRE(back.entries.size() == subs.entries.size());
    for (size_t i = 0; i < subs.entries.size(); ++i) {
        CHECK(back.entries[i].layer_id == subs.entries[i].layer_id);
        CHECK(back.entries[i].stats.mean == subs.entries[i].stats.mean);
        CHECK(back.entries[i].stats.std == subs.entries[i].stats.std);
    }
}
