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
#include "gzsq/calib.hpp"

#include <algorithm>
#include <cmath>

#include "gzsq/io.hpp"

namespace gzsq {

const char *to_string(EsaRule r) {
    switch (r) {
    case EsaRule::Min: return "min";
    case EsaRule::MeanMinusMin: return "mean-min";
    case EsaRule::MeanPlusMin: return "mean+min";
    case EsaRule::Mean: return "mean";
    case EsaRule::MaxMinusMean: return "max-mean";
    case EsaRule::MaxPlusMean: return "max+mean";
    case EsaRule::Max: return "max";
    case EsaRule::Repeat: return "repeat";
    }
    return "?";
}

EsaRule esa_rule_from_string(const std::string &s) {
    if (s == "min") return EsaRule::Min;
    if (s == "mean-min") return EsaRule::MeanMinusMin;
    if (s == "mean+min") return EsaRule::MeanPlusMin;
    if (s == "mean") return EsaRule::Mean;
    if (s == "max-mean") return EsaRule::MaxMinusMean;
    if (s == "max+mean") return EsaRule::MaxPlusMean;
    if (s == "max") return EsaRule::Max;
    if (s == "repeat") return EsaRule::Repeat;
    throw parse_error("unknown ESA rule: " + s);
}

const SubstituteSet::Entry *SubstituteSet::find(int layer_id) const noexcept {
    for (const auto &e : entries)
        if (e.layer_id == layer_id)
            return &e;
    return nullptr;
}

ChannelStats se_step(const ChannelStats &prev, const ChannelStats &w_stats,
                     const std::vector<float> *fold_bias) {
    if (prev.size() != w_stats.size())
        throw invalid_argument_error("se_step: channel counts differ (" +
                                     std::to_string(prev.size()) + " vs " +
                                     std::to_string(w_stats.size()) +
                                     "); run esa_adjust first");
    if (fold_bias && fold_bias->size() != prev.size())
        throw invalid_argument_error("se_step: fold bias length mismatch");

    ChannelStats out;
    out.mean.resize(prev.size());
    out.std.resize(prev.size());
    for (size_t k = 0; k < prev.size(); ++k) {
        double mean = static_cast<double>(w_stats.mean[k]) + static_cast<double>(prev.mean[k]);
        if (fold_bias)
            mean += static_cast<double>((*fold_bias)[k]);
        const double sw = w_stats.std[k];
        const double sp = prev.std[k];
        out.mean[k] = static_cast<float>(mean);
        out.std[k] = static_cast<float>(std::sqrt(sw * sw + sp * sp));
    }
    return out;
}

namespace {

std::vector<float> resize_vector(const std::vector<float> &src, int64_t target, EsaRule rule,
                                 bool clamp_non_negative) {
    std::vector<float> out(static_cast<size_t>(target));
    if (rule == EsaRule::Repeat) {
        for (int64_t j = 0; j < target; ++j)
            out[static_cast<size_t>(j)] = src[static_cast<size_t>(j % static_cast<int64_t>(src.size()))];
    } else {
        double lo = src[0], hi = src[0], sum = 0.0;
        for (float v : src) {
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
            sum += v;
        }
        const double mean = sum / static_cast<double>(src.size());
        double value = 0.0;
        switch (rule) {
        case EsaRule::Min: value = lo; break;
        case EsaRule::MeanMinusMin: value = mean - lo; break;
        case EsaRule::MeanPlusMin: value = mean + lo; break;
        case EsaRule::Mean: value = mean; break;
        case EsaRule::MaxMinusMean: value = hi - mean; break;
        case EsaRule::MaxPlusMean: value = hi + mean; break;
        case EsaRule::Max: value = hi; break;
        case EsaRule::Repeat: break;
        }
        std::fill(out.begin(), out.end(), static_cast<float>(value));
    }
    if (clamp_non_negative)
        for (float &v : out)
            if (v < 0.0f)
                v = 0.0f;
    return out;
}

} // namespace

ChannelStats esa_adjust(const ChannelStats &stats, int64_t target_c, const EsaPolicy &policy) {
    if (stats.size() == 0)
        throw invalid_argument_error("esa_adjust: empty stats");
    if (target_c < 1)
        throw invalid_argument_error("esa_adjust: target channel count must be >= 1");
    if (static_cast<int64_t>(stats.size()) == target_c)
        return stats;

    const bool expanding = target_c > static_cast<int64_t>(stats.size());
    ChannelStats out;
    out.mean = resize_vector(stats.mean, target_c,
                             expanding ? policy.mean_expansion : policy.mean_contraction, false);
    out.std = resize_vector(stats.std, target_c,
                            expanding ? policy.std_expansion : policy.std_contraction, true);
    return out;
}

namespace {

ChannelStats broadcast_seed(int64_t channels) {
    ChannelStats s;
    s.mean.assign(static_cast<size_t>(channels), 0.0f);
    s.std.assign(static_cast<size_t>(channels), 1.0f);
    return s;
}

ChannelStats combine_branches(const ChannelStats &a, const ChannelStats &b, int layer_id) {
    if (a.size() != b.size())
        throw invalid_argument_error("layer " + std::to_string(layer_id) +
                                     ": add branch stats lengths differ");
    ChannelStats out;
    out.mean.resize(a.size());
    out.std.resize(a.size());
    for (size_t k = 0; k < a.size(); ++k) {
        out.mean[k] = static_cast<float>(static_cast<double>(a.mean[k]) + b.mean[k]);
        const double sa = a.std[k], sb = b.std[k];
        out.std[k] = static_cast<float>(std::sqrt(sa * sa + sb * sb));
    }
    return out;
}

} // namespace

SubstituteSet estimate_substitutes(const ModelGraph &model, const EsaPolicySet &policies,
                                   bool folded_before) {
    if (folded_before && model.has_bn())
        throw invalid_argument_error(
            "estimate_substitutes: folded_before requires a BN-free model");

    const std::vector<Shape3> shapes = layer_output_shapes(model);
    SubstituteSet subs;
    ChannelStats prev;
    bool prev_is_seed = true; // scalar N(0,1) for the model input J

    for (size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec &l = model.layers[i];
        ChannelStats entry;
        try {
            switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::DepthwiseConv2d:
            case LayerKind::FullyConnected: {
                const int64_t out_c = l.weights->o;
                if (l.bn) {
                    // Live BN pins the post-BN distribution to (beta, |gamma|).
                    entry.mean = l.bn->beta;
                    entry.std.resize(l.bn->size());
                    for (size_t k = 0; k < l.bn->size(); ++k)
                        entry.std[k] = std::abs(l.bn->gamma[k]);
                } else {
                    const ChannelStats w_stats = weight_channel_stats(*l.weights);
                    const ChannelStats adjusted =
                        prev_is_seed ? broadcast_seed(out_c)
                                     : esa_adjust(prev, out_c, policies.for_layer(l.id));
                    const std::vector<float> *fold_bias = nullptr;
                    if (folded_before && l.bias && l.bias_from_fold)
                        fold_bias = &*l.bias;
                    entry = se_step(adjusted, w_stats, fold_bias);
                }
                break;
            }
            case LayerKind::Add: {
                const SubstituteSet::Entry *src = subs.find(l.residual_source);
                if (!src)
                    throw invalid_argument_error("add references layer without substitute entry");
                entry = combine_branches(prev_is_seed ? broadcast_seed(src->stats.size()) : prev,
                                         src->stats, l.id);
                break;
            }
            case LayerKind::GlobalAvgPool:
                entry = prev_is_seed ? broadcast_seed(shapes[i].c) : prev;
                break;
            case LayerKind::Flatten:
                entry = prev_is_seed ? broadcast_seed(shapes[i].c)
                                     : esa_adjust(prev, shapes[i].c, policies.for_layer(l.id));
                break;
            }
        } catch (const invalid_argument_error &e) {
            throw invalid_argument_error("layer " + std::to_string(l.id) + ": " + e.what());
        }
        subs.entries.push_back({l.id, entry});
        prev = std::move(entry);
        prev_is_seed = false;
    }
    return subs;
}

void save_substitutes(const SubstituteSet &subs, const std::string &path) {
    nlohmann::ordered_json doc;
    doc["format"] = "gzsq-subs/1";
    doc["entries"] = nlohmann::ordered_json::array();
    for (const auto &e : subs.entries) {
        nlohmann::ordered_json j;
        j["layer"] = e.layer_id;
        j["mean"] = e.stats.mean;
        j["std"] = e.stats.std;
        doc["entries"].push_back(std::move(j));
    }
    io::write_json_file(path, doc);
}

SubstituteSet load_substitutes(const std::string &path) {
    const auto doc = io::parse_json_file(path);
    try {
        if (doc.value("format", std::string()) != "gzsq-subs/1")
            throw version_error("unsupported substitute-set format in " + path);
        SubstituteSet subs;
        for (const auto &j : doc.at("entries")) {
            SubstituteSet::Entry e;
            e.layer_id = j.at("layer").get<int>();
            e.stats.mean = j.at("mean").get<std::vector<float>>();
            e.stats.std = j.at("std").get<std::vector<float>>();
            if (e.stats.mean.size() != e.stats.std.size())
                throw parse_error("substitute entry mean/std lengths differ");
            subs.entries.push_back(std::move(e));
        }
        return subs;
    } catch (const nlohmann::json::exception &e) {
        throw parse_error(path + ": " + e.what());
    }
}

} // namespace gzsq
