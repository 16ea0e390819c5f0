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
#include <filesystem>

#include "gzsq/graph.hpp"
#include "gzsq/io.hpp"

namespace gzsq {

namespace {

using nlohmann::ordered_json;

constexpr const char *kModelFormat = "gzsq-model/1";

std::string blob_name(int layer_id, const char *what) {
    return "layer" + std::to_string(layer_id) + "." + what + ".bin";
}

void save_vector_blob(const std::string &dir, const std::string &name, const std::vector<float> &v) {
    io::write_f32_blob(dir + "/" + name, v);
}

std::vector<float> load_vector_blob(const std::string &dir, const ordered_json &manifest_entry,
                                    size_t expected) {
    if (!manifest_entry.is_string())
        throw parse_error("manifest blob reference must be a string");
    const std::string name = manifest_entry.get<std::string>();
    const std::string path = dir + "/" + name;
    if (!std::filesystem::exists(path))
        throw parse_error("manifest references missing blob: " + name);
    return io::read_f32_blob(path, expected);
}

} // namespace

void save_model(const ModelGraph &model, const std::string &dir) {
    io::ensure_dir(dir);
    ordered_json manifest;
    manifest["format"] = kModelFormat;
    manifest["name"] = model.name;
    manifest["version"] = model.version;
    manifest["input_shape"] = {model.input_shape.c, model.input_shape.h, model.input_shape.w};
    manifest["layers"] = ordered_json::array();

    for (const auto &l : model.layers) {
        ordered_json j;
        j["id"] = l.id;
        j["kind"] = to_string(l.kind);
        j["stride"] = l.stride;
        j["padding"] = l.padding;
        j["activation"] = to_string(l.activation);
        if (l.kind == LayerKind::Add)
            j["residual_source"] = l.residual_source;
        if (l.bias_from_fold)
            j["bias_from_fold"] = true;
        if (l.weights) {
            const std::string name = blob_name(l.id, "weight");
            j["weights"] = {{"shape", {l.weights->o, l.weights->i, l.weights->kh, l.weights->kw}},
                            {"blob", name}};
            save_vector_blob(dir, name, l.weights->data);
        }
        if (l.bias) {
            const std::string name = blob_name(l.id, "bias");
            j["bias"] = {{"length", l.bias->size()}, {"blob", name}};
            save_vector_blob(dir, name, *l.bias);
        }
        if (l.bn) {
            const std::string g = blob_name(l.id, "bn_gamma");
            const std::string b = blob_name(l.id, "bn_beta");
            const std::string m = blob_name(l.id, "bn_mean");
            const std::string s = blob_name(l.id, "bn_std");
            j["bn"] = {{"length", l.bn->size()}, {"epsilon", l.bn->epsilon},
                       {"gamma", g},            {"beta", b},
                       {"running_mean", m},     {"running_std", s}};
            save_vector_blob(dir, g, l.bn->gamma);
            save_vector_blob(dir, b, l.bn->beta);
            save_vector_blob(dir, m, l.bn->running_mean);
            save_vector_blob(dir, s, l.bn->running_std);
        }
        manifest["layers"].push_back(std::move(j));
    }
    io::write_json_file(dir + "/manifest.json", manifest);
}

ModelGraph load_model(const std::string &dir) {
    const ordered_json manifest = io::parse_json_file(dir + "/manifest.json");
    try {
        if (!manifest.contains("format") || !manifest["format"].is_string())
            throw parse_error("manifest missing format field");
        const std::string format = manifest["format"].get<std::string>();
        if (format != kModelFormat)
            throw version_error("unsupported model format: " + format + " (expected " +
                                kModelFormat + ")");

        ModelGraph model;
        model.name = manifest.value("name", std::string());
        model.version = manifest.value("version", std::string());
        const auto &ishape = manifest.at("input_shape");
        model.input_shape = {ishape.at(0).get<int64_t>(), ishape.at(1).get<int64_t>(),
                             ishape.at(2).get<int64_t>()};

        for (const auto &j : manifest.at("layers")) {
            LayerSpec l;
            l.id = j.at("id").get<int>();
            l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
            l.stride = j.value("stride", 1);
            l.padding = j.value("padding", 0);
            l.activation = activation_from_string(j.value("activation", std::string("none")));
            l.residual_source = j.value("residual_source", -1);
            l.bias_from_fold = j.value("bias_from_fold", false);
            if (j.contains("weights")) {
                const auto &wj = j["weights"];
                WeightTensor w;
                const auto &shape = wj.at("shape");
                w.o = shape.at(0).get<int64_t>();
                w.i = shape.at(1).get<int64_t>();
                w.kh = shape.at(2).get<int64_t>();
                w.kw = shape.at(3).get<int64_t>();
                if (w.o < 1 || w.i < 1 || w.kh < 1 || w.kw < 1)
                    throw parse_error("layer " + std::to_string(l.id) + ": bad weight shape");
                w.data = load_vector_blob(dir, wj.at("blob"), static_cast<size_t>(w.numel()));
                l.weights = std::move(w);
            }
            if (j.contains("bias")) {
                const auto &bj = j["bias"];
                const size_t len = bj.at("length").get<size_t>();
                l.bias = load_vector_blob(dir, bj.at("blob"), len);
            }
            if (j.contains("bn")) {
                const auto &bj = j["bn"];
                BNParams bn;
                const size_t len = bj.at("length").get<size_t>();
                bn.epsilon = bj.at("epsilon").get<float>();
                bn.gamma = load_vector_blob(dir, bj.at("gamma"), len);
                bn.beta = load_vector_blob(dir, bj.at("beta"), len);
                bn.running_mean = load_vector_blob(dir, bj.at("running_mean"), len);
                bn.running_std = load_vector_blob(dir, bj.at("running_std"), len);
                l.bn = std::move(bn);
            }
            model.layers.push_back(std::move(l));
        }
        return model;
    } catch (const nlohmann::json::exception &e) {
        throw parse_error(std::string("manifest.json: ") + e.what());
    }
}

} // namespace gzsq
