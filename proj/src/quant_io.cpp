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

#include "gzsq/io.hpp"
#include "gzsq/quant.hpp"

namespace gzsq {

namespace {

using nlohmann::ordered_json;

constexpr const char *kQModelFormat = "gzsq-qmodel/1";

ordered_json params_to_json(const QuantParams &p) {
    ordered_json j;
    j["bits"] = p.bits;
    j["granularity"] = to_string(p.granularity);
    j["symmetry"] = to_string(p.symmetry);
    j["scale"] = p.scale;
    j["zero_point"] = p.zero_point;
    return j;
}

QuantParams params_from_json(const ordered_json &j) {
    QuantParams p;
    p.bits = j.at("bits").get<int>();
    p.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    p.symmetry = symmetry_from_string(j.at("symmetry").get<std::string>());
    p.scale = j.at("scale").get<std::vector<double>>();
    p.zero_point = j.at("zero_point").get<std::vector<double>>();
    if (p.scale.size() != p.zero_point.size() || p.scale.empty())
        throw parse_error("qparams: malformed scale/zero_point vectors");
    return p;
}

std::string payload_blob_name(int layer_id) {
    return "layer" + std::to_string(layer_id) + ".qweight.bin";
}

} // namespace

void save_quantized_model(const QuantizedModel &qm, const std::string &dir) {
    io::ensure_dir(dir);
    save_model(qm.graph, dir + "/model");

    ordered_json doc;
    doc["format"] = kQModelFormat;
    doc["rounding"] = "half-away-from-zero";
    doc["input"] = params_to_json(qm.act.input);
    doc["activations"] = ordered_json::array();
    for (const auto &[id, p] : qm.act.per_layer) {
        ordered_json j = params_to_json(p);
        j["layer"] = id;
        doc["activations"].push_back(std::move(j));
    }
    doc["ranges"] = ordered_json::array();
    for (const auto &[id, r] : qm.act.observed_ranges)
        doc["ranges"].push_back({{"layer", id}, {"min", r.first}, {"max", r.second}});
    doc["weights"] = ordered_json::array();
    for (const auto &[id, payload] : qm.weights) {
        ordered_json j = params_to_json(payload.params);
        j["layer"] = id;
        const Shape4 &s = payload.q.shape;
        j["shape"] = {s.n, s.c, s.h, s.w};
        j["blob"] = payload_blob_name(id);
        doc["weights"].push_back(std::move(j));
        // 8-bit storage regardless of logical bits; values are pre-clamped to
        // the integer grid so the cast is lossless.
        std::vector<int8_t> bytes(payload.q.values.size());
        for (size_t k = 0; k < bytes.size(); ++k)
            bytes[k] = static_cast<int8_t>(static_cast<uint8_t>(payload.q.values[k] & 0xff));
        io::write_i8_blob(dir + "/" + payload_blob_name(id), bytes);
    }
    io::write_json_file(dir + "/qparams.json", doc);
}

void save_act_params(const ActQuantParams &act, const std::string &path) {
    ordered_json doc;
    doc["format"] = "gzsq-actparams/1";
    doc["rounding"] = "half-away-from-zero";
    doc["input"] = params_to_json(act.input);
    doc["activations"] = ordered_json::array();
    for (const auto &[id, p] : act.per_layer) {
        ordered_json j = params_to_json(p);
        j["layer"] = id;
        doc["activations"].push_back(std::move(j));
    }
    doc["ranges"] = ordered_json::array();
    for (const auto &[id, r] : act.observed_ranges)
        doc["ranges"].push_back({{"layer", id}, {"min", r.first}, {"max", r.second}});
    io::write_json_file(path, doc);
}

ActQuantParams load_act_params(const std::string &path) {
    const ordered_json doc = io::parse_json_file(path);
    try {
        if (doc.value("format", std::string()) != "gzsq-actparams/1")
            throw version_error("unsupported activation-params format in " + path);
        ActQuantParams act;
        act.input = params_from_json(doc.at("input"));
        for (const auto &j : doc.at("activations"))
            act.per_layer[j.at("layer").get<int>()] = params_from_json(j);
        if (doc.contains("ranges"))
            for (const auto &j : doc["ranges"])
                act.observed_ranges[j.at("layer").get<int>()] = {j.at("min").get<double>(),
                                                                 j.at("max").get<double>()};
        return act;
    } catch (const nlohmann::json::exception &e) {
        throw parse_error(path + ": " + e.what());
    }
}

QuantizedModel load_quantized_model(const std::string &dir) {
    const ordered_json doc = io::parse_json_file(dir + "/qparams.json");
    try {
        if (doc.value("format", std::string()) != kQModelFormat)
            throw version_error("unsupported quantized-model format in " + dir);
        QuantizedModel qm;
        qm.graph = load_model(dir + "/model");
        qm.sim_graph = qm.graph;
        qm.act.input = params_from_json(doc.at("input"));
        for (const auto &j : doc.at("activations"))
            qm.act.per_layer[j.at("layer").get<int>()] = params_from_json(j);
        if (doc.contains("ranges"))
            for (const auto &j : doc["ranges"])
                qm.act.observed_ranges[j.at("layer").get<int>()] = {j.at("min").get<double>(),
                                                                    j.at("max").get<double>()};
        for (const auto &j : doc.at("weights")) {
            const int id = j.at("layer").get<int>();
            QuantizedModel::WeightPayload payload;
            payload.params = params_from_json(j);
            const auto &sh = j.at("shape");
            payload.q.shape = {sh.at(0).get<int64_t>(), sh.at(1).get<int64_t>(),
                               sh.at(2).get<int64_t>(), sh.at(3).get<int64_t>()};
            const std::string blob = j.at("blob").get<std::string>();
            const std::string path = dir + "/" + blob;
            if (!std::filesystem::exists(path))
                throw parse_error("qparams references missing blob: " + blob);
            const auto bytes =
                io::read_i8_blob(path, static_cast<size_t>(payload.q.shape.numel()));
            payload.q.values.resize(bytes.size());
            const bool is_affine = payload.params.symmetry == Symmetry::Affine;
            for (size_t k = 0; k < bytes.size(); ++k)
                payload.q.values[k] = is_affine
                                          ? static_cast<int32_t>(static_cast<uint8_t>(bytes[k]))
                                          : static_cast<int32_t>(bytes[k]);

            // Rebuild the simulation weights from the payload.
            bool found = false;
            for (auto &l : qm.sim_graph.layers) {
                if (l.id != id)
                    continue;
                if (!l.is_conv_like() || !l.weights)
                    throw parse_error("qparams: weight payload for non-conv layer " +
                                      std::to_string(id));
                const Tensor fq = dequantize(payload.q, payload.params);
                if (fq.numel() != l.weights->numel())
                    throw parse_error("qparams: weight payload size mismatch for layer " +
                                      std::to_string(id));
                l.weights->data.assign(fq.data().begin(), fq.data().end());
                found = true;
                break;
            }
            if (!found)
                throw parse_error("qparams: weight payload for unknown layer " +
                                  std::to_string(id));
            qm.weights[id] = std::move(payload);
        }
        for (const auto &l : qm.graph.layers)
            if (!qm.act.per_layer.count(l.id))
                throw parse_error("qparams: missing activation params for layer " +
                                  std::to_string(l.id));
        return qm;
    } catch (const nlohmann::json::exception &e) {
        throw parse_error(dir + "/qparams.json: " + e.what());
    }
}

} // namespace gzsq
