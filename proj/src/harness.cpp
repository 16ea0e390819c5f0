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
#include "gzsq/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gzsq/io.hpp"

namespace gzsq {

const char *to_string(DatasetKind k) {
    return k == DatasetKind::GaussianBlobs ? "gaussian-blobs" : "striped-patterns";
}

DatasetKind dataset_kind_from_string(const std::string &s) {
    if (s == "gaussian-blobs") return DatasetKind::GaussianBlobs;
    if (s == "striped-patterns") return DatasetKind::StripedPatterns;
    throw parse_error("unknown dataset kind: " + s);
}

namespace {

// Bilinear upsampling of a coarse grid to (h, w); the smoothness keeps class
// patterns learnable by small kernels.
std::vector<float> upsample_grid(const std::vector<double> &grid, int64_t gh, int64_t gw,
                                 int64_t h, int64_t w) {
    std::vector<float> out(static_cast<size_t>(h * w));
    for (int64_t y = 0; y < h; ++y) {
        const double u = h == 1 ? 0.0 : static_cast<double>(y) * (gh - 1) / (h - 1);
        const int64_t u0 = std::min<int64_t>(static_cast<int64_t>(u), gh - 1);
        const int64_t u1 = std::min<int64_t>(u0 + 1, gh - 1);
        const double fu = u - u0;
        for (int64_t x = 0; x < w; ++x) {
            const double v = w == 1 ? 0.0 : static_cast<double>(x) * (gw - 1) / (w - 1);
            const int64_t v0 = std::min<int64_t>(static_cast<int64_t>(v), gw - 1);
            const int64_t v1 = std::min<int64_t>(v0 + 1, gw - 1);
            const double fv = v - v0;
            const double a = grid[static_cast<size_t>(u0 * gw + v0)] * (1 - fu) * (1 - fv) +
                             grid[static_cast<size_t>(u1 * gw + v0)] * fu * (1 - fv) +
                             grid[static_cast<size_t>(u0 * gw + v1)] * (1 - fu) * fv +
                             grid[static_cast<size_t>(u1 * gw + v1)] * fu * fv;
            out[static_cast<size_t>(y * w + x)] = static_cast<float>(a);
        }
    }
    return out;
}

} // namespace

Dataset gen_dataset(DatasetKind kind, int classes, int n_per_class, Shape3 shape, uint64_t seed,
                    const std::string &split, double separation) {
    if (classes < 2)
        throw invalid_argument_error("gen_dataset: need at least 2 classes");
    if (n_per_class < 1)
        throw invalid_argument_error("gen_dataset: n_per_class must be >= 1");
    if (shape.c < 1 || shape.h < 1 || shape.w < 1)
        throw invalid_argument_error("gen_dataset: invalid sample shape");

    // The class signal is a function of the seed alone; the split tag only
    // shifts the noise stream, so train/test pairs built with one seed share
    // their classes but not their samples.
    uint64_t split_hash = 1469598103934665603ULL;
    for (char c : split)
        split_hash = (split_hash ^ static_cast<uint64_t>(c)) * 1099511628211ULL;
    RngState pattern_rng(seed);
    RngState rng(seed ^ split_hash);
    const int64_t n_total = static_cast<int64_t>(classes) * n_per_class;
    Dataset d;
    d.num_classes = classes;
    d.split = split;
    d.samples = Tensor({n_total, shape.c, shape.h, shape.w});
    d.labels.resize(static_cast<size_t>(n_total));

    const int64_t plane = shape.h * shape.w;
    const int64_t sample_numel = shape.c * plane;

    if (kind == DatasetKind::GaussianBlobs) {
        // Class means: smooth random patterns scaled to L2 norm `separation`.
        const int64_t gh = 3, gw = 3;
        std::vector<std::vector<float>> means(static_cast<size_t>(classes));
        for (int k = 0; k < classes; ++k) {
            std::vector<float> pattern(static_cast<size_t>(sample_numel));
            for (int64_t c = 0; c < shape.c; ++c) {
                std::vector<double> grid(static_cast<size_t>(gh * gw));
                for (auto &g : grid) {
                    double z0, z1;
                    pattern_rng.normal_pair(z0, z1);
                    g = z0;
                }
                const auto up = upsample_grid(grid, gh, gw, shape.h, shape.w);
                std::copy(up.begin(), up.end(), pattern.begin() + c * plane);
            }
            double norm = 0.0;
            for (float v : pattern)
                norm += static_cast<double>(v) * v;
            norm = std::sqrt(norm);
            const double scale = norm > 0.0 ? separation / norm : 0.0;
            for (float &v : pattern)
                v = static_cast<float>(v * scale);
            means[static_cast<size_t>(k)] = std::move(pattern);
        }
        for (int64_t i = 0; i < n_total; ++i) {
            const int k = static_cast<int>(i % classes);
            d.labels[static_cast<size_t>(i)] = k;
            float *out = d.samples.data().data() + i * sample_numel;
            const float *m = means[static_cast<size_t>(k)].data();
            for (int64_t j = 0; j < sample_numel; j += 2) {
                double z0, z1;
                rng.normal_pair(z0, z1);
                out[j] = m[j] + static_cast<float>(z0);
                if (j + 1 < sample_numel)
                    out[j + 1] = m[j + 1] + static_cast<float>(z1);
            }
        }
    } else {
        // Oriented sinusoids with per-sample random phase; orientation and
        // frequency carry the class, so no linear separator exists.
        for (int64_t i = 0; i < n_total; ++i) {
            const int k = static_cast<int>(i % classes);
            d.labels[static_cast<size_t>(i)] = k;
            const double theta = 3.14159265358979323846 * k / classes;
            const double freq = 2.0 + static_cast<double>(k % 3);
            const double phase = rng.uniform01() * 2.0 * 3.14159265358979323846;
            const double amp = separation * 0.5;
            float *out = d.samples.data().data() + i * sample_numel;
            for (int64_t c = 0; c < shape.c; ++c) {
                for (int64_t y = 0; y < shape.h; ++y) {
                    for (int64_t x = 0; x < shape.w; ++x) {
                        const double t = std::cos(theta) * x / shape.w + std::sin(theta) * y / shape.h;
                        const double signal =
                            amp * std::sin(2.0 * 3.14159265358979323846 * freq * t + phase + 0.7 * c);
                        double z0, z1;
                        rng.normal_pair(z0, z1);
                        out[(c * shape.h + y) * shape.w + x] = static_cast<float>(signal + z0);
                    }
                }
            }
        }
    }
    return d;
}

void save_dataset(const Dataset &d, const std::string &dir) {
    io::ensure_dir(dir);
    io::write_f32_blob(dir + "/data.bin",
                       std::vector<float>(d.samples.data().begin(), d.samples.data().end()));
    std::string labels;
    for (int l : d.labels)
        labels += std::to_string(l) + "\n";
    io::write_text_file(dir + "/labels.csv", labels);
    const Shape4 &s = d.samples.shape();
    nlohmann::ordered_json meta;
    meta["format"] = "gzsq-dataset/1";
    meta["n"] = s.n;
    meta["c"] = s.c;
    meta["h"] = s.h;
    meta["w"] = s.w;
    meta["classes"] = d.num_classes;
    meta["split"] = d.split;
    io::write_json_file(dir + "/meta.json", meta);
}

Dataset load_dataset(const std::string &dir) {
    const auto meta = io::parse_json_file(dir + "/meta.json");
    try {
        if (meta.value("format", std::string()) != "gzsq-dataset/1")
            throw version_error("unsupported dataset format in " + dir);
        Dataset d;
        const Shape4 shape{meta.at("n").get<int64_t>(), meta.at("c").get<int64_t>(),
                           meta.at("h").get<int64_t>(), meta.at("w").get<int64_t>()};
        d.num_classes = meta.at("classes").get<int>();
        d.split = meta.value("split", std::string());
        d.samples =
            Tensor(shape, io::read_f32_blob(dir + "/data.bin", static_cast<size_t>(shape.numel())));
        const std::string text = io::read_text_file(dir + "/labels.csv");
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty())
                continue;
            try {
                d.labels.push_back(std::stoi(line));
            } catch (const std::exception &) {
                throw parse_error(dir + "/labels.csv: bad label line: " + line);
            }
        }
        if (static_cast<int64_t>(d.labels.size()) != shape.n)
            throw parse_error(dir + ": label count does not match sample count");
        for (int l : d.labels)
            if (l < 0 || l >= d.num_classes)
                throw parse_error(dir + ": label out of range: " + std::to_string(l));
        return d;
    } catch (const nlohmann::json::exception &e) {
        throw parse_error(dir + "/meta.json: " + e.what());
    }
}

Tensor gather_samples(const Tensor &samples, const std::vector<int64_t> &indices) {
    const Shape4 &s = samples.shape();
    const int64_t numel = s.c * s.h * s.w;
    Tensor out({static_cast<int64_t>(indices.size()), s.c, s.h, s.w});
    for (size_t i = 0; i < indices.size(); ++i) {
        const float *src = samples.data().data() + indices[i] * numel;
        std::copy(src, src + numel, out.data().data() + static_cast<int64_t>(i) * numel);
    }
    return out;
}

double CrossEntropyLoss::value(const Tensor &output, const ActivationTrace &, const Tensor &) const {
    const Shape4 &s = output.shape();
    if (s.h != 1 || s.w != 1 || s.n != static_cast<int64_t>(labels_.size()))
        throw invalid_argument_error("cross entropy: output must be (n, classes, 1, 1)");
    double total = 0.0;
    for (int64_t n = 0; n < s.n; ++n) {
        const float *row = output.data().data() + n * s.c;
        double mx = row[0];
        for (int64_t k = 1; k < s.c; ++k)
            mx = std::max(mx, static_cast<double>(row[k]));
        double lse = 0.0;
        for (int64_t k = 0; k < s.c; ++k)
            lse += std::exp(row[k] - mx);
        lse = mx + std::log(lse);
        total += lse - row[labels_[static_cast<size_t>(n)]];
    }
    return total / static_cast<double>(s.n);
}

LossSeed CrossEntropyLoss::seed(const Tensor &output, const ActivationTrace &,
                                const Tensor &) const {
    const Shape4 &s = output.shape();
    LossSeed seed;
    seed.d_output.assign(static_cast<size_t>(output.numel()), 0.0);
    const double inv_n = 1.0 / static_cast<double>(s.n);
    for (int64_t n = 0; n < s.n; ++n) {
        const float *row = output.data().data() + n * s.c;
        double mx = row[0];
        for (int64_t k = 1; k < s.c; ++k)
            mx = std::max(mx, static_cast<double>(row[k]));
        double denom = 0.0;
        for (int64_t k = 0; k < s.c; ++k)
            denom += std::exp(row[k] - mx);
        for (int64_t k = 0; k < s.c; ++k) {
            const double soft = std::exp(row[k] - mx) / denom;
            const double target = k == labels_[static_cast<size_t>(n)] ? 1.0 : 0.0;
            seed.d_output[static_cast<size_t>(n * s.c + k)] = (soft - target) * inv_n;
        }
    }
    return seed;
}

void refresh_bn_stats(ModelGraph &model, const Tensor &batch, double momentum) {
    const ForwardResult fwd = forward(model, batch, TraceMode::Full);
    for (size_t i = 0; i < model.layers.size(); ++i) {
        LayerSpec &l = model.layers[i];
        if (!l.bn)
            continue;
        const ChannelStats st = activation_channel_stats(*fwd.trace->entries[i].conv_out);
        for (size_t k = 0; k < st.size(); ++k) {
            l.bn->running_mean[k] = static_cast<float>((1.0 - momentum) * l.bn->running_mean[k] +
                                                       momentum * st.mean[k]);
            l.bn->running_std[k] = static_cast<float>((1.0 - momentum) * l.bn->running_std[k] +
                                                      momentum * st.std[k]);
        }
    }
}

namespace {

// Per-parameter Adam buffers.
struct AdamBuf {
    std::vector<double> m, v;

    void step(std::span<float> param, const std::vector<float> &grad, double lr, int t) {
        if (m.empty()) {
            m.assign(param.size(), 0.0);
            v.assign(param.size(), 0.0);
        }
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t));
        for (size_t j = 0; j < param.size(); ++j) {
            const double g = grad[j];
            m[j] = 0.9 * m[j] + 0.1 * g;
            v[j] = 0.999 * v[j] + 0.001 * g * g;
            param[j] = static_cast<float>(param[j] - lr * (m[j] / bc1) /
                                                         (std::sqrt(v[j] / bc2) + 1e-8));
        }
    }
};

Tensor bn_refresh_batch(const Dataset &train) {
    const int64_t n = std::min<int64_t>(train.size(), 256);
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        idx[static_cast<size_t>(i)] = i;
    return gather_samples(train.samples, idx);
}

} // namespace

ModelGraph train_tiny(const ModelGraph &model0, const Dataset &train, int epochs, double lr,
                      uint64_t seed) {
    ModelGraph model = model0;
    if (epochs == 0)
        return model;
    const auto shapes = layer_output_shapes(model);
    if (shapes.back().c != train.num_classes || shapes.back().h != 1 || shapes.back().w != 1)
        throw invalid_argument_error("train_tiny: model output width must equal class count");

    RngState rng(seed);
    const int64_t batch_size = 32;
    const Tensor stats_batch = model.has_bn() ? bn_refresh_batch(train) : Tensor();
    const int64_t n = train.size();
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        order[static_cast<size_t>(i)] = i;

    struct LayerBufs {
        AdamBuf w, b, gamma, beta;
    };
    std::vector<LayerBufs> bufs(model.layers.size());
    int t = 0;

    const bool has_bn = model.has_bn();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const double epoch_lr = lr;
        // Fisher-Yates with the run RNG keeps epochs deterministic.
        for (int64_t i = n - 1; i > 0; --i) {
            const int64_t j = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        for (int64_t start = 0; start < n; start += batch_size) {
            // Frequent refreshes from a fixed subset keep the frozen stats
            // close to the drifting weights, so the final refresh barely
            // moves the function.
            if (has_bn && (start / batch_size) % 4 == 0)
                refresh_bn_stats(model, stats_batch);
            const int64_t count = std::min(batch_size, n - start);
            std::vector<int64_t> idx(order.begin() + start, order.begin() + start + count);
            Tensor x = gather_samples(train.samples, idx);
            std::vector<int> labels(static_cast<size_t>(count));
            for (int64_t i = 0; i < count; ++i)
                labels[static_cast<size_t>(i)] = train.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];

            const CrossEntropyLoss loss(labels);
            Gradients grads;
            try {
                grads = backward(model, x, loss, true);
            } catch (const numeric_fault &e) {
                throw numeric_fault("train_tiny: " + std::string(e.what()));
            }
            if (!std::isfinite(grads.loss))
                throw numeric_fault("train_tiny: loss diverged");

            ++t;
            for (size_t li = 0; li < model.layers.size(); ++li) {
                LayerSpec &l = model.layers[li];
                const LayerGrads &g = grads.d_layers[li];
                if (g.d_weights && l.weights)
                    bufs[li].w.step(l.weights->data, g.d_weights->data, epoch_lr, t);
                if (g.d_bias && l.bias)
                    bufs[li].b.step(*l.bias, g.d_bias.value(), epoch_lr, t);
                if (g.d_gamma && l.bn) {
                    bufs[li].gamma.step(l.bn->gamma, g.d_gamma.value(), epoch_lr, t);
                    bufs[li].beta.step(l.bn->beta, g.d_beta.value(), epoch_lr, t);
                }
            }
        }
    }
    // Long-term statistics for inference come from a fixed training subset.
    if (has_bn)
        refresh_bn_stats(model, bn_refresh_batch(train));
    return model;
}

namespace {

template <typename ForwardFn>
double accuracy_with(ForwardFn &&fn, const Dataset &d) {
    const int64_t n = d.size();
    const int64_t chunk = 128;
    int64_t correct = 0;
    for (int64_t start = 0; start < n; start += chunk) {
        const int64_t count = std::min(chunk, n - start);
        std::vector<int64_t> idx(static_cast<size_t>(count));
        for (int64_t i = 0; i < count; ++i)
            idx[static_cast<size_t>(i)] = start + i;
        const Tensor out = fn(gather_samples(d.samples, idx));
        const Shape4 &s = out.shape();
        for (int64_t i = 0; i < count; ++i) {
            const float *row = out.data().data() + i * s.c;
            int64_t best = 0;
            for (int64_t k = 1; k < s.c; ++k)
                if (row[k] > row[best]) // ties break toward the lowest class id
                    best = k;
            if (static_cast<int>(best) == d.labels[static_cast<size_t>(start + i)])
                ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

} // namespace

double eval_accuracy(const ModelGraph &model, const Dataset &d) {
    return accuracy_with([&](const Tensor &x) { return forward(model, x).output; }, d);
}

double eval_accuracy(const QuantizedModel &qm, const Dataset &d) {
    return accuracy_with([&](const Tensor &x) { return quantized_forward(qm, x); }, d);
}

namespace {

WeightTensor random_weights(int64_t o, int64_t i, int64_t kh, int64_t kw, double sigma,
                            RngState &rng) {
    WeightTensor w;
    w.o = o;
    w.i = i;
    w.kh = kh;
    w.kw = kw;
    w.data.resize(static_cast<size_t>(w.numel()));
    for (size_t j = 0; j < w.data.size(); j += 2) {
        double z0, z1;
        rng.normal_pair(z0, z1);
        w.data[j] = static_cast<float>(sigma * z0);
        if (j + 1 < w.data.size())
            w.data[j + 1] = static_cast<float>(sigma * z1);
    }
    return w;
}

BNParams identity_bn(int64_t c) {
    BNParams bn;
    bn.gamma.assign(static_cast<size_t>(c), 1.0f);
    bn.beta.assign(static_cast<size_t>(c), 0.0f);
    bn.running_mean.assign(static_cast<size_t>(c), 0.0f);
    bn.running_std.assign(static_cast<size_t>(c), 1.0f);
    bn.epsilon = 1e-5f;
    return bn;
}

} // namespace

ModelGraph make_reference_cnn(Shape3 input_shape, int classes, bool with_bn, uint64_t seed,
                              int conv_layers) {
    if (conv_layers < 2)
        throw invalid_argument_error("make_reference_cnn: need at least 2 conv layers");
    RngState rng(seed);
    ModelGraph m;
    m.input_shape = input_shape;
    m.name = with_bn ? "reference-bn" : "reference-plain";
    m.version = "1";
    const int64_t width = 8;

    auto conv = [&](int id, int64_t in_c, int64_t out_c, int stride) {
        LayerSpec l;
        l.id = id;
        l.kind = LayerKind::Conv2d;
        const double sigma = std::sqrt(2.0 / static_cast<double>(in_c * 9));
        l.weights = random_weights(out_c, in_c, 3, 3, sigma, rng);
        l.stride = stride;
        l.padding = 1;
        l.activation = Activation::ReLU;
        if (with_bn)
            l.bn = identity_bn(out_c);
        return l;
    };

    int id = 0;
    m.layers.push_back(conv(id, input_shape.c, width, 1));
    ++id;
    m.layers.push_back(conv(id, width, width, 2));
    ++id;
    for (; id < conv_layers; ++id)
        m.layers.push_back(conv(id, width, width, 1));
    LayerSpec pool;
    pool.id = id++;
    pool.kind = LayerKind::GlobalAvgPool;
    m.layers.push_back(pool);
    LayerSpec fc;
    fc.id = id;
    fc.kind = LayerKind::FullyConnected;
    fc.weights = random_weights(classes, width, 1, 1, std::sqrt(2.0 / static_cast<double>(width)), rng);
    m.layers.push_back(fc);
    return m;
}

ModelGraph make_distill_fixture(uint64_t seed) {
    RngState rng(seed);
    ModelGraph m;
    m.input_shape = {8, 8, 8};
    m.name = "distill-fixture";
    m.version = "1";
    for (int i = 0; i < 4; ++i) {
        LayerSpec l;
        l.id = i;
        l.kind = LayerKind::Conv2d;
        // N(0.2, 0.3^2) weights: the positive bias gives every layer's mean
        // statistics a coherent, reachable offset from the unit-Gaussian
        // start, so the convergence regression measures optimizer progress
        // rather than sampling-noise cancellation.
        WeightTensor w;
        w.o = 8;
        w.i = 8;
        w.kh = 3;
        w.kw = 3;
        w.data.resize(static_cast<size_t>(w.numel()));
        for (size_t j = 0; j < w.data.size(); j += 2) {
            double z0, z1;
            rng.normal_pair(z0, z1);
            w.data[j] = static_cast<float>(0.2 + 0.3 * z0);
            if (j + 1 < w.data.size())
                w.data[j + 1] = static_cast<float>(0.2 + 0.3 * z1);
        }
        l.weights = std::move(w);
        l.stride = 1;
        l.padding = 1;
        l.activation = Activation::None;
        m.layers.push_back(std::move(l));
    }
    return m;
}

ModelGraph random_model(uint64_t seed, const RandomModelOptions &opts) {
    RngState rng(seed);
    ModelGraph m;
    const int64_t spatial = 5 + static_cast<int64_t>(rng.next_below(4)); // 5..8
    int64_t channels = 2 + static_cast<int64_t>(rng.next_below(2));      // 2..3
    m.input_shape = {channels, spatial, spatial};
    m.name = "random-" + std::to_string(seed);
    m.version = "1";

    const int n_layers =
        opts.min_layers + static_cast<int>(rng.next_below(
                              static_cast<uint64_t>(opts.max_layers - opts.min_layers + 1)));
    std::vector<Shape3> shapes;
    Shape3 cur = m.input_shape;
    int id = 0;
    for (int i = 0; i < n_layers; ++i) {
        const uint64_t pick = rng.next_below(10);
        LayerSpec l;
        l.id = id;
        if (opts.allow_residual && pick < 2 && !shapes.empty()) {
            // Residual add against the most recent earlier layer with a
            // matching output shape, if any.
            int source = -1;
            for (int j = static_cast<int>(shapes.size()) - 1; j >= 0; --j) {
                if (shapes[static_cast<size_t>(j)] == cur && j != static_cast<int>(shapes.size()) - 1) {
                    source = j;
                    break;
                }
            }
            if (source >= 0) {
                l.kind = LayerKind::Add;
                l.residual_source = source;
                l.activation = rng.next_below(2) ? Activation::ReLU : Activation::None;
                m.layers.push_back(l);
                shapes.push_back(cur);
                ++id;
                continue;
            }
        }
        if (opts.allow_depthwise && pick < 4) {
            l.kind = LayerKind::DepthwiseConv2d;
            const int64_t k = 3;
            l.weights = random_weights(channels, 1, k, k,
                                       1.0 / std::sqrt(static_cast<double>(k * k)), rng);
            l.padding = 1;
        } else {
            l.kind = LayerKind::Conv2d;
            const int64_t out_c = 2 + static_cast<int64_t>(rng.next_below(4)); // 2..5
            const int64_t k = rng.next_below(2) ? 3 : 1;
            l.weights = random_weights(out_c, channels, k, k,
                                       1.0 / std::sqrt(static_cast<double>(channels * k * k)), rng);
            l.padding = k == 3 ? 1 : 0;
            channels = out_c;
        }
        const uint64_t act = rng.next_below(3);
        l.activation = act == 0 ? Activation::None : (act == 1 ? Activation::ReLU : Activation::ReLU6);
        if (opts.allow_bn && rng.next_below(10) < 4) {
            BNParams bn = identity_bn(channels);
            for (size_t k = 0; k < bn.size(); ++k) {
                double z0, z1;
                rng.normal_pair(z0, z1);
                bn.gamma[k] = static_cast<float>(0.5 + rng.uniform01());
                bn.beta[k] = static_cast<float>(0.3 * z0);
                bn.running_mean[k] = static_cast<float>(0.3 * z1);
                bn.running_std[k] = static_cast<float>(0.5 + rng.uniform01());
            }
            l.bn = std::move(bn);
        }
        m.layers.push_back(std::move(l));
        cur = {channels, cur.h, cur.w};
        shapes.push_back(cur);
        ++id;
    }
    return m;
}

} // namespace gzsq
