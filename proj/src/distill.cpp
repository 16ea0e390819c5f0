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
#include "gzsq/distill.hpp"

#include <cmath>

#include "gzsq/io.hpp"

namespace gzsq {

const char *to_string(LossKind k) {
    switch (k) {
    case LossKind::Zscore: return "zscore";
    case LossKind::L1: return "l1";
    case LossKind::L1MeanOnly: return "l1mu";
    case LossKind::L1StdOnly: return "l1sigma";
    case LossKind::L2: return "l2";
    case LossKind::L2MeanOnly: return "l2mu";
    case LossKind::L2StdOnly: return "l2sigma";
    case LossKind::KLStdOnly: return "kl";
    }
    return "?";
}

LossKind loss_kind_from_string(const std::string &s) {
    if (s == "zscore") return LossKind::Zscore;
    if (s == "l1") return LossKind::L1;
    if (s == "l1mu") return LossKind::L1MeanOnly;
    if (s == "l1sigma") return LossKind::L1StdOnly;
    if (s == "l2") return LossKind::L2;
    if (s == "l2mu") return LossKind::L2MeanOnly;
    if (s == "l2sigma") return LossKind::L2StdOnly;
    if (s == "kl") return LossKind::KLStdOnly;
    throw parse_error("unknown loss kind: " + s);
}

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Value and stat-space gradient of one matching term. d_mu/d_sigma are only
// filled when grad is requested.
double stat_distance(const ChannelStats &u, const ChannelStats &v, LossKind kind, double s,
                     bool average_channels, std::vector<double> *d_mu, std::vector<double> *d_sigma) {
    if (u.size() != v.size())
        throw invalid_argument_error("stat loss: channel counts differ (" +
                                     std::to_string(u.size()) + " vs " + std::to_string(v.size()) +
                                     ")");
    const size_t c = u.size();
    if (d_mu) {
        d_mu->assign(c, 0.0);
        d_sigma->assign(c, 0.0);
    }
    const double norm = average_channels ? 1.0 / static_cast<double>(c) : 1.0;

    if (kind == LossKind::KLStdOnly) {
        // 1 - 0.5 * KL(p, q) with p, q the std vectors floored at s and
        // renormalized to sum 1.
        std::vector<double> a(c), q(c);
        double sa = 0.0, sq = 0.0;
        for (size_t k = 0; k < c; ++k) {
            a[k] = std::max(static_cast<double>(u.std[k]), s);
            q[k] = std::max(static_cast<double>(v.std[k]), s);
            sa += a[k];
            sq += q[k];
        }
        double kl = 0.0;
        for (size_t k = 0; k < c; ++k) {
            const double p_k = a[k] / sa;
            kl += p_k * (std::log(p_k) - std::log(q[k] / sq));
        }
        if (d_mu) {
            for (size_t k = 0; k < c; ++k) {
                if (static_cast<double>(u.std[k]) <= s)
                    continue; // floor active
                const double p_k = a[k] / sa;
                const double dkl_da = (std::log(p_k) - std::log(q[k] / sq) - kl) / sa;
                (*d_sigma)[k] = -0.5 * dkl_da;
            }
        }
        return 1.0 - 0.5 * kl;
    }

    double total = 0.0;
    for (size_t k = 0; k < c; ++k) {
        const double dmu = static_cast<double>(u.mean[k]) - v.mean[k];
        const double dsg = static_cast<double>(u.std[k]) - v.std[k];
        double val = 0.0, g_mu = 0.0, g_sigma = 0.0;
        switch (kind) {
        case LossKind::Zscore: {
            const double su = u.std[k] + s;
            const double sv = v.std[k] + s;
            const double denom = std::sqrt(su * su + sv * sv);
            val = std::abs(dmu) / denom;
            g_mu = sign(dmu) / denom;
            g_sigma = -std::abs(dmu) * su / (denom * denom * denom);
            break;
        }
        case LossKind::L1:
            val = std::abs(dmu) + std::abs(dsg);
            g_mu = sign(dmu);
            g_sigma = sign(dsg);
            break;
        case LossKind::L1MeanOnly:
            val = std::abs(dmu);
            g_mu = sign(dmu);
            break;
        case LossKind::L1StdOnly:
            val = std::abs(dsg);
            g_sigma = sign(dsg);
            break;
        case LossKind::L2:
            val = dmu * dmu + dsg * dsg;
            g_mu = 2.0 * dmu;
            g_sigma = 2.0 * dsg;
            break;
        case LossKind::L2MeanOnly:
            val = dmu * dmu;
            g_mu = 2.0 * dmu;
            break;
        case LossKind::L2StdOnly:
            val = dsg * dsg;
            g_sigma = 2.0 * dsg;
            break;
        case LossKind::KLStdOnly:
            throw unsupported_op("unreachable loss kind");
        }
        total += val;
        if (d_mu) {
            (*d_mu)[k] = g_mu * norm;
            (*d_sigma)[k] = g_sigma * norm;
        }
    }
    return total * norm;
}

// Chains stat-space gradients back to the tensor: d mu_k / dx = 1/M and
// d sigma_k / dx_i = (x_i - mu_k) / (M * (sigma_k + s)), the same guard the
// loss itself uses.
std::vector<double> stats_backward(const Tensor &t, const ChannelStats &st,
                                   const std::vector<double> &d_mu,
                                   const std::vector<double> &d_sigma, double s) {
    const Shape4 &sh = t.shape();
    const int64_t plane = sh.h * sh.w;
    const double m = static_cast<double>(sh.n * plane);
    std::vector<double> adj(static_cast<size_t>(t.numel()), 0.0);
    for (int64_t n = 0; n < sh.n; ++n) {
        for (int64_t c = 0; c < sh.c; ++c) {
            const size_t k = static_cast<size_t>(c);
            const double gm = d_mu[k] / m;
            const double gs = d_sigma[k] / (m * (static_cast<double>(st.std[k]) + s));
            const float *p = t.data().data() + (n * sh.c + c) * plane;
            double *o = adj.data() + (n * sh.c + c) * plane;
            for (int64_t j = 0; j < plane; ++j)
                o[j] = gm + gs * (p[j] - st.mean[k]);
        }
    }
    return adj;
}

ChannelStats unit_target(size_t channels) {
    ChannelStats t;
    t.mean.assign(channels, 0.0f);
    t.std.assign(channels, 1.0f);
    return t;
}

} // namespace

double zscore_loss(const ChannelStats &u, const ChannelStats &v, double s) {
    if (!(s > 0.0))
        throw invalid_argument_error("zscore_loss: guard s must be > 0");
    return stat_distance(u, v, LossKind::Zscore, s, true, nullptr, nullptr);
}

StatMatchLoss::StatMatchLoss(std::vector<Term> terms, LossKind kind, double s,
                             bool average_channels, bool input_prior)
    : terms_(std::move(terms)), kind_(kind), s_(s), average_channels_(average_channels),
      input_prior_(input_prior) {
    if (!(s_ > 0.0))
        throw invalid_argument_error("stat loss: guard s must be > 0");
}

double StatMatchLoss::value(const Tensor &, const ActivationTrace &trace,
                            const Tensor &input) const {
    double total = 0.0;
    for (const auto &term : terms_) {
        const auto *entry = trace.find(term.layer_id);
        if (!entry)
            throw invalid_argument_error("stat loss: no traced activation for layer " +
                                         std::to_string(term.layer_id));
        const Tensor &t = term.tap == TapPoint::ConvOut ? *entry->conv_out : entry->post_activation;
        total += stat_distance(activation_channel_stats(t), term.target, kind_, s_,
                               average_channels_, nullptr, nullptr);
    }
    if (input_prior_) {
        const ChannelStats st = activation_channel_stats(input);
        total += stat_distance(st, unit_target(st.size()), kind_, s_, average_channels_, nullptr,
                               nullptr);
    }
    return total;
}

std::vector<double> StatMatchLoss::term_values(const ActivationTrace &trace,
                                               const Tensor &input) const {
    std::vector<double> vals;
    for (const auto &term : terms_) {
        const auto *entry = trace.find(term.layer_id);
        if (!entry)
            throw invalid_argument_error("stat loss: no traced activation for layer " +
                                         std::to_string(term.layer_id));
        const Tensor &t = term.tap == TapPoint::ConvOut ? *entry->conv_out : entry->post_activation;
        vals.push_back(stat_distance(activation_channel_stats(t), term.target, kind_, s_,
                                     average_channels_, nullptr, nullptr));
    }
    if (input_prior_) {
        const ChannelStats st = activation_channel_stats(input);
        vals.push_back(
            stat_distance(st, unit_target(st.size()), kind_, s_, average_channels_, nullptr, nullptr));
    }
    return vals;
}

LossSeed StatMatchLoss::seed(const Tensor &, const ActivationTrace &trace,
                             const Tensor &input) const {
    LossSeed seed;
    for (const auto &term : terms_) {
        const auto *entry = trace.find(term.layer_id);
        if (!entry)
            throw invalid_argument_error("stat loss: no traced activation for layer " +
                                         std::to_string(term.layer_id));
        if (term.tap == TapPoint::ConvOut && !entry->conv_out)
            throw invalid_argument_error("stat loss: layer " + std::to_string(term.layer_id) +
                                         " has no conv output tap");
        const Tensor &t = term.tap == TapPoint::ConvOut ? *entry->conv_out : entry->post_activation;
        const ChannelStats st = activation_channel_stats(t);
        std::vector<double> d_mu, d_sigma;
        stat_distance(st, term.target, kind_, s_, average_channels_, &d_mu, &d_sigma);
        seed.injections.push_back(
            {term.layer_id, term.tap, stats_backward(t, st, d_mu, d_sigma, s_)});
    }
    if (input_prior_) {
        const ChannelStats st = activation_channel_stats(input);
        std::vector<double> d_mu, d_sigma;
        stat_distance(st, unit_target(st.size()), kind_, s_, average_channels_, &d_mu, &d_sigma);
        seed.d_input = stats_backward(input, st, d_mu, d_sigma, s_);
    }
    return seed;
}

StatMatchLoss make_distill_loss(const ModelGraph &model, const SubstituteSet &subs, LossKind kind,
                                double s) {
    std::vector<StatMatchLoss::Term> terms;
    for (const auto &l : model.layers) {
        const auto *e = subs.find(l.id);
        if (!e)
            throw invalid_argument_error("distill: missing substitute for traced layer " +
                                         std::to_string(l.id));
        terms.push_back({l.id, TapPoint::PostActivation, e->stats});
    }
    return StatMatchLoss(std::move(terms), kind, s, /*average_channels=*/true,
                         /*input_prior=*/true);
}

double distill_loss(const ModelGraph &model, const Tensor &y, const SubstituteSet &subs,
                    LossKind kind, double s) {
    const StatMatchLoss loss = make_distill_loss(model, subs, kind, s);
    const ForwardResult fwd = forward(model, y, TraceMode::Post);
    return loss.value(fwd.output, *fwd.trace, y);
}

void DistillConfig::validate() const {
    if (iterations < 1)
        throw invalid_argument_error("distill: iterations must be >= 1");
    if (!(learning_rate > 0.0))
        throw invalid_argument_error("distill: learning rate must be > 0");
    if (batch < 1)
        throw invalid_argument_error("distill: batch must be >= 1");
    if (!(s > 0.0))
        throw invalid_argument_error("distill: guard s must be > 0");
}

DistilledData optimize_input(const ModelGraph &model, const LossFunction &loss,
                             const DistillConfig &config) {
    config.validate();
    RngState rng(config.seed);
    const Shape4 shape{config.batch, model.input_shape.c, model.input_shape.h,
                       model.input_shape.w};
    Tensor y0 = gaussian_tensor(shape, 0.0, 1.0, rng);

    const size_t n = static_cast<size_t>(y0.numel());
    std::vector<double> y(n), m(n, 0.0), v(n, 0.0);
    for (size_t j = 0; j < n; ++j)
        y[j] = y0.data()[j];

    DistilledData out;
    out.loss_history.reserve(static_cast<size_t>(config.iterations));
    Tensor best = y0;
    double best_loss = std::numeric_limits<double>::infinity();

    Tensor cur = y0;
    for (int it = 0; it < config.iterations; ++it) {
        Gradients grads;
        try {
            grads = backward(model, cur, loss, false);
        } catch (const numeric_fault &e) {
            throw numeric_fault("distill: " + std::string(e.what()) + " at iteration " +
                                std::to_string(it));
        }
        if (!std::isfinite(grads.loss))
            throw numeric_fault("distill: non-finite loss at iteration " + std::to_string(it));
        out.loss_history.push_back(grads.loss);
        if (grads.loss < best_loss) {
            best_loss = grads.loss;
            best = cur;
        }

        const double t = static_cast<double>(it + 1);
        const double bc1 = 1.0 - std::pow(config.beta1, t);
        const double bc2 = 1.0 - std::pow(config.beta2, t);
        for (size_t j = 0; j < n; ++j) {
            const double g = grads.d_input.data()[j];
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            y[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
            cur.data()[j] = static_cast<float>(y[j]);
        }
    }

    out.data = std::move(best);
    out.initial_loss = out.loss_history.front();
    out.final_loss = best_loss;
    return out;
}

DistilledData distill(const ModelGraph &model, const SubstituteSet &subs,
                      const DistillConfig &config) {
    const StatMatchLoss loss = make_distill_loss(model, subs, config.loss_kind, config.s);
    DistilledData out = optimize_input(model, loss, config);

    // Per-term breakdown at the returned iterate.
    const ForwardResult fwd = forward(model, out.data, TraceMode::Post);
    const std::vector<double> vals = loss.term_values(*fwd.trace, out.data);
    for (size_t i = 0; i < loss.terms().size(); ++i)
        out.final_layer_losses.emplace_back(loss.terms()[i].layer_id, vals[i]);
    out.final_input_prior = vals.back();
    return out;
}

void save_distilled(const DistilledData &d, const DistillConfig &config, const std::string &dir) {
    io::ensure_dir(dir);
    io::write_f32_blob(dir + "/data.bin",
                       std::vector<float>(d.data.data().begin(), d.data.data().end()));
    nlohmann::ordered_json meta;
    meta["format"] = "gzsq-distill/1";
    const Shape4 &s = d.data.shape();
    meta["shape"] = {s.n, s.c, s.h, s.w};
    meta["seed"] = config.seed;
    meta["config"] = {{"iterations", config.iterations},
                      {"learning_rate", config.learning_rate},
                      {"batch", config.batch},
                      {"loss", to_string(config.loss_kind)},
                      {"s", config.s}};
    meta["initial_loss"] = d.initial_loss;
    meta["final_loss"] = d.final_loss;
    meta["loss_history"] = d.loss_history;
    nlohmann::ordered_json layer_losses = nlohmann::ordered_json::array();
    for (const auto &[id, v] : d.final_layer_losses)
        layer_losses.push_back({{"layer", id}, {"loss", v}});
    meta["final_layer_losses"] = std::move(layer_losses);
    meta["final_input_prior"] = d.final_input_prior;
    io::write_json_file(dir + "/meta.json", meta);
}

DistilledData load_distilled(const std::string &dir) {
    const auto meta = io::parse_json_file(dir + "/meta.json");
    try {
        if (meta.value("format", std::string()) != "gzsq-distill/1")
            throw version_error("unsupported distilled-data format in " + dir);
        DistilledData d;
        const auto &sh = meta.at("shape");
        const Shape4 shape{sh.at(0).get<int64_t>(), sh.at(1).get<int64_t>(),
                           sh.at(2).get<int64_t>(), sh.at(3).get<int64_t>()};
        d.data = Tensor(shape, io::read_f32_blob(dir + "/data.bin",
                                                 static_cast<size_t>(shape.numel())));
        d.initial_loss = meta.at("initial_loss").get<double>();
        d.final_loss = meta.at("final_loss").get<double>();
        d.loss_history = meta.at("loss_history").get<std::vector<double>>();
        for (const auto &j : meta.at("final_layer_losses"))
            d.final_layer_losses.emplace_back(j.at("layer").get<int>(), j.at("loss").get<double>());
        d.final_input_prior = meta.value("final_input_prior", 0.0);
        return d;
    } catch (const nlohmann::json::exception &e) {
        throw parse_error(dir + "/meta.json: " + e.what());
    }
}

} // namespace gzsq
