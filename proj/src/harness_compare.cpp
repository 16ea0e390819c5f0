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
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "gzsq/harness.hpp"
#include "gzsq/io.hpp"

namespace gzsq {

const char *to_string(CalibMethod m) {
    switch (m) {
    case CalibMethod::UnitGaussian: return "unit-gaussian";
    case CalibMethod::GzsqDistilled: return "gzsq-distilled";
    case CalibMethod::ZeroqBnBaseline: return "zeroq-bn-baseline";
    case CalibMethod::RealTrainSubset: return "real-train-subset";
    }
    return "?";
}

CalibMethod calib_method_from_string(const std::string &s) {
    if (s == "unit-gaussian") return CalibMethod::UnitGaussian;
    if (s == "gzsq-distilled") return CalibMethod::GzsqDistilled;
    if (s == "zeroq-bn-baseline") return CalibMethod::ZeroqBnBaseline;
    if (s == "real-train-subset") return CalibMethod::RealTrainSubset;
    throw parse_error("unknown calibration method: " + s);
}

std::string QuantConfig::label() const {
    std::ostringstream os;
    os << "W" << weight_bits << "A" << act_bits << " " << to_string(weight_granularity) << "/"
       << to_string(weight_symmetry) << " " << to_string(observer);
    return os.str();
}

StatMatchLoss make_bn_stats_loss(const ModelGraph &bn_source, const ModelGraph &target_model) {
    std::vector<StatMatchLoss::Term> terms;
    for (const auto &l : bn_source.layers) {
        if (!l.bn)
            continue;
        const LayerSpec *target = target_model.layer_by_id(l.id);
        if (!target || !target->is_conv_like())
            throw invalid_argument_error("bn stats loss: layer " + std::to_string(l.id) +
                                         " has no conv-like counterpart in the target model");
        ChannelStats stats;
        stats.mean = l.bn->running_mean;
        stats.std = l.bn->running_std;
        terms.push_back({l.id, TapPoint::ConvOut, std::move(stats)});
    }
    if (terms.empty())
        throw invalid_argument_error("bn stats loss: model has no live BN statistics");
    return StatMatchLoss(std::move(terms), LossKind::L2, 1e-6, /*average_channels=*/false,
                         /*input_prior=*/false);
}

const ComparisonReport::Cell *ComparisonReport::find(const std::string &method,
                                                     const std::string &fold_timing,
                                                     const std::string &config) const noexcept {
    for (const auto &c : cells)
        if (c.method == method && c.fold_timing == fold_timing && c.config == config)
            return &c;
    return nullptr;
}

namespace {

std::vector<int64_t> pick_subset(int64_t total, int64_t count, RngState &rng) {
    std::set<int64_t> chosen;
    count = std::min(count, total);
    while (static_cast<int64_t>(chosen.size()) < count)
        chosen.insert(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total))));
    return std::vector<int64_t>(chosen.begin(), chosen.end());
}

struct CellAccumulator {
    std::vector<double> accs;
    std::vector<std::pair<double, double>> losses;
    std::vector<std::tuple<int, double, double>> ranges;
};

} // namespace

ComparisonReport compare_calibrations(const ModelGraph &model, const Dataset &train,
                                      const Dataset &test, const CompareOptions &options) {
    if (options.runs < 1)
        throw invalid_argument_error("compare: runs must be >= 1");
    const bool has_bn = model.has_bn();
    const ModelGraph deployed = has_bn ? fold_bn(model).model : model;
    // A BN-free input that itself came out of folding still carries the
    // fold-origin biases for statistics estimation.
    const bool deployed_fold_origin = [&] {
        for (const auto &l : deployed.layers)
            if (l.bias_from_fold)
                return true;
        return false;
    }();

    ComparisonReport report;
    report.model_name = model.name;
    report.runs = options.runs;
    report.seed = options.seed;
    report.fp32_accuracy = eval_accuracy(deployed, test);

    for (const CalibMethod method : options.methods) {
        std::vector<std::string> timings;
        if (has_bn &&
            (method == CalibMethod::GzsqDistilled || method == CalibMethod::ZeroqBnBaseline))
            timings = {"before", "after"};
        else
            timings = {"n/a"};

        for (const std::string &timing : timings) {
            // Calibration data per run is shared across quant configs.
            std::vector<Tensor> run_data;
            std::vector<std::pair<double, double>> run_losses;
            bool skipped = false;
            std::string skip_reason;

            if (method == CalibMethod::ZeroqBnBaseline && !has_bn) {
                skipped = true;
                skip_reason = "requires live BN statistics";
            } else {
                for (int run = 0; run < options.runs && !skipped; ++run) {
                    const uint64_t run_seed = options.seed + static_cast<uint64_t>(run);
                    DistillConfig cfg = method == CalibMethod::ZeroqBnBaseline
                                            ? options.baseline_distill
                                            : options.distill;
                    cfg.seed = run_seed;
                    cfg.batch = options.calib_samples;
                    switch (method) {
                    case CalibMethod::UnitGaussian: {
                        RngState rng(run_seed);
                        run_data.push_back(gaussian_tensor({options.calib_samples,
                                                            model.input_shape.c,
                                                            model.input_shape.h,
                                                            model.input_shape.w},
                                                           0.0, 1.0, rng));
                        break;
                    }
                    case CalibMethod::RealTrainSubset: {
                        RngState rng(run_seed);
                        run_data.push_back(gather_samples(
                            train.samples, pick_subset(train.size(), options.calib_samples, rng)));
                        break;
                    }
                    case CalibMethod::GzsqDistilled: {
                        DistilledData d;
                        if (timing == "before") {
                            const SubstituteSet subs =
                                estimate_substitutes(deployed, options.policies, true);
                            d = distill(deployed, subs, cfg);
                        } else {
                            // "after" on BN models distills against the live
                            // model; "n/a" covers BN-free models directly.
                            const SubstituteSet subs = estimate_substitutes(
                                model, options.policies, !has_bn && deployed_fold_origin);
                            d = distill(model, subs, cfg);
                        }
                        run_losses.emplace_back(d.initial_loss, d.final_loss);
                        run_data.push_back(std::move(d.data));
                        break;
                    }
                    case CalibMethod::ZeroqBnBaseline: {
                        // "after": targets and taps live on the BN model.
                        // "before": the pre-fold statistics are matched
                        // against the folded model's conv outputs, the very
                        // mismatch the folding study exercises.
                        const ModelGraph &target = timing == "before" ? deployed : model;
                        const StatMatchLoss loss = make_bn_stats_loss(model, target);
                        DistilledData d = optimize_input(target, loss, cfg);
                        run_losses.emplace_back(d.initial_loss, d.final_loss);
                        run_data.push_back(std::move(d.data));
                        break;
                    }
                    }
                }
            }

            for (const QuantConfig &qc : options.configs) {
                ComparisonReport::Cell cell;
                cell.method = to_string(method);
                cell.fold_timing = timing;
                cell.config = qc.label();
                if (skipped) {
                    cell.skipped = true;
                    cell.skip_reason = skip_reason;
                    report.cells.push_back(std::move(cell));
                    continue;
                }
                cell.distill_losses = run_losses;
                for (int run = 0; run < options.runs; ++run) {
                    const ActQuantParams act = calibrate_activations(
                        deployed, {run_data[static_cast<size_t>(run)]}, qc.observer, qc.act_bits,
                        qc.act_symmetry);
                    const QuantizedModel qm = quantize_model(
                        deployed, act, qc.weight_bits, qc.weight_granularity, qc.weight_symmetry);
                    cell.run_accuracies.push_back(eval_accuracy(qm, test));
                    if (run == 0)
                        for (const auto &[id, r] : act.observed_ranges)
                            cell.ranges.emplace_back(id, r.first, r.second);
                }
                double sum = 0.0;
                for (double a : cell.run_accuracies)
                    sum += a;
                cell.mean = sum / static_cast<double>(cell.run_accuracies.size());
                double sq = 0.0;
                for (double a : cell.run_accuracies)
                    sq += (a - cell.mean) * (a - cell.mean);
                cell.stddev = std::sqrt(sq / static_cast<double>(cell.run_accuracies.size()));
                report.cells.push_back(std::move(cell));
            }
        }
    }
    return report;
}

void save_report_json(const ComparisonReport &report, const std::string &path) {
    nlohmann::ordered_json doc;
    doc["format"] = "gzsq-report/1";
    doc["model"] = report.model_name;
    doc["fp32_accuracy"] = report.fp32_accuracy;
    doc["runs"] = report.runs;
    doc["seed"] = report.seed;
    doc["cells"] = nlohmann::ordered_json::array();
    for (const auto &c : report.cells) {
        nlohmann::ordered_json j;
        j["method"] = c.method;
        j["fold_timing"] = c.fold_timing;
        j["config"] = c.config;
        if (c.skipped) {
            j["skipped"] = true;
            j["reason"] = c.skip_reason;
        } else {
            j["mean"] = c.mean;
            j["stddev"] = c.stddev;
            j["accuracies"] = c.run_accuracies;
            nlohmann::ordered_json ranges = nlohmann::ordered_json::array();
            for (const auto &[id, lo, hi] : c.ranges)
                ranges.push_back({{"layer", id}, {"min", lo}, {"max", hi}});
            j["ranges_first_run"] = std::move(ranges);
            if (!c.distill_losses.empty()) {
                nlohmann::ordered_json losses = nlohmann::ordered_json::array();
                for (const auto &[initial, final_] : c.distill_losses)
                    losses.push_back({{"initial", initial}, {"final", final_}});
                j["distill_losses"] = std::move(losses);
            }
        }
        doc["cells"].push_back(std::move(j));
    }
    io::write_json_file(path, doc);
}

std::string report_text_table(const ComparisonReport &report) {
    std::ostringstream os;
    os << "model: " << report.model_name << "  fp32 top-1: " << report.fp32_accuracy
       << "  runs: " << report.runs << "\n";
    os << std::string(78, '-') << "\n";
    for (const auto &c : report.cells) {
        std::ostringstream head;
        head << c.method << " [" << c.fold_timing << "] " << c.config;
        os << head.str();
        for (size_t pad = head.str().size(); pad < 60; ++pad)
            os << ' ';
        if (c.skipped)
            os << "skipped: " << c.skip_reason << "\n";
        else {
            std::ostringstream val;
            val.setf(std::ios::fixed);
            val.precision(4);
            val << c.mean << " +/- " << c.stddev;
            os << val.str() << "\n";
        }
    }
    return os.str();
}

} // namespace gzsq
