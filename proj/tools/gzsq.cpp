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
#include <iostream>

#include <CLI11.hpp>

#include "gzsq/harness.hpp"
#include "gzsq/io.hpp"

namespace {

using nlohmann::ordered_json;
using namespace gzsq;

// Flags win over --config entries; defaults fill the rest. Every subcommand
// resolves to a JobConfig JSON that replays the run byte-for-byte.
class JobConfig {
public:
    JobConfig(CLI::App *cmd, std::string config_path) : cmd_(cmd) {
        if (!config_path.empty())
            file_ = io::parse_json_file(config_path);
        resolved_["subcommand"] = cmd->get_name();
    }

    template <typename T>
    T get(const std::string &key, const std::string &flag, T value) {
        const CLI::Option *opt = cmd_->get_option_no_throw(flag);
        if ((!opt || opt->count() == 0) && file_.contains(key)) {
            value = file_.at(key).get<T>();
        }
        resolved_[key] = value;
        return value;
    }

    const ordered_json &resolved() const noexcept { return resolved_; }

    // Prints the job when dry-running (returns true), otherwise records it
    // next to the primary output for replay.
    bool finish(bool dry_run, const std::string &out_path) const {
        if (dry_run) {
            std::cout << resolved_.dump(2) << "\n";
            return true;
        }
        if (!out_path.empty()) {
            std::filesystem::path p(out_path);
            const std::string job =
                std::filesystem::is_directory(p) || !p.has_extension()
                    ? (p / "job.json").string()
                    : (p.parent_path() / (p.stem().string() + ".job.json")).string();
            std::error_code ec;
            std::filesystem::create_directories(std::filesystem::path(job).parent_path(), ec);
            io::write_json_file(job, resolved_);
        }
        return false;
    }

private:
    CLI::App *cmd_;
    ordered_json file_;
    ordered_json resolved_;
};

ModelGraph load_model_arg(const std::string &path) { return load_model(path); }

bool is_quantized_model_dir(const std::string &path) {
    return std::filesystem::exists(std::filesystem::path(path) / "qparams.json");
}

// The calibrate subcommand accepts either distilled data or a dataset.
std::vector<Tensor> load_calib_data(const std::string &path) {
    if (std::filesystem::exists(std::filesystem::path(path) / "meta.json")) {
        const auto meta = io::parse_json_file(path + "/meta.json");
        const std::string format = meta.value("format", std::string());
        if (format == "gzsq-distill/1")
            return {load_distilled(path).data};
        if (format == "gzsq-dataset/1")
            return {load_dataset(path).samples};
        throw version_error("unsupported calibration-data format: " + format);
    }
    throw parse_error("calibration data not found at " + path);
}

EsaPolicySet load_policy_file(const std::string &path) {
    EsaPolicySet set;
    if (path.empty())
        return set;
    const auto doc = io::parse_json_file(path);
    auto parse_policy = [](const ordered_json &j, EsaPolicy base) {
        if (j.contains("mean")) {
            if (j["mean"].contains("expansion"))
                base.mean_expansion = esa_rule_from_string(j["mean"]["expansion"].get<std::string>());
            if (j["mean"].contains("contraction"))
                base.mean_contraction =
                    esa_rule_from_string(j["mean"]["contraction"].get<std::string>());
        }
        if (j.contains("std")) {
            if (j["std"].contains("expansion"))
                base.std_expansion = esa_rule_from_string(j["std"]["expansion"].get<std::string>());
            if (j["std"].contains("contraction"))
                base.std_contraction =
                    esa_rule_from_string(j["std"]["contraction"].get<std::string>());
        }
        return base;
    };
    try {
        if (doc.contains("default"))
            set.default_policy = parse_policy(doc["default"], EsaPolicy{});
        if (doc.contains("per_layer"))
            for (const auto &[key, value] : doc["per_layer"].items())
                set.per_layer[std::stoi(key)] = parse_policy(value, set.default_policy);
    } catch (const nlohmann::json::exception &e) {
        throw parse_error(path + ": " + e.what());
    }
    return set;
}

CompareOptions load_grid_file(const std::string &path) {
    CompareOptions opt;
    const auto doc = io::parse_json_file(path);
    try {
        for (const auto &m : doc.at("methods"))
            opt.methods.push_back(calib_method_from_string(m.get<std::string>()));
        for (const auto &c : doc.at("configs")) {
            QuantConfig qc;
            qc.weight_bits = c.value("wbits", 8);
            qc.weight_granularity =
                granularity_from_string(c.value("wscheme", std::string("per-channel")));
            qc.weight_symmetry = symmetry_from_string(c.value("wsym", std::string("symmetric")));
            qc.act_bits = c.value("abits", 8);
            qc.observer = observer_kind_from_string(c.value("observer", std::string("minmax")));
            qc.act_symmetry = symmetry_from_string(c.value("asym", std::string("affine")));
            opt.configs.push_back(qc);
        }
        if (doc.contains("distill")) {
            const auto &d = doc["distill"];
            opt.distill.iterations = d.value("iterations", opt.distill.iterations);
            opt.distill.learning_rate = d.value("lr", opt.distill.learning_rate);
            opt.distill.loss_kind =
                loss_kind_from_string(d.value("loss", std::string(to_string(opt.distill.loss_kind))));
        }
        opt.calib_samples = doc.value("calib_samples", opt.calib_samples);
    } catch (const nlohmann::json::exception &e) {
        throw parse_error(path + ": " + e.what());
    }
    return opt;
}

int run_cli(int argc, char **argv) {
    CLI::App app{"gzsq: data-free post-training quantization toolkit"};
    app.require_subcommand(1);

    // Shared option storage; each subcommand binds what it uses.
    std::string config_path, model_path, out_path, dataset_path, aux_path, policy_path;
    bool dry_run = false;

    auto add_common = [&](CLI::App *cmd) {
        cmd->add_option("--config", config_path, "JSON config; flags override its entries");
        cmd->add_flag("--dry-run", dry_run, "print the resolved job config and exit");
    };

    // gen-model
    auto *gen_model = app.add_subcommand("gen-model", "create a model fixture");
    std::string arch = "reference-plain";
    int classes = 3;
    int64_t in_c = 3, in_h = 8, in_w = 8;
    uint64_t seed = 1;
    gen_model->add_option("--arch", arch,
                          "reference-plain|reference-bn|random|distill-fixture (default reference-plain)");
    gen_model->add_option("--classes", classes, "class count (default 3)");
    gen_model->add_option("--in-c", in_c, "input channels (default 3)");
    gen_model->add_option("--in-h", in_h, "input height (default 8)");
    gen_model->add_option("--in-w", in_w, "input width (default 8)");
    gen_model->add_option("--seed", seed, "rng seed (default 1)");
    gen_model->add_option("--out", out_path, "output model directory")->required();
    add_common(gen_model);

    // gen-data
    auto *gen_data = app.add_subcommand("gen-data", "create a synthetic dataset");
    std::string kind = "gaussian-blobs", split = "train";
    int n_per_class = 100;
    double separation = 3.0;
    gen_data->add_option("--kind", kind, "gaussian-blobs|striped-patterns (default gaussian-blobs)");
    gen_data->add_option("--classes", classes, "class count (default 3)");
    gen_data->add_option("--n-per-class", n_per_class, "samples per class (default 100)");
    gen_data->add_option("--channels", in_c, "channels (default 3)");
    gen_data->add_option("--height", in_h, "height (default 8)");
    gen_data->add_option("--width", in_w, "width (default 8)");
    gen_data->add_option("--seed", seed, "rng seed (default 1)");
    gen_data->add_option("--separation", separation, "class signal scale (default 3.0)");
    gen_data->add_option("--split", split, "split tag train|test (default train)");
    gen_data->add_option("--out", out_path, "output dataset directory")->required();
    add_common(gen_data);

    // train
    auto *train = app.add_subcommand("train", "train a tiny model");
    int epochs = 20;
    double lr = 3e-3;
    train->add_option("model", model_path, "model directory")->required();
    train->add_option("dataset", dataset_path, "training dataset directory")->required();
    train->add_option("--epochs", epochs, "epochs (default 20)");
    train->add_option("--lr", lr, "Adam learning rate (default 3e-3)");
    train->add_option("--seed", seed, "rng seed (default 1)");
    train->add_option("--out", out_path, "output model directory")->required();
    add_common(train);

    // fold-bn
    auto *fold = app.add_subcommand("fold-bn", "fold BN into conv weights/biases");
    fold->add_option("model", model_path, "model directory")->required();
    fold->add_option("--out", out_path, "output model directory")->required();
    add_common(fold);

    // estimate-stats
    auto *estimate = app.add_subcommand("estimate-stats", "estimate BN-statistic substitutes");
    bool fold_before = false, fold_after = false;
    estimate->add_option("model", model_path, "model directory")->required();
    estimate->add_option("--policy", policy_path, "ESA policy JSON file");
    estimate->add_flag("--fold-before", fold_before,
                       "model is already folded; use fold-origin biases");
    estimate->add_flag("--fold-after", fold_after, "model still carries live BN (default)");
    estimate->add_option("--out", out_path, "output substitutes JSON")->required();
    add_common(estimate);

    // distill
    auto *dist = app.add_subcommand("distill", "synthesize calibration data");
    int iters = 500;
    double dlr = 1e-4;
    int64_t batch = 8;
    std::string loss_name = "zscore";
    dist->add_option("model", model_path, "model directory")->required();
    dist->add_option("subs", aux_path, "substitutes JSON from estimate-stats")->required();
    dist->add_option("--iters", iters, "iterations (default 500)");
    dist->add_option("--lr", dlr, "Adam learning rate (default 1e-4)");
    dist->add_option("--batch", batch, "distilled sample count (default 8)");
    dist->add_option("--seed", seed, "rng seed (default 1)");
    dist->add_option("--loss", loss_name, "zscore|l1|l2|l1mu|l1sigma|l2mu|l2sigma|kl");
    dist->add_option("--out", out_path, "output distilled-data directory")->required();
    add_common(dist);

    // calibrate
    auto *calibrate = app.add_subcommand("calibrate", "calibrate activation ranges");
    std::string observer = "minmax", asym = "affine";
    int abits = 8;
    calibrate->add_option("model", model_path, "model directory")->required();
    calibrate->add_option("calib-data", aux_path, "distilled data or dataset directory")->required();
    calibrate->add_option("--observer", observer, "minmax|histogram (default minmax)");
    calibrate->add_option("--abits", abits, "activation bits, 2..8 or 32 to disable (default 8)");
    calibrate->add_option("--asym", asym, "activation symmetry affine|symmetric (default affine)");
    calibrate->add_option("--out", out_path, "output qparams JSON")->required();
    add_common(calibrate);

    // quantize
    auto *quantize_cmd = app.add_subcommand("quantize", "quantize model weights");
    int wbits = 8;
    std::string wscheme = "per-channel", wsym = "symmetric";
    quantize_cmd->add_option("model", model_path, "model directory")->required();
    quantize_cmd->add_option("qparams", aux_path, "activation qparams JSON")->required();
    quantize_cmd->add_option("--wbits", wbits, "weight bits, 2..8 or 32 for identity (default 8)");
    quantize_cmd->add_option("--wscheme", wscheme, "per-channel|per-tensor (default per-channel)");
    quantize_cmd->add_option("--wsym", wsym, "symmetric|affine (default symmetric)");
    quantize_cmd->add_option("--out", out_path, "output quantized-model directory")->required();
    add_common(quantize_cmd);

    // eval
    auto *eval = app.add_subcommand("eval", "evaluate top-1 accuracy");
    eval->add_option("model", model_path, "model or quantized-model directory")->required();
    eval->add_option("dataset", dataset_path, "dataset directory")->required();
    add_common(eval);

    // compare
    auto *compare = app.add_subcommand("compare", "compare calibration strategies");
    std::string grid_path;
    int runs = 10;
    compare->add_option("model", model_path, "model directory")->required();
    compare->add_option("dataset", dataset_path, "directory containing train/ and test/")->required();
    compare->add_option("--grid", grid_path, "grid JSON file")->required();
    compare->add_option("--runs", runs, "pipeline seeds per cell (default 10)");
    compare->add_option("--seed", seed, "base seed (default 1)");
    compare->add_option("--out", out_path, "output report JSON")->required();
    add_common(compare);

    // check-grad
    auto *check = app.add_subcommand("check-grad", "finite-difference gradient audit");
    int random_models = 0;
    double fd_eps = 1e-3, fd_tol = 1e-3;
    check->add_option("model", model_path, "model directory (omit with --random)");
    check->add_option("--random", random_models, "audit N random small models instead");
    check->add_option("--seed", seed, "rng seed (default 1)");
    check->add_option("--epsilon", fd_eps, "central-difference step (default 1e-3)");
    check->add_option("--tolerance", fd_tol, "max relative error allowed (default 1e-3)");
    add_common(check);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 1;
    }
    CLI::App *cmd = app.get_subcommands().front();

    if (cmd == gen_model) {
        JobConfig job(cmd, config_path);
        arch = job.get("arch", "--arch", arch);
        classes = job.get("classes", "--classes", classes);
        in_c = job.get("in_c", "--in-c", in_c);
        in_h = job.get("in_h", "--in-h", in_h);
        in_w = job.get("in_w", "--in-w", in_w);
        seed = job.get("seed", "--seed", seed);
        out_path = job.get("out", "--out", out_path);
        if (job.finish(dry_run, out_path))
            return 0;
        ModelGraph m;
        const Shape3 shape{in_c, in_h, in_w};
        if (arch == "reference-plain")
            m = make_reference_cnn(shape, classes, false, seed);
        else if (arch == "reference-bn")
            m = make_reference_cnn(shape, classes, true, seed);
        else if (arch == "random")
            m = random_model(seed);
        else if (arch == "distill-fixture")
            m = make_distill_fixture(seed);
        else
            throw invalid_argument_error("unknown arch: " + arch);
        save_model(m, out_path);
        std::cout << "wrote " << out_path << " (" << m.layers.size() << " layers)\n";
    } else if (cmd == gen_data) {
        JobConfig job(cmd, config_path);
        kind = job.get("kind", "--kind", kind);
        classes = job.get("classes", "--classes", classes);
        n_per_class = job.get("n_per_class", "--n-per-class", n_per_class);
        in_c = job.get("c", "--channels", in_c);
        in_h = job.get("h", "--height", in_h);
        in_w = job.get("w", "--width", in_w);
        seed = job.get("seed", "--seed", seed);
        separation = job.get("separation", "--separation", separation);
        split = job.get("split", "--split", split);
        out_path = job.get("out", "--out", out_path);
        if (job.finish(dry_run, out_path))
            return 0;
        const Dataset d = gen_dataset(dataset_kind_from_string(kind), classes, n_per_class,
                                      {in_c, in_h, in_w}, seed, split, separation);
        save_dataset(d, out_path);
        std::cout << "wrote " << out_path << " (" << d.size() << " samples, " << classes
                  << " classes)\n";
    } else if (cmd == train) {
        JobConfig job(cmd, config_path);
        model_path = job.get("model", "model", model_path);
        dataset_path = job.get("dataset", "dataset", dataset_path);
        epochs = job.get("epochs", "--epochs", epochs);
        lr = job.get("lr", "--lr", lr);
        seed = job.get("seed", "--seed", seed);
        out_path = job.get("out", "--out", out_path);
        if (job.finish(dry_run, out_path))
            return 0;
        const ModelGraph m = load_model_arg(model_path);
        const Dataset d = load_dataset(dataset_path);
        const ModelGraph trained = train_tiny(m, d, epochs, lr, seed);
        save_model(trained, out_path);
        std::cout << "train accuracy: " << eval_accuracy(trained, d) << "\n";
    } else if (cmd == fold) {
        JobConfig job(cmd, config_path);
        model_path = job.get("model", "model", model_path);
        out_path = job.get("out", "--out", out_path);
        if (job.finish(dry_run, out_path))
            return 0;
        const FoldResult r = fold_bn(load_model_arg(model_path));
        save_model(r.model, out_path);
        for (const auto &l : r.report.layers)
            std::cout << "layer " << l.layer_id << ": " << (l.folded ? "folded" : "unchanged")
                      << ", max rel deviation " << l.max_rel_deviation << "\n";
    } else if (cmd == estimate) {
        JobConfig job(cmd, config_path);
        model_path = job.get("model", "model", model_path);
        policy_path = job.get("policy", "--policy", policy_path);
        fold_before = job.get("fold_before", "--fold-before", fold_before);
        out_path = job.get("out", "--out", out_path);
        if (job.finish(dry_run, out_path))
            return 0;
        const ModelGraph m = load_model_arg(model_path);
        const SubstituteSet subs = estimate_substitutes(m, load_policy_file(policy_path), fold_before);
        save_substitutes(subs, out_path);
        std::cout << "wrote " << out_path << " (" << subs.entries.size() << " layers)\n";
    } else if (cmd == dist) {
        JobConfig job(cmd, config_path);
        model_path = job.get("model", "model", model_path);
        aux_path = job.get("subs", "subs", aux_path);
        DistillConfig cfg;
        cfg.iterations = job.get("iters", "--iters", iters);
        cfg.learning_rate = job.get("lr", "--lr", dlr);
        cfg.batch = job.get("batch", "--batch", batch);
        cfg.seed = job.get("seed", "--seed", seed);
        cfg.loss_kind = loss_kind_from_string(job.get("loss", "--loss", loss_name));
        out_path = job.get("out", "--out", out_path);
        if (job.finish(dry_run, out_path))
            return 0;
        const ModelGraph m = load_model_arg(model_path);
        const DistilledData d = distill(m, load_substitutes(aux_path), cfg);
        save_distilled(d, cfg, out_path);
        std::cout << "initial loss: " << d.initial_loss << "\nfinal loss: " << d.final_loss
                  << "\n";
    } else if (cmd == calibrate) {
        JobConfig job(cmd, config_path);
        model_path = job.get("model", "model", model_path);
        aux_path = job.get("calib_data", "calib-data", aux_path);
        observer = job.get("observer", "--observer", observer);
        abits = job.get("abits", "--abits", abits);
        asym = job.get("asym", "--asym", asym);
        out_path = job.get("out", "--out", out_path);
        if (job.finish(dry_run, out_path))
            return 0;
        const ModelGraph m = load_model_arg(model_path);
        // 32 bits disables activation quantization (identity parameters).
        const ActQuantParams act =
            abits == 32 ? identity_act_params(m)
                        : calibrate_activations(m, load_calib_data(aux_path),
                                                observer_kind_from_string(observer), abits,
                                                symmetry_from_string(asym));
        save_act_params(act, out_path);
        std::cout << "wrote " << out_path << " (" << act.per_layer.size() << " layers + input)\n";
    } else if (cmd == quantize_cmd) {
        JobConfig job(cmd, config_path);
        model_path = job.get("model", "model", model_path);
        aux_path = job.get("qparams", "qparams", aux_path);
        wbits = job.get("wbits", "--wbits", wbits);
        wscheme = job.get("wscheme", "--wscheme", wscheme);
        wsym = job.get("wsym", "--wsym", wsym);
        out_path = job.get("out", "--out", out_path);
        if (job.finish(dry_run, out_path))
            return 0;
        const ModelGraph m = load_model_arg(model_path);
        const QuantizedModel qm =
            quantize_model(m, load_act_params(aux_path), wbits, granularity_from_string(wscheme),
                           symmetry_from_string(wsym));
        save_quantized_model(qm, out_path);
        std::cout << "wrote " << out_path << "\n";
    } else if (cmd == eval) {
        JobConfig job(cmd, config_path);
        model_path = job.get("model", "model", model_path);
        dataset_path = job.get("dataset", "dataset", dataset_path);
        if (job.finish(dry_run, ""))
            return 0;
        const Dataset d = load_dataset(dataset_path);
        double acc = 0.0;
        if (is_quantized_model_dir(model_path))
            acc = eval_accuracy(load_quantized_model(model_path), d);
        else
            acc = eval_accuracy(load_model_arg(model_path), d);
        std::cout << "top-1: " << acc << "\n";
    } else if (cmd == compare) {
        JobConfig job(cmd, config_path);
        model_path = job.get("model", "model", model_path);
        dataset_path = job.get("dataset", "dataset", dataset_path);
        grid_path = job.get("grid", "--grid", grid_path);
        runs = job.get("runs", "--runs", runs);
        seed = job.get("seed", "--seed", seed);
        out_path = job.get("out", "--out", out_path);
        if (job.finish(dry_run, out_path))
            return 0;
        const ModelGraph m = load_model_arg(model_path);
        const Dataset train_split = load_dataset(dataset_path + "/train");
        const Dataset test_split = load_dataset(dataset_path + "/test");
        CompareOptions opt = load_grid_file(grid_path);
        opt.runs = runs;
        opt.seed = seed;
        const ComparisonReport report = compare_calibrations(m, train_split, test_split, opt);
        save_report_json(report, out_path);
        std::cout << report_text_table(report);
    } else if (cmd == check) {
        JobConfig job(cmd, config_path);
        model_path = job.get("model", "model", model_path);
        random_models = job.get("random", "--random", random_models);
        seed = job.get("seed", "--seed", seed);
        fd_eps = job.get("epsilon", "--epsilon", fd_eps);
        fd_tol = job.get("tolerance", "--tolerance", fd_tol);
        if (job.finish(dry_run, ""))
            return 0;
        if (model_path.empty() && random_models < 1)
            throw invalid_argument_error("check-grad: give a model directory or --random N");
        std::vector<ModelGraph> models;
        if (!model_path.empty())
            models.push_back(load_model_arg(model_path));
        for (int i = 0; i < random_models; ++i)
            models.push_back(random_model(seed + static_cast<uint64_t>(i)));
        bool ok = true;
        for (size_t i = 0; i < models.size(); ++i) {
            const ModelGraph &m = models[i];
            RngState rng(seed + 17 * static_cast<uint64_t>(i));
            const Tensor x = gaussian_tensor(
                {2, m.input_shape.c, m.input_shape.h, m.input_shape.w}, 0.0, 1.0, rng);
            const SubstituteSet subs = estimate_substitutes(m, EsaPolicySet{}, false);
            const StatMatchLoss loss = make_distill_loss(m, subs, LossKind::Zscore, 1e-6);
            const double err = finite_diff_check(m, x, loss, fd_eps, 64, seed + i);
            const bool pass = err <= fd_tol;
            ok = ok && pass;
            std::cout << m.name << ": max rel error " << err << (pass ? " (ok)" : " (FAIL)")
                      << "\n";
        }
        if (!ok) {
            std::cerr << "error: numeric: gradient check exceeded tolerance\n";
            return 3;
        }
    }
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    try {
        return run_cli(argc, argv);
    } catch (const gzsq::numeric_fault &e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return 3;
    } catch (const gzsq::error &e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception &e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 2;
    }
}
