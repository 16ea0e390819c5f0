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

#include "gzsq/harness.hpp"
#include "gzsq/io.hpp"

using namespace gzsq;

TEST_CASE("gen_dataset produces balanced labels") {
    const Dataset d = gen_dataset(DatasetKind::GaussianBlobs, 2, 100, {3, 8, 8}, 1, "train");
    CHECK(d.size() == 200);
    int counts[2] = {0, 0};
    for (int l : d.labels)
        ++counts[l];
    CHECK(counts[0] == 100);
    CHECK(counts[1] == 100);
}

TEST_CASE("gen_dataset is deterministic per seed") {
    const Dataset a = gen_dataset(DatasetKind::StripedPatterns, 3, 20, {2, 6, 6}, 5, "train");
    const Dataset b = gen_dataset(DatasetKind::StripedPatterns, 3, 20, {2, 6, 6}, 5, "train");
    CHECK(a.samples == b.samples);
    CHECK(a.labels == b.labels);
}

TEST_CASE("train and test splits share classes but not samples") {
    const Dataset train = gen_dataset(DatasetKind::GaussianBlobs, 2, 50, {3, 8, 8}, 9, "train");
    const Dataset test = gen_dataset(DatasetKind::GaussianBlobs, 2, 50, {3, 8, 8}, 9, "test");
    CHECK_FALSE(train.samples == test.samples);
}

TEST_CASE("3-sigma blob separation admits a >= 95% linear probe") {
    const Dataset train = gen_dataset(DatasetKind::GaussianBlobs, 2, 100, {3, 8, 8}, 3, "train", 3.0);
    const Dataset test = gen_dataset(DatasetKind::GaussianBlobs, 2, 100, {3, 8, 8}, 3, "test", 3.0);
    // nearest-class-mean classifier: linear decision boundary
    const int64_t numel = 3 * 8 * 8;
    std::vector<std::vector<double>> means(2, std::vector<double>(static_cast<size_t>(numel), 0.0));
    std::vector<int64_t> counts(2, 0);
    for (int64_t i = 0; i < train.size(); ++i) {
        const int k = train.labels[static_cast<size_t>(i)];
        const float *p = train.samples.data().data() + i * numel;
        for (int64_t j = 0; j < numel; ++j)
            means[static_cast<size_t>(k)][static_cast<size_t>(j)] += p[j];
        ++counts[static_cast<size_t>(k)];
    }
    for (int k = 0; k < 2; ++k)
        for (auto &v : means[static_cast<size_t>(k)])
            v /= static_cast<double>(counts[static_cast<size_t>(k)]);
    int64_t correct = 0;
    for (int64_t i = 0; i < test.size(); ++i) {
        const float *p = test.samples.data().data() + i * numel;
        double best = 0.0;
        int best_k = 0;
        for (int k = 0; k < 2; ++k) {
            double dist = 0.0;
            for (int64_t j = 0; j < numel; ++j) {
                const double dd = p[j] - means[static_cast<size_t>(k)][static_cast<size_t>(j)];
                dist += dd * dd;
            }
            if (k == 0 || dist < best) {
                best = dist;
                best_k = k;
            }
        }
        if (best_k == test.labels[static_cast<size_t>(i)])
            ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(test.size()) >= 0.95);
}

TEST_CASE("gen_dataset validates its arguments") {
    CHECK_THROWS_AS(gen_dataset(DatasetKind::GaussianBlobs, 1, 10, {3, 8, 8}, 1, "train"),
                    invalid_argument_error);
    CHECK_THROWS_AS(gen_dataset(DatasetKind::GaussianBlobs, 2, 10, {0, 8, 8}, 1, "train"),
                    invalid_argument_error);
}

TEST_CASE("dataset files round-trip") {
    const Dataset d = gen_dataset(DatasetKind::GaussianBlobs, 3, 10, {2, 4, 4}, 7, "test");
    const std::string dir = (std::filesystem::temp_directory_path() / "gzsq_data_rt").string();
    std::filesystem::remove_all(dir);
    save_dataset(d, dir);
    const Dataset back = load_dataset(dir);
    CHECK(back.samples == d.samples);
    CHECK(back.labels == d.labels);
    CHECK(back.num_classes == d.num_classes);
    CHECK(back.split == d.split);

    SUBCASE("corrupted labels raise parse_error") {
        io::write_text_file(dir + "/labels.csv", "0\nbanana\n1\n");
        CHECK_THROWS_AS(load_dataset(dir), parse_error);
    }
    SUBCASE("truncated data blob raises parse_error") {
        std::filesystem::resize_file(dir + "/data.bin", 8);
        CHECK_THROWS_AS(load_dataset(dir), parse_error);
    }
}

TEST_CASE("trained reference model clears the accuracy floor") {
    const Dataset train = gen_dataset(DatasetKind::GaussianBlobs, 3, 150, {3, 8, 8}, 2, "train", 3.4);
    const Dataset test = gen_dataset(DatasetKind::GaussianBlobs, 3, 100, {3, 8, 8}, 2, "test", 3.4);
    const ModelGraph m0 = make_reference_cnn({3, 8, 8}, 3, false, 5);
    const ModelGraph m = train_tiny(m0, train, 20, 0.01, 1);
    CHECK(eval_accuracy(m, test) >= 0.90);
}

TEST_CASE("zero epochs leaves the weights untouched") {
    const Dataset train = gen_dataset(DatasetKind::GaussianBlobs, 3, 20, {3, 8, 8}, 2, "train");
    const ModelGraph m0 = make_reference_cnn({3, 8, 8}, 3, true, 5);
    CHECK(train_tiny(m0, train, 0, 0.01, 1) == m0);
}

TEST_CASE("training is deterministic per seed") {
    const Dataset train = gen_dataset(DatasetKind::GaussianBlobs, 3, 40, {3, 8, 8}, 2, "train");
    const ModelGraph m0 = make_reference_cnn({3, 8, 8}, 3, true, 5);
    const ModelGraph a = train_tiny(m0, train, 3, 0.01, 11);
    const ModelGraph b = train_tiny(m0, train, 3, 0.01, 11);
    CHECK(a == b);
}

TEST_CASE("training rejects a class-count mismatch") {
    const Dataset train = gen_dataset(DatasetKind::GaussianBlobs, 4, 10, {3, 8, 8}, 2, "train");
    const ModelGraph m0 = make_reference_cnn({3, 8, 8}, 3, false, 5);
    CHECK_THROWS_AS(train_tiny(m0, train, 1, 0.01, 1), invalid_argument_error);
}

TEST_CASE("a constant classifier scores the majority share, ties to class 0") {
    ModelGraph m;
    m.input_shape = {1, 2, 2};
    LayerSpec pool;
    pool.id = 0;
    pool.kind = LayerKind::GlobalAvgPool;
    LayerSpec fc;
    fc.id = 1;
    fc.kind = LayerKind::FullyConnected;
    WeightTensor w;
    w.o = 2;
    w.i = 1;
    w.kh = 1;
    w.kw = 1;
    w.data = {0.0f, 0.0f}; // all logits zero -> argmax ties -> class 0
    fc.weights = w;
    m.layers = {pool, fc};
    const Dataset d = gen_dataset(DatasetKind::GaussianBlobs, 2, 50, {1, 2, 2}, 4, "test");
    CHECK(eval_accuracy(m, d) == doctest::Approx(0.5));
}

TEST_CASE("identity-quantized eval matches fp32 eval exactly") {
    const Dataset test = gen_dataset(DatasetKind::GaussianBlobs, 3, 30, {3, 8, 8}, 2, "test");
    const ModelGraph m = make_reference_cnn({3, 8, 8}, 3, true, 5);
    const QuantizedModel qm =
        quantize_model(m, identity_act_params(m), 32, Granularity::PerChannel, Symmetry::Symmetric);
    CHECK(eval_accuracy(qm, test) == eval_accuracy(m, test));
}

TEST_CASE("eval_accuracy matches a naive counting oracle") {
    const Dataset test = gen_dataset(DatasetKind::GaussianBlobs, 3, 25, {3, 8, 8}, 2, "test");
    const ModelGraph m = make_reference_cnn({3, 8, 8}, 3, false, 5);
    const double got = eval_accuracy(m, test);
    int64_t correct = 0;
    for (int64_t i = 0; i < test.size(); ++i) {
        const Tensor x = gather_samples(test.samples, {i});
        const Tensor out = forward(m, x).output;
        int best = 0;
        for (int64_t k = 1; k < out.shape().c; ++k)
            if (out.at(0, k, 0, 0) > out.at(0, best, 0, 0))
                best = static_cast<int>(k);
        if (best == test.labels[static_cast<size_t>(i)])
            ++correct;
    }
    CHECK(got == doctest::Approx(static_cast<double>(correct) / test.size()));
}

TEST_CASE("comparison report covers the grid and stays within bounds") {
    const Dataset train = gen_dataset(DatasetKind::GaussianBlobs, 3, 60, {3, 8, 8}, 2, "train", 3.4);
    const Dataset test = gen_dataset(DatasetKind::GaussianBlobs, 3, 40, {3, 8, 8}, 2, "test", 3.4);
    const ModelGraph m =
        train_tiny(make_reference_cnn({3, 8, 8}, 3, false, 5), train, 6, 0.01, 1);

    CompareOptions opt;
    opt.methods = {CalibMethod::UnitGaussian, CalibMethod::GzsqDistilled,
                   CalibMethod::ZeroqBnBaseline, CalibMethod::RealTrainSubset};
    opt.configs = {QuantConfig{}};
    opt.runs = 2;
    opt.seed = 3;
    opt.distill.iterations = 30;
    opt.baseline_distill.iterations = 30;
    const ComparisonReport r = compare_calibrations(m, train, test, opt);

    CHECK(r.fp32_accuracy >= 0.0);
    CHECK(r.fp32_accuracy <= 1.0);
    CHECK(r.cells.size() == 4); // one per method, single config, no fold axis
    for (const auto &c : r.cells) {
        if (c.method == "zeroq-bn-baseline") {
            CHECK(c.skipped);
            CHECK_FALSE(c.skip_reason.empty());
            continue;
        }
        CHECK_FALSE(c.skipped);
        CHECK(static_cast<int>(c.run_accuracies.size()) == opt.runs);
        for (double a : c.run_accuracies) {
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
        }
        CHECK(c.stddev >= 0.0);
        CHECK(r.fp32_accuracy >= c.mean - 0.05);
    }
    // 8-bit weights on a trained net stay within 2% absolute of fp32 when
    // calibrated with real data.
    const auto *real = r.find("real-train-subset", "n/a", QuantConfig{}.label());
    REQUIRE(real != nullptr);
    CHECK(real->mean >= r.fp32_accuracy - 0.02);
}

TEST_CASE("BN models get the fold-timing axis and byte-stable reports") {
    const Dataset train = gen_dataset(DatasetKind::GaussianBlobs, 3, 60, {3, 8, 8}, 2, "train", 3.4);
    const Dataset test = gen_dataset(DatasetKind::GaussianBlobs, 3, 40, {3, 8, 8}, 2, "test", 3.4);
    const ModelGraph m =
        train_tiny(make_reference_cnn({3, 8, 8}, 3, true, 5), train, 6, 0.01, 1);

    CompareOptions opt;
    opt.methods = {CalibMethod::GzsqDistilled, CalibMethod::ZeroqBnBaseline};
    opt.configs = {QuantConfig{}};
    opt.runs = 2;
    opt.seed = 3;
    opt.distill.iterations = 20;
    opt.baseline_distill.iterations = 20;
    const ComparisonReport r = compare_calibrations(m, train, test, opt);
    CHECK(r.cells.size() == 4); // two methods x before/after
    CHECK(r.find("gzsq-distilled", "before", QuantConfig{}.label()) != nullptr);
    CHECK(r.find("gzsq-distilled", "after", QuantConfig{}.label()) != nullptr);
    CHECK(r.find("zeroq-bn-baseline", "before", QuantConfig{}.label()) != nullptr);
    CHECK(r.find("zeroq-bn-baseline", "after", QuantConfig{}.label()) != nullptr);

    const std::string p1 = (std::filesystem::temp_directory_path() / "gzsq_rep1.json").string();
    const std::string p2 = (std::filesystem::temp_directory_path() / "gzsq_rep2.json").string();
    save_report_json(r, p1);
    save_report_json(compare_calibrations(m, train, test, opt), p2);
    CHECK(io::read_text_file(p1) == io::read_text_file(p2));
    CHECK_FALSE(report_text_table(r).empty());
}
