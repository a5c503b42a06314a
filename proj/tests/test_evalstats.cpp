#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

#include "temgnet/evalstats.hpp"
#include "temgnet/training.hpp"

using namespace temgnet;

namespace {

// Exhaustive reference for the exact two-sided signed-rank p: walk all
// 2^n sign assignments over the average ranks of |d| and double the
// smaller tail of the observed W+.
double brute_force_wilcoxon_p(const std::vector<double>& d) {
    const std::size_t n = d.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && std::abs(d[idx[j]]) == std::abs(d[idx[i]])) ++j;
        for (std::size_t k = i; k < j; ++k)
            rank[idx[k]] = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        i = j;
    }
    double w_plus = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0.0) w_plus += rank[i];
    std::size_t le = 0, ge = 0;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (std::size_t{1} << i)) w += rank[i];
        if (w <= w_plus + 1e-12) ++le;
        if (w >= w_plus - 1e-12) ++ge;
    }
    const double denom = std::pow(2.0, static_cast<double>(n));
    return std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / denom);
}

SegmentDataset tiny_dataset(int n_per_class, int n_classes) {
    auto rec = std::make_shared<EmgRecording>();
    rec->sample_rate_hz = 2000.0;
    rec->channels.assign(12, {});
    Rng rng(3);
    for (int cls = 1; cls <= n_classes; ++cls)
        for (int t = 0; t < 48 * n_per_class; ++t) {
            for (int ch = 0; ch < 12; ++ch)
                rec->channels[ch].push_back(rng.uniform(-0.5, 0.5) + 0.1 * cls);
            rec->labels.push_back(static_cast<std::uint8_t>(cls));
            rec->repetitions.push_back(1);
        }
    SegmentDataset ds;
    ds.window_samples = 48;
    ds.step_samples = 48;
    segment_into(ds, rec);
    return ds;
}

TemgNet zeroed_model(int n_classes) {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.mlp_size = 16;
    cfg.heads = 2;
    cfg.patch_side = 12;
    cfg.window_samples = 48;
    cfg.n_classes = n_classes;
    TemgNet net = init_params(cfg, 1);
    net.for_each_param([](const std::string&, Tensor& t) {
        std::fill(t.values().begin(), t.values().end(), 0.0);
    });
    return net;
}

}  // namespace

TEST_CASE("tallying a hand-built five-window case") {
    // three correct, one 2->1 miss, one 1->3 miss
    EvalReport rep = tally_predictions({1, 1, 2, 3, 3}, {1, 2, 2, 1, 3}, 3);
    REQUIRE(rep.total == 5);
    REQUIRE_THAT(rep.accuracy, Catch::Matchers::WithinAbs(0.6, 1e-15));
    REQUIRE(rep.confusion[0][0] == 1);
    REQUIRE(rep.confusion[1][0] == 1);
    REQUIRE(rep.confusion[1][1] == 1);
    REQUIRE(rep.confusion[0][2] == 1);
    REQUIRE(rep.confusion[2][2] == 1);
    std::size_t sum = 0, diag = 0;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t p = 0; p < 3; ++p) {
            sum += rep.confusion[t][p];
            if (t == p) diag += rep.confusion[t][p];
        }
    REQUIRE(sum == rep.total);
    REQUIRE_THAT(rep.accuracy,
                 Catch::Matchers::WithinAbs(double(diag) / double(rep.total), 1e-15));
    REQUIRE_THAT(rep.per_class_recall[1], Catch::Matchers::WithinAbs(0.5, 1e-15));
    REQUIRE(rep.class_support[0] == 2);
}

TEST_CASE("perfect predictions give a diagonal confusion matrix") {
    std::vector<int> labels{3, 1, 2, 2, 1, 3, 3};
    EvalReport rep = tally_predictions(labels, labels, 3);
    REQUIRE(rep.accuracy == 1.0);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t p = 0; p < 3; ++p)
            if (t != p) REQUIRE(rep.confusion[t][p] == 0);
    for (double r : rep.per_class_recall) REQUIRE(r == 1.0);
}

TEST_CASE("recall of an absent class is flagged as NaN") {
    EvalReport rep = tally_predictions({1, 1}, {1, 1}, 3);
    REQUIRE(std::isnan(rep.per_class_recall[2]));
    REQUIRE(rep.class_support[2] == 0);
}

TEST_CASE("tally rejects misaligned or out-of-range input") {
    REQUIRE_THROWS_AS(tally_predictions({1, 2}, {1}, 3), ContractError);
    REQUIRE_THROWS_AS(tally_predictions({}, {}, 3), ContractError);
    REQUIRE_THROWS_AS(tally_predictions({4}, {1}, 3), ContractError);
    REQUIRE_THROWS_AS(tally_predictions({1}, {0}, 3), ContractError);
}

TEST_CASE("an all-zero model predicts class 1 everywhere: lowest-index ties, base rate") {
    SegmentDataset ds = tiny_dataset(4, 3);
    REQUIRE(ds.size() == 12);
    TemgNet net = zeroed_model(3);
    EvalReport rep = evaluate(net, ds);
    for (int p : rep.predictions) REQUIRE(p == 1);
    // accuracy equals the prevalence of class 1
    REQUIRE_THAT(rep.accuracy, Catch::Matchers::WithinAbs(4.0 / 12.0, 1e-15));
}

TEST_CASE("evaluate agrees with the training loop's accuracy on a fitted model") {
    SegmentDataset ds = tiny_dataset(6, 2);
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.mlp_size = 16;
    cfg.heads = 2;
    cfg.patch_side = 12;
    cfg.window_samples = 48;
    cfg.n_classes = 2;
    TemgNet net = init_params(cfg, 4);
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.batch_size = 12;
    tc.epochs = 40;
    tc.early_stop_train_accuracy = 1.0;
    TrainResult r = train(net, ds, tc);
    EvalReport rep = evaluate(net, ds);
    // the final epoch's accuracy is measured mid-update; after a full
    // fit both should sit at 1
    REQUIRE(rep.accuracy >= r.trace.back().train_accuracy - 1e-12);
    std::size_t sum = 0;
    for (const auto& row : rep.confusion)
        for (std::size_t v : row) sum += v;
    REQUIRE(sum == ds.size());
}

TEST_CASE("evaluate rejects empty data and window mismatches") {
    TemgNet net = zeroed_model(3);
    SegmentDataset empty;
    empty.window_samples = 48;
    empty.step_samples = 48;
    REQUIRE_THROWS_AS(evaluate(net, empty), ContractError);
    SegmentDataset ds = tiny_dataset(1, 3);
    ds.window_samples = 60;  // lies about its geometry
    REQUIRE_THROWS_AS(evaluate(net, ds), ContractError);
}

TEST_CASE("cohort of [80, 82, 84]") {
    CohortSummary s = aggregate_subjects({80.0, 82.0, 84.0});
    REQUIRE_THAT(s.mean, Catch::Matchers::WithinAbs(82.0, 1e-12));
    REQUIRE(s.std_defined);
    REQUIRE_THAT(s.stddev, Catch::Matchers::WithinAbs(2.0, 1e-12));
}

TEST_CASE("cohort quartiles of 1..8 under linear interpolation") {
    CohortSummary s = aggregate_subjects({8.0, 1.0, 7.0, 2.0, 6.0, 3.0, 5.0, 4.0});
    REQUIRE_THAT(s.q1, Catch::Matchers::WithinAbs(2.75, 1e-12));
    REQUIRE_THAT(s.median, Catch::Matchers::WithinAbs(4.5, 1e-12));
    REQUIRE_THAT(s.q3, Catch::Matchers::WithinAbs(6.25, 1e-12));
    REQUIRE_THAT(s.iqr, Catch::Matchers::WithinAbs(3.5, 1e-12));
    REQUIRE(s.min_value == 1.0);
    REQUIRE(s.max_value == 8.0);
    REQUIRE(s.q1 <= s.median);
    REQUIRE(s.median <= s.q3);
}

TEST_CASE("a single-subject cohort leaves the deviation undefined") {
    CohortSummary s = aggregate_subjects({91.5});
    REQUIRE(!s.std_defined);
    REQUIRE(s.stddev == 0.0);
    REQUIRE(s.iqr == 0.0);
    REQUIRE(s.mean == 91.5);
    REQUIRE(s.median == 91.5);
}

TEST_CASE("cohort mean shifts with translation while the deviation stays put") {
    Rng rng(5);
    std::vector<double> base(11);
    for (auto& v : base) v = rng.uniform(60.0, 95.0);
    CohortSummary s0 = aggregate_subjects(base);
    std::vector<double> shifted = base;
    for (auto& v : shifted) v += 7.25;
    CohortSummary s1 = aggregate_subjects(shifted);
    REQUIRE_THAT(s1.mean, Catch::Matchers::WithinAbs(s0.mean + 7.25, 1e-9));
    REQUIRE_THAT(s1.stddev, Catch::Matchers::WithinAbs(s0.stddev, 1e-9));
    REQUIRE_THAT(s1.iqr, Catch::Matchers::WithinAbs(s0.iqr, 1e-9));
}

TEST_CASE("aggregating an empty cohort is rejected") {
    REQUIRE_THROWS_AS(aggregate_subjects({}), ContractError);
}

TEST_CASE("six all-positive unit-spaced differences") {
    std::vector<double> b{10, 20, 30, 40, 50, 60};
    std::vector<double> a{11, 22, 33, 44, 55, 66};  // differences 1..6
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    REQUIRE(r.w_minus == 0.0);
    REQUIRE(r.w_plus == 21.0);
    REQUIRE(r.exact);
    REQUIRE(r.n_used == 6);
    REQUIRE_THAT(r.p, Catch::Matchers::WithinAbs(0.03125, 1e-15));
    REQUIRE(r.band == "*");
}

TEST_CASE("ten pairs offset by a constant give the two-tail floor for n = 10") {
    std::vector<double> b(10), a(10);
    for (int i = 0; i < 10; ++i) {
        b[i] = i * 3.0;
        a[i] = b[i] + 5.0;
    }
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    REQUIRE(r.w_minus == 0.0);
    REQUIRE(r.exact);
    REQUIRE_THAT(r.p, Catch::Matchers::WithinAbs(2.0 / 1024.0, 1e-15));
    REQUIRE(r.band == "**");
}

TEST_CASE("exact p matches brute-force enumeration on random n = 10 pairs") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(10), b(10), d(10);
        for (int i = 0; i < 10; ++i) {
            // odd trials draw from a small exact grid to provoke ties
            const bool grid = trial % 2 != 0;
            b[i] = grid ? static_cast<double>(rng.uniform_int(40)) / 4.0
                        : rng.uniform(0.0, 10.0);
            double delta = grid
                               ? static_cast<double>(static_cast<int>(rng.uniform_int(7)) - 3)
                               : rng.uniform(-3.0, 3.0);
            if (delta == 0.0) delta = 1.0;
            a[i] = b[i] + delta;
            d[i] = a[i] - b[i];  // the differences the test statistic sees
        }
        WilcoxonResult r = wilcoxon_signed_rank(a, b);
        REQUIRE(r.exact);
        REQUIRE_THAT(r.p, Catch::Matchers::WithinAbs(brute_force_wilcoxon_p(d), 1e-12));
        REQUIRE(r.p > 0.0);
        REQUIRE(r.p <= 1.0);
    }
}

TEST_CASE("p survives a joint affine rescaling and a swap of the samples") {
    Rng rng(41);
    std::vector<double> a(12), b(12);
    for (int i = 0; i < 12; ++i) {
        b[i] = rng.uniform(0.0, 1.0);
        a[i] = b[i] + rng.uniform(-1.0, 1.0);
    }
    WilcoxonResult r0 = wilcoxon_signed_rank(a, b);
    std::vector<double> a2 = a, b2 = b;
    for (auto& v : a2) v = 3.5 * v + 11.0;
    for (auto& v : b2) v = 3.5 * v + 11.0;
    WilcoxonResult r1 = wilcoxon_signed_rank(a2, b2);
    REQUIRE(r0.p == r1.p);
    REQUIRE(r0.w_plus == r1.w_plus);
    WilcoxonResult r2 = wilcoxon_signed_rank(b, a);
    REQUIRE(r2.p == r0.p);
    REQUIRE(r2.w_plus == r0.w_minus);
    REQUIRE(r2.w_minus == r0.w_plus);
}

TEST_CASE("zero differences are dropped before ranking") {
    // five nonzero differences survive; the three zero pairs must not
    // contribute ranks
    std::vector<double> a{5, 5, 5, 1, 2, 3, 4, 6};
    std::vector<double> b{5, 5, 5, 0, 0, 0, 0, 0};
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    REQUIRE(r.n_used == 5);
    REQUIRE(r.w_plus == 15.0);
    REQUIRE(r.w_minus == 0.0);
    REQUIRE_THAT(r.p, Catch::Matchers::WithinAbs(2.0 / 32.0, 1e-15));
}

TEST_CASE("degenerate comparisons are refused") {
    std::vector<double> same{1, 2, 3, 4, 5, 6};
    REQUIRE_THROWS_AS(wilcoxon_signed_rank(same, same), InsufficientDataError);
    REQUIRE_THROWS_AS(wilcoxon_signed_rank({1, 2, 3}, {2, 3, 4}), InsufficientDataError);
    REQUIRE_THROWS_AS(wilcoxon_signed_rank({1, 2}, {1}), ContractError);
}

TEST_CASE("twenty-one pairs switch to the tie-corrected normal approximation") {
    std::vector<double> a(21), b(21);
    for (int i = 0; i < 21; ++i) {
        b[i] = i;
        a[i] = b[i] + i + 1.0;  // differences 1..21, all positive, no ties
    }
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    REQUIRE(!r.exact);
    REQUIRE(r.w_minus == 0.0);
    const double mu = 21.0 * 22.0 / 4.0;
    const double var = 21.0 * 22.0 * 43.0 / 24.0;
    const double z = (0.0 - mu + 0.5) / std::sqrt(var);
    const double expect = 2.0 * 0.5 * std::erfc(-z / std::numbers::sqrt2);
    REQUIRE_THAT(r.p, Catch::Matchers::WithinAbs(expect, 1e-15));
    REQUIRE(r.band == "****");

    // exactly at the crossover the exact path still applies
    std::vector<double> a20(a.begin(), a.begin() + 20), b20(b.begin(), b.begin() + 20);
    REQUIRE(wilcoxon_signed_rank(a20, b20).exact);
}

TEST_CASE("tied differences shrink the approximate variance") {
    // 22 pairs, differences +/-1 and +/-2 in blocks: heavy ties
    std::vector<double> a(22), b(22);
    for (int i = 0; i < 22; ++i) {
        b[i] = 10.0 * i;
        const double mag = i < 11 ? 1.0 : 2.0;
        a[i] = b[i] + (i % 3 == 0 ? -mag : mag);
    }
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    REQUIRE(!r.exact);
    REQUIRE(r.p > 0.0);
    REQUIRE(r.p <= 1.0);
    // reference arithmetic with the same tie groups (11 and 11)
    const double nd = 22.0;
    const double mu = nd * (nd + 1.0) / 4.0;
    const double tie_sum = 2.0 * (11.0 * 11.0 * 11.0 - 11.0);
    const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_sum / 48.0;
    const double w_min = std::min(r.w_plus, r.w_minus);
    const double z = (w_min - mu + 0.5) / std::sqrt(var);
    const double expect = std::min(1.0, 2.0 * 0.5 * std::erfc(-z / std::numbers::sqrt2));
    REQUIRE_THAT(r.p, Catch::Matchers::WithinAbs(expect, 1e-15));
}

TEST_CASE("significance bands follow the upper-inclusive thresholds") {
    REQUIRE(significance_band(1.0) == "ns");
    REQUIRE(significance_band(0.0501) == "ns");
    REQUIRE(significance_band(0.05) == "*");
    REQUIRE(significance_band(0.03125) == "*");
    REQUIRE(significance_band(0.01) == "**");
    REQUIRE(significance_band(0.001953125) == "**");
    REQUIRE(significance_band(0.001) == "***");
    REQUIRE(significance_band(0.0001) == "****");
    REQUIRE(significance_band(1e-9) == "****");
}

TEST_CASE("orthogonal position rows give the identity similarity matrix") {
    Tensor table = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) table.at(i, i) = 2.0 + i;
    SimilarityMatrix sim = pos_embedding_similarity(table);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            REQUIRE_THAT(sim.values[i][j],
                         Catch::Matchers::WithinAbs(i == j ? 1.0 : 0.0, 1e-12));
}

TEST_CASE("similarity is symmetric with unit diagonal on a random table") {
    Rng rng(17);
    Tensor table = Tensor::zeros({9, 6});
    for (auto& v : table.values()) v = rng.normal();
    SimilarityMatrix sim = pos_embedding_similarity(table);
    REQUIRE(sim.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) {
        REQUIRE_THAT(sim.values[i][i], Catch::Matchers::WithinAbs(1.0, 1e-12));
        for (std::size_t j = 0; j < 9; ++j) {
            REQUIRE_THAT(sim.values[i][j], Catch::Matchers::WithinAbs(sim.values[j][i], 1e-12));
            REQUIRE(sim.values[i][j] <= 1.0 + 1e-12);
            REQUIRE(sim.values[i][j] >= -1.0 - 1e-12);
        }
    }
}

TEST_CASE("a zero-norm row is flagged instead of divided") {
    Tensor table = Tensor::zeros({3, 4});
    table.at(0, 0) = 1.0;
    table.at(2, 1) = 1.0;
    SimilarityMatrix sim = pos_embedding_similarity(table);
    REQUIRE(!sim.zero_row[0]);
    REQUIRE(sim.zero_row[1]);
    REQUIRE(!sim.zero_row[2]);
    REQUIRE(sim.values[1][1] == 0.0);
    REQUIRE(sim.values[0][1] == 0.0);
}

TEST_CASE("cosine ignores positive row rescaling") {
    Rng rng(23);
    Tensor table = Tensor::zeros({5, 7});
    for (auto& v : table.values()) v = rng.normal();
    SimilarityMatrix s0 = pos_embedding_similarity(table);
    for (std::int64_t k = 0; k < 7; ++k) table.at(2, k) *= 41.5;
    SimilarityMatrix s1 = pos_embedding_similarity(table);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            REQUIRE_THAT(s1.values[i][j], Catch::Matchers::WithinAbs(s0.values[i][j], 1e-12));
}

TEST_CASE("slowly rotating rows are more alike when adjacent") {
    // row i = (cos(i*step), sin(i*step)): similarity depends only on
    // index distance and falls monotonically inside the first period
    const std::size_t rows = 24;
    Tensor table = Tensor::zeros({static_cast<std::int64_t>(rows), 2});
    const double step = 0.09;
    for (std::size_t i = 0; i < rows; ++i) {
        table.at(static_cast<std::int64_t>(i), 0) = std::cos(step * static_cast<double>(i));
        table.at(static_cast<std::int64_t>(i), 1) = std::sin(step * static_cast<double>(i));
    }
    SimilarityMatrix sim = pos_embedding_similarity(table);
    const double near = mean_similarity_at_distance(sim, 1, 1);
    const double far = mean_similarity_at_distance(sim, 10, rows);
    REQUIRE_THAT(near, Catch::Matchers::WithinAbs(std::cos(step), 1e-12));
    REQUIRE(near > far);
    REQUIRE_THROWS_AS(mean_similarity_at_distance(sim, rows + 5, rows + 9), ContractError);
}
