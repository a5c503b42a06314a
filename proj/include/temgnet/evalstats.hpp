#pragma once

// Evaluation and statistics: accuracy/confusion reports, cohort
// aggregation, the Wilcoxon signed-rank test, and position-embedding
// similarity matrices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "temgnet/errors.hpp"
#include "temgnet/model.hpp"
#include "temgnet/segmentation.hpp"
#include "temgnet/tensor.hpp"

namespace temgnet {

// ---------------------------------------------------------------------------
// per-dataset evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    std::size_t total = 0;
    std::vector<int> predictions;  // 1-based class per window, dataset order
    double accuracy = 0.0;
    // confusion[t][p] counts windows of true class t+1 predicted as p+1
    std::vector<std::vector<std::size_t>> confusion;
    std::vector<std::size_t> class_support;
    // recall is NaN for classes absent from the dataset
    std::vector<double> per_class_recall;
};

// Reduces aligned prediction/truth lists (both 1-based) into a report.
// This is the whole arithmetic of evaluation; evaluate() only supplies
// the predictions.
inline EvalReport tally_predictions(const std::vector<int>& predictions,
                                    const std::vector<int>& truths, int n_classes) {
    if (predictions.size() != truths.size())
        throw ContractError("tally_predictions: " + std::to_string(predictions.size()) +
                            " predictions against " + std::to_string(truths.size()) + " truths");
    if (predictions.empty()) throw ContractError("tally_predictions: nothing to tally");
    EvalReport rep;
    rep.total = predictions.size();
    rep.predictions = predictions;
    rep.confusion.assign(static_cast<std::size_t>(n_classes),
                         std::vector<std::size_t>(static_cast<std::size_t>(n_classes), 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int pred = predictions[i], truth = truths[i];
        if (pred < 1 || pred > n_classes || truth < 1 || truth > n_classes)
            throw ContractError("tally_predictions: class outside 1.." +
                                std::to_string(n_classes));
        ++rep.confusion[static_cast<std::size_t>(truth - 1)][static_cast<std::size_t>(pred - 1)];
        if (pred == truth) ++correct;
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.total);
    rep.class_support.resize(static_cast<std::size_t>(n_classes));
    rep.per_class_recall.resize(static_cast<std::size_t>(n_classes));
    for (std::size_t t = 0; t < static_cast<std::size_t>(n_classes); ++t) {
        std::size_t row = 0;
        for (std::size_t p = 0; p < static_cast<std::size_t>(n_classes); ++p)
            row += rep.confusion[t][p];
        rep.class_support[t] = row;
        rep.per_class_recall[t] = row == 0
                                      ? std::numeric_limits<double>::quiet_NaN()
                                      : static_cast<double>(rep.confusion[t][t]) /
                                            static_cast<double>(row);
    }
    return rep;
}

// Runs the model over every window with gradients and dropout disabled.
// Argmax ties break toward the lowest class index.
inline EvalReport evaluate(const TemgNet& model, const SegmentDataset& ds) {
    model.config.validate();
    if (ds.empty()) throw ContractError("evaluate: dataset is empty");
    if (ds.window_samples != model.config.window_samples)
        throw ContractError("evaluate: dataset window of " + std::to_string(ds.window_samples) +
                            " samples does not match the model's " +
                            std::to_string(model.config.window_samples));
    const int c = model.config.n_classes;
    std::vector<int> truths;
    truths.reserve(ds.size());
    for (const Window& w : ds.windows) {
        if (w.label < 1 || w.label > c)
            throw ContractError("evaluate: window label " + std::to_string(w.label) +
                                " outside 1.." + std::to_string(c));
        truths.push_back(w.label);
    }

    NoGradGuard eval_scope;
    std::vector<int> predictions;
    predictions.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Tensor logits = forward(model, ds.window_tensor(i));
        std::int64_t arg = 0;
        for (std::int64_t j = 1; j < logits.cols(); ++j)
            if (logits.at(0, j) > logits.at(0, arg)) arg = j;
        predictions.push_back(static_cast<int>(arg) + 1);
    }
    return tally_predictions(predictions, truths, c);
}

// ---------------------------------------------------------------------------
// cohort aggregation
// ---------------------------------------------------------------------------

struct CohortSummary {
    std::vector<double> values;  // input order preserved
    double mean = 0.0;
    double stddev = 0.0;     // n-1 denominator; 0 when undefined
    bool std_defined = false;  // false for a single subject
    double q1 = 0.0, median = 0.0, q3 = 0.0;
    double iqr = 0.0;
    double min_value = 0.0, max_value = 0.0;
};

namespace detail {

// Quantile by linear interpolation between order statistics: the value
// at fractional position (n-1)q of the sorted sample.
inline double quantile_linear(const std::vector<double>& sorted, double q) {
    const double h = static_cast<double>(sorted.size() - 1) * q;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

inline CohortSummary aggregate_subjects(const std::vector<double>& per_subject) {
    if (per_subject.empty()) throw ContractError("aggregate_subjects: no subjects");
    CohortSummary s;
    s.values = per_subject;
    const double n = static_cast<double>(per_subject.size());
    for (double v : per_subject) s.mean += v;
    s.mean /= n;
    if (per_subject.size() >= 2) {
        double ss = 0.0;
        for (double v : per_subject) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / (n - 1.0));
        s.std_defined = true;
    }
    std::vector<double> sorted = per_subject;
    std::sort(sorted.begin(), sorted.end());
    s.q1 = detail::quantile_linear(sorted, 0.25);
    s.median = detail::quantile_linear(sorted, 0.5);
    s.q3 = detail::quantile_linear(sorted, 0.75);
    s.iqr = s.q3 - s.q1;
    s.min_value = sorted.front();
    s.max_value = sorted.back();
    return s;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

struct WilcoxonResult {
    double w_plus = 0.0;
    double w_minus = 0.0;
    std::size_t n_used = 0;  // pairs remaining after zero-difference removal
    double p = 1.0;          // two-sided
    bool exact = false;      // enumeration (true) or normal approximation
    std::string band;        // ns, *, **, ***, ****
};

inline std::string significance_band(double p) {
    if (p <= 1e-4) return "****";
    if (p <= 1e-3) return "***";
    if (p <= 1e-2) return "**";
    if (p <= 5e-2) return "*";
    return "ns";
}

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace detail

// Two-sided paired test. Zero differences are dropped, tied absolute
// differences receive average ranks, and the reported statistic pair is
// (W+, W-). For n <= kWilcoxonExactLimit the p-value enumerates the
// exact null distribution of W+ (counting sign assignments by dynamic
// programming over doubled ranks, which are integers even under average
// ranking); beyond that a normal approximation applies, with the tie
// correction sum(t^3 - t)/48 removed from the variance and a 0.5
// continuity correction.
inline constexpr std::size_t kWilcoxonExactLimit = 20;

inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                           const std::vector<double>& b) {
    if (a.size() != b.size())
        throw ContractError("wilcoxon: samples have lengths " + std::to_string(a.size()) +
                            " and " + std::to_string(b.size()));
    std::vector<double> diff;
    diff.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) diff.push_back(a[i] - b[i]);
    const std::size_t n = diff.size();
    if (n < 5)
        throw InsufficientDataError("wilcoxon: only " + std::to_string(n) +
                                    " nonzero differences; need at least 5");

    // average ranks over |diff|
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
        return std::abs(diff[x]) < std::abs(diff[y]);
    });
    std::vector<double> rank(n, 0.0);
    std::vector<std::size_t> tie_sizes;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && std::abs(diff[idx[j]]) == std::abs(diff[idx[i]])) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) rank[idx[k]] = avg;
        if (j - i >= 2) tie_sizes.push_back(j - i);
        i = j;
    }

    WilcoxonResult r;
    r.n_used = n;
    for (std::size_t i = 0; i < n; ++i)
        (diff[i] > 0.0 ? r.w_plus : r.w_minus) += rank[i];

    const double w_min = std::min(r.w_plus, r.w_minus);
    if (n <= kWilcoxonExactLimit) {
        // doubled ranks are exact integers; count subsets by total
        std::vector<std::uint64_t> scaled(n);
        std::uint64_t total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            scaled[i] = static_cast<std::uint64_t>(std::llround(2.0 * rank[i]));
            total += scaled[i];
        }
        std::vector<std::uint64_t> count(total + 1, 0);
        count[0] = 1;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = total + 1; s-- > scaled[i];)
                count[s] += count[s - scaled[i]];
        const auto w_scaled = static_cast<std::uint64_t>(std::llround(2.0 * w_min));
        std::uint64_t tail = 0;
        for (std::size_t s = 0; s <= w_scaled; ++s) tail += count[s];
        // the null distribution of W+ is symmetric, so doubling the
        // smaller tail is the two-sided p
        r.p = std::min(1.0, 2.0 * static_cast<double>(tail) /
                                std::pow(2.0, static_cast<double>(n)));
        r.exact = true;
    } else {
        const double nd = static_cast<double>(n);
        const double mu = nd * (nd + 1.0) / 4.0;
        double tie_sum = 0.0;
        for (std::size_t t : tie_sizes) {
            const double td = static_cast<double>(t);
            tie_sum += td * td * td - td;
        }
        const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_sum / 48.0;
        if (var <= 0.0)
            throw InsufficientDataError("wilcoxon: variance vanished under ties");
        const double z = (w_min - mu + 0.5) / std::sqrt(var);
        r.p = std::min(1.0, 2.0 * detail::normal_cdf(z));
        r.exact = false;
    }
    r.band = significance_band(r.p);
    return r;
}

// ---------------------------------------------------------------------------
// position-embedding similarity
// ---------------------------------------------------------------------------

struct SimilarityMatrix {
    std::vector<std::vector<double>> values;  // cosine of row pairs
    std::vector<bool> zero_row;  // rows with vanishing norm; their entries are 0
    std::size_t size() const { return values.size(); }
};

// Cosine similarity between every pair of position-table rows (row 0 is
// the class-token slot). Zero-norm rows are flagged rather than divided.
inline SimilarityMatrix pos_embedding_similarity(const Tensor& pos_table) {
    detail::check_2d(pos_table, "pos_embedding_similarity");
    const std::int64_t rows = pos_table.rows(), d = pos_table.cols();
    SimilarityMatrix sim;
    sim.values.assign(static_cast<std::size_t>(rows),
                      std::vector<double>(static_cast<std::size_t>(rows), 0.0));
    sim.zero_row.assign(static_cast<std::size_t>(rows), false);
    std::vector<double> norm(static_cast<std::size_t>(rows), 0.0);
    for (std::int64_t i = 0; i < rows; ++i) {
        double ss = 0.0;
        for (std::int64_t k = 0; k < d; ++k) ss += pos_table.at(i, k) * pos_table.at(i, k);
        norm[static_cast<std::size_t>(i)] = std::sqrt(ss);
        if (ss == 0.0) sim.zero_row[static_cast<std::size_t>(i)] = true;
    }
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < rows; ++j) {
            if (sim.zero_row[static_cast<std::size_t>(i)] ||
                sim.zero_row[static_cast<std::size_t>(j)])
                continue;
            double dot = 0.0;
            for (std::int64_t k = 0; k < d; ++k) dot += pos_table.at(i, k) * pos_table.at(j, k);
            sim.values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                dot / (norm[static_cast<std::size_t>(i)] * norm[static_cast<std::size_t>(j)]);
        }
    return sim;
}

// Mean cosine similarity over patch-row pairs (class-token row excluded)
// at a given index distance band; used to quantify that neighboring
// positions end up more alike than distant ones.
inline double mean_similarity_at_distance(const SimilarityMatrix& sim, std::size_t min_dist,
                                          std::size_t max_dist) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 1; i < sim.size(); ++i)
        for (std::size_t j = i + 1; j < sim.size(); ++j) {
            const std::size_t dist = j - i;
            if (dist < min_dist || dist > max_dist) continue;
            if (sim.zero_row[i] || sim.zero_row[j]) continue;
            sum += sim.values[i][j];
            ++count;
        }
    if (count == 0) throw ContractError("mean_similarity_at_distance: empty distance band");
    return sum / static_cast<double>(count);
}

}  // namespace temgnet
