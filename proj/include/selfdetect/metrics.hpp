#pragma once

// Evaluation of detection scores against answer correctness: AUROC (rank
// statistic with tie handling), PRAUC (step-wise, ties grouped at one
// threshold), ECE over equal-width bins, selective-prediction curves and
// per-correctness quartile summaries.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "selfdetect/core.hpp"

namespace selfdetect {

struct ScoredItem {
    double score = 0.0;
    bool correct = false;
};

struct SelectivePoint {
    double abstain_fraction = 0.0;
    double remaining_accuracy = 0.0;
};

/// min/Q1/median/Q3/max of one correctness group. Quantiles use linear
/// interpolation between order statistics (position q*(m-1)).
struct QuartileSummary {
    std::size_t n = 0;
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

struct MetricReport {
    std::optional<double> auroc;  // empty when labels are single-class
    std::optional<double> prauc;  // empty when no item is correct
    double ece = 0.0;
    int ece_bins = 10;
    std::size_t n = 0;
    std::vector<SelectivePoint> selective_curve;
    QuartileSummary correct_stats;
    QuartileSummary incorrect_stats;
    double parse_failure_rate = 0.0;
    long long api_calls = 0;
};

/// Mann-Whitney AUROC: P(score_correct > score_incorrect) + 0.5 P(tie),
/// computed via average ranks in O(n log n). Throws DegenerateLabels when
/// either class is empty.
inline double auroc(const std::vector<ScoredItem>& items) {
    std::size_t pos = 0, neg = 0;
    for (const auto& it : items) (it.correct ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw DegenerateLabels("auroc needs at least one correct and one incorrect item");

    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return items[a].score < items[b].score; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && items[order[j]].score == items[order[i]].score) ++j;
        double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (items[order[k]].correct) pos_rank_sum += avg_rank;
        i = j;
    }
    double p = static_cast<double>(pos);
    return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

/// Area under the precision-recall curve, rectangular integration over the
/// distinct score thresholds in descending order (predict positive at
/// score >= threshold). Throws DegenerateLabels with zero correct items.
inline double prauc(const std::vector<ScoredItem>& items) {
    std::size_t pos = 0;
    for (const auto& it : items)
        if (it.correct) ++pos;
    if (pos == 0) throw DegenerateLabels("prauc needs at least one correct item");

    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return items[a].score > items[b].score; });

    double area = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && items[order[j]].score == items[order[i]].score) ++j;
        for (std::size_t k = i; k < j; ++k) (items[order[k]].correct ? tp : fp)++;
        double recall = static_cast<double>(tp) / static_cast<double>(pos);
        double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return area;
}

/// Bin index for a score under B equal-width bins over [0,1]; the last bin
/// is right-closed so score 1.0 lands in bin B-1.
inline int ece_bin_index(double score, int bins) {
    int b = static_cast<int>(std::floor(score * bins));
    if (b >= bins) b = bins - 1;
    if (b < 0) b = 0;
    return b;
}

/// Expected calibration error over equal-width bins:
/// sum_b (n_b/n) * |accuracy_b - mean_confidence_b|.
inline double ece(const std::vector<ScoredItem>& items, int bins = 10) {
    if (items.empty()) throw DegenerateLabels("ece needs at least one item");
    if (bins < 1) throw Error("ece: bins must be >= 1");
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> acc_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    for (const auto& it : items) {
        auto b = static_cast<std::size_t>(ece_bin_index(it.score, bins));
        conf_sum[b] += it.score;
        acc_sum[b] += it.correct ? 1.0 : 0.0;
        count[b] += 1;
    }
    double total = static_cast<double>(items.size());
    double e = 0.0;
    for (std::size_t b = 0; b < static_cast<std::size_t>(bins); ++b) {
        if (count[b] == 0) continue;
        double nb = static_cast<double>(count[b]);
        e += (nb / total) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
    }
    return e;
}

/// For each abstention fraction f, drops the floor(f*n) lowest-scored items
/// (ties broken by stable input order) and reports accuracy of the rest.
/// Fractions must lie in [0,1) and be strictly increasing.
inline std::vector<SelectivePoint> selective_prediction(const std::vector<ScoredItem>& items,
                                                        const std::vector<double>& fractions) {
    if (items.empty()) throw DegenerateLabels("selective_prediction needs items");
    double prev = -1.0;
    for (double f : fractions) {
        if (f < 0.0 || f >= 1.0) throw Error("selective_prediction: fraction out of [0,1)");
        if (f <= prev) throw Error("selective_prediction: fractions must be strictly increasing");
        prev = f;
    }

    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return items[a].score < items[b].score;
    });

    std::vector<SelectivePoint> curve;
    curve.reserve(fractions.size());
    for (double f : fractions) {
        auto drop = static_cast<std::size_t>(std::floor(f * static_cast<double>(items.size())));
        std::size_t kept = items.size() - drop;
        double correct = 0.0;
        for (std::size_t k = drop; k < order.size(); ++k)
            if (items[order[k]].correct) correct += 1.0;
        curve.push_back(SelectivePoint{f, kept ? correct / static_cast<double>(kept) : 0.0});
    }
    return curve;
}

inline QuartileSummary quartiles(std::vector<double> xs) {
    QuartileSummary s;
    s.n = xs.size();
    if (xs.empty()) return s;
    std::sort(xs.begin(), xs.end());
    auto quantile = [&](double q) {
        double pos = q * static_cast<double>(xs.size() - 1);
        auto lo = static_cast<std::size_t>(std::floor(pos));
        auto hi = static_cast<std::size_t>(std::ceil(pos));
        double frac = pos - static_cast<double>(lo);
        return xs[lo] * (1.0 - frac) + xs[hi] * frac;
    };
    s.min = xs.front();
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    s.max = xs.back();
    return s;
}

/// Quartile summaries for the correct and incorrect groups, the data behind
/// score-overlap box plots.
inline std::pair<QuartileSummary, QuartileSummary> score_stats(
    const std::vector<ScoredItem>& items) {
    std::vector<double> correct, incorrect;
    for (const auto& it : items) (it.correct ? correct : incorrect).push_back(it.score);
    return {quartiles(std::move(correct)), quartiles(std::move(incorrect))};
}

/// Default abstention grid 0, 0.05, ..., 0.5.
inline std::vector<double> default_selective_fractions() {
    std::vector<double> fs;
    for (int i = 0; i <= 10; ++i) fs.push_back(static_cast<double>(i) * 0.05);
    return fs;
}

/// Full report over one strategy's scored items. Degenerate label sets leave
/// auroc/prauc unset instead of propagating NaN.
inline MetricReport evaluate(const std::vector<ScoredItem>& items, int ece_bins = 10,
                             const std::vector<double>& fractions = default_selective_fractions()) {
    MetricReport r;
    r.n = items.size();
    r.ece_bins = ece_bins;
    if (items.empty()) return r;
    try {
        r.auroc = auroc(items);
    } catch (const DegenerateLabels&) {
    }
    try {
        r.prauc = prauc(items);
    } catch (const DegenerateLabels&) {
    }
    r.ece = ece(items, ece_bins);
    r.selective_curve = selective_prediction(items, fractions);
    auto [cs, is] = score_stats(items);
    r.correct_stats = cs;
    r.incorrect_stats = is;
    return r;
}

}  // namespace selfdetect
