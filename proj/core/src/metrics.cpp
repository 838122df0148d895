#include "ei/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ei/errors.hpp"

namespace ei {

namespace {

void check_binary(std::span<const int> labels, const char* what) {
    for (int v : labels) {
        if (v != 0 && v != 1) throw DataError(std::string(what) + " must be 0 or 1");
    }
}

void check_lengths(std::size_t a, std::size_t b) {
    if (a != b) {
        throw ShapeError("metric inputs differ in length: " + std::to_string(a) + " vs " +
                         std::to_string(b));
    }
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    check_lengths(scores.size(), labels.size());
    check_binary(labels, "labels");
    const std::int64_t p = std::accumulate(labels.begin(), labels.end(), std::int64_t{0});
    if (p == 0) throw UndefinedMetricError("average precision undefined: no positive labels");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    std::int64_t tp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]] == 1) {
            ++tp;
            ap += static_cast<double>(tp) / static_cast<double>(k + 1);
        }
    }
    return ap / static_cast<double>(p);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    check_lengths(scores.size(), labels.size());
    check_binary(labels, "labels");
    const std::int64_t p = std::accumulate(labels.begin(), labels.end(), std::int64_t{0});
    const std::int64_t n = static_cast<std::int64_t>(labels.size()) - p;
    if (p == 0 || n == 0) throw UndefinedMetricError("auc undefined: single-class input");

    // Rank statistic with mid-ranks for ties; equals pair counting with
    // tied pairs worth one half.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) pos_rank_sum += mid_rank;
        }
        i = j;
    }
    const double pd = static_cast<double>(p);
    return (pos_rank_sum - pd * (pd + 1.0) / 2.0) / (pd * static_cast<double>(n));
}

double s2(std::span<const int> decisions, std::span<const int> labels) {
    check_lengths(decisions.size(), labels.size());
    check_binary(decisions, "decisions");
    check_binary(labels, "labels");
    std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            (decisions[i] == 1 ? tp : fn)++;
        } else {
            (decisions[i] == 0 ? tn : fp)++;
        }
    }
    if (tp + fn == 0 || tn + fp == 0) {
        throw UndefinedMetricError("s2 undefined: single-class input");
    }
    const double sens = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double spec = static_cast<double>(tn) / static_cast<double>(tn + fp);
    if (sens + spec == 0.0) return 0.0;
    return 2.0 * sens * spec / (sens + spec);
}

EvalReport evaluate_scores(const std::vector<std::vector<double>>& scores,
                           const std::vector<std::vector<double>>& labels, LabelMode mode) {
    check_lengths(scores.size(), labels.size());
    if (scores.empty()) throw DataError("evaluate_scores: no samples");
    const std::size_t classes = scores[0].size();
    if (classes < 2) throw ShapeError("evaluate_scores: need at least 2 classes");
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i].size() != classes || labels[i].size() != classes) {
            throw ShapeError("evaluate_scores: row " + std::to_string(i) + " has inconsistent width");
        }
    }

    // Hard decisions, one-vs-rest per class.
    std::vector<std::vector<int>> decisions(scores.size(), std::vector<int>(classes, 0));
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (mode == LabelMode::multiclass) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c) {
                if (scores[i][c] > scores[i][best]) best = c;
            }
            decisions[i][best] = 1;
        } else {
            for (std::size_t c = 0; c < classes; ++c) decisions[i][c] = scores[i][c] >= 0.5 ? 1 : 0;
        }
    }

    EvalReport report;
    report.samples = static_cast<std::int64_t>(scores.size());
    double ap_sum = 0, auc_sum = 0, s2_sum = 0;
    std::int64_t ap_n = 0, auc_n = 0, s2_n = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<double> col(scores.size());
        std::vector<int> lab(scores.size()), dec(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            col[i] = scores[i][c];
            lab[i] = labels[i][c] >= 0.5 ? 1 : 0;
            dec[i] = decisions[i][c];
        }
        ClassMetrics m;
        bool any_undefined = false;
        try {
            m.ap = average_precision(col, lab);
            ap_sum += *m.ap;
            ++ap_n;
        } catch (const UndefinedMetricError& e) {
            any_undefined = true;
            report.warnings.push_back("class " + std::to_string(c) + ": " + e.what());
        }
        try {
            m.auc = auc(col, lab);
            auc_sum += *m.auc;
            ++auc_n;
        } catch (const UndefinedMetricError& e) {
            any_undefined = true;
            report.warnings.push_back("class " + std::to_string(c) + ": " + e.what());
        }
        try {
            m.s2 = s2(dec, lab);
            s2_sum += *m.s2;
            ++s2_n;
        } catch (const UndefinedMetricError& e) {
            any_undefined = true;
            report.warnings.push_back("class " + std::to_string(c) + ": " + e.what());
        }
        if (any_undefined) ++report.skipped;
        report.per_class.push_back(m);
    }
    if (ap_n > 0) report.map = ap_sum / static_cast<double>(ap_n);
    if (auc_n > 0) report.mauc = auc_sum / static_cast<double>(auc_n);
    if (s2_n > 0) report.ms2 = s2_sum / static_cast<double>(s2_n);
    return report;
}

std::string EvalReport::to_json() const {
    using json = nlohmann::ordered_json;
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };

    json j;
    auto& pc = j["per_class"] = json::array();
    for (const auto& m : per_class) {
        json row;
        row["ap"] = opt(m.ap);
        row["auc"] = opt(m.auc);
        row["s2"] = opt(m.s2);
        pc.push_back(row);
    }
    j["macro"] = {{"map", opt(map)}, {"mauc", opt(mauc)}, {"ms2", opt(ms2)}};
    j["counts"] = {{"samples", samples},
                   {"classes", static_cast<std::int64_t>(per_class.size())},
                   {"skipped", skipped}};
    j["warnings"] = warnings;
    return j.dump(2);
}

}  // namespace ei
