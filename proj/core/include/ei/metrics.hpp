#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ei/ops.hpp"

namespace ei {

// Non-interpolated AP over a descending-score ranking (ties keep their
// original order). Throws UndefinedMetricError when there are no positives.
double average_precision(std::span<const double> scores, std::span<const int> labels);

// Mann-Whitney AUC: (concordant pairs + half the tied pairs) / (P*N).
// Throws UndefinedMetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Harmonic mean of sensitivity and specificity for hard decisions; 0 when
// both are 0. Throws UndefinedMetricError unless both classes are present.
double s2(std::span<const int> decisions, std::span<const int> labels);

struct ClassMetrics {
    std::optional<double> ap;
    std::optional<double> auc;
    std::optional<double> s2;
};

struct EvalReport {
    std::vector<ClassMetrics> per_class;
    // Unweighted means over the classes where the metric is defined.
    std::optional<double> map;
    std::optional<double> mauc;
    std::optional<double> ms2;
    std::int64_t samples = 0;
    std::int64_t skipped = 0;  // classes with at least one undefined metric
    std::vector<std::string> warnings;

    // Pretty JSON with fixed key order; undefined entries serialize as null.
    std::string to_json() const;
};

// Per-class metrics plus macro means for score matrix [n][C] against
// one-hot (multiclass) or multi-hot (multilabel) label rows. Decisions are
// argmax (lowest index on ties) or a 0.5 threshold respectively. Classes
// with undefined metrics are skipped from the macro means and recorded.
EvalReport evaluate_scores(const std::vector<std::vector<double>>& scores,
                           const std::vector<std::vector<double>>& labels,
                           LabelMode mode);

}  // namespace ei
