#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ei/errors.hpp"
#include "ei/metrics.hpp"
#include "ei/tensor.hpp"

using namespace ei;

namespace {

// Independent AP oracle: precision at each positive, computed per element
// by counting how many samples rank at or above it (higher score, or equal
// score with smaller index, mirroring the stable-sort tie rule).
double ap_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    double sum = 0.0;
    std::int64_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 1) continue;
        ++positives;
        std::int64_t rank = 0, tp = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const bool above = scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
            if (!above) continue;
            ++rank;
            if (labels[j] == 1) ++tp;
        }
        sum += static_cast<double>(tp) / static_cast<double>(rank);
    }
    return sum / static_cast<double>(positives);
}

// Independent AUC oracle: enumerate all positive/negative pairs.
double auc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("average precision on worked rankings") {
    std::vector<double> s{0.9, 0.8, 0.7};
    std::vector<int> l{1, 0, 1};
    CHECK(average_precision(s, l) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));

    std::vector<double> perfect{0.9, 0.8, 0.2, 0.1};
    std::vector<int> pl{1, 1, 0, 0};
    CHECK(average_precision(perfect, pl) == 1.0);

    std::vector<int> all_pos{1, 1, 1};
    CHECK(average_precision(s, all_pos) == 1.0);

    std::vector<int> none{0, 0, 0};
    CHECK_THROWS_AS(static_cast<void>(average_precision(s, none)), UndefinedMetricError);
    std::vector<int> bad{1, 2, 0};
    CHECK_THROWS_AS(static_cast<void>(average_precision(s, bad)), DataError);
    std::vector<double> shorter{0.5};
    CHECK_THROWS_AS(static_cast<void>(average_precision(shorter, all_pos)), ShapeError);
}

TEST_CASE("auc on worked rankings") {
    std::vector<double> s{0.9, 0.8, 0.7};
    std::vector<int> l{1, 0, 1};
    CHECK(auc(s, l) == 0.5);

    std::vector<double> sep{0.9, 0.8, 0.2, 0.1};
    std::vector<int> sl{1, 1, 0, 0};
    CHECK(auc(sep, sl) == 1.0);

    std::vector<double> tied{0.4, 0.4, 0.4, 0.4};
    CHECK(auc(tied, sl) == 0.5);

    std::vector<int> single{1, 1, 1, 1};
    CHECK_THROWS_AS(static_cast<void>(auc(sep, single)), UndefinedMetricError);
}

TEST_CASE("s2 from confusion counts") {
    // 5 positives with 4 hits, 5 negatives with 3 hits: sens .8, spec .6.
    std::vector<int> lab{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    std::vector<int> dec{1, 1, 1, 1, 0, 0, 0, 0, 1, 1};
    CHECK(s2(dec, lab) == doctest::Approx(2.0 * 0.8 * 0.6 / 1.4).epsilon(1e-12));

    std::vector<int> perfect = lab;
    CHECK(s2(perfect, lab) == 1.0);

    // sens 1, spec 0.
    std::vector<int> all_one(10, 1);
    CHECK(s2(all_one, lab) == 0.0);

    // Everything wrong: sens 0, spec 0 hits the defined-zero rule.
    std::vector<int> flipped;
    for (int v : lab) flipped.push_back(1 - v);
    CHECK(s2(flipped, lab) == 0.0);

    std::vector<int> single(10, 1);
    CHECK_THROWS_AS(static_cast<void>(s2(dec, single)), UndefinedMetricError);
}

TEST_CASE("ranking metrics match brute-force oracles") {
    Rng rng(2024);
    int checked = 0;
    while (checked < 200) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 48);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        const bool coarse = rng.uniform() < 0.5;  // force ties half the time
        for (std::size_t i = 0; i < n; ++i) {
            double u = rng.uniform();
            scores[i] = coarse ? std::floor(u * 4.0) / 4.0 : u;
            labels[i] = rng.uniform() < 0.4 ? 1 : 0;
        }
        const std::int64_t p = std::count(labels.begin(), labels.end(), 1);
        if (p == 0 || p == static_cast<std::int64_t>(n)) continue;
        ++checked;
        CHECK(std::fabs(average_precision(scores, labels) - ap_oracle(scores, labels)) <= 1e-9);
        CHECK(std::fabs(auc(scores, labels) - auc_oracle(scores, labels)) <= 1e-9);
    }
}

TEST_CASE("ranking metrics are invariant to monotone transforms and permutations") {
    Rng rng(77);
    std::vector<double> scores(40);
    std::vector<int> labels(40);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.normal(0.0, 1.0);
        labels[i] = i % 3 == 0 ? 1 : 0;
    }
    const double ap0 = average_precision(scores, labels);
    const double auc0 = auc(scores, labels);

    std::vector<double> warped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) warped[i] = std::exp(3.0 * scores[i]) + 1.0;
    CHECK(average_precision(warped, labels) == doctest::Approx(ap0).epsilon(1e-12));
    CHECK(auc(warped, labels) == doctest::Approx(auc0).epsilon(1e-12));

    // Distinct scores, so the tie rule cannot bite.
    std::vector<std::size_t> perm(scores.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 17 + 5) % perm.size();
    std::vector<double> ps(scores.size());
    std::vector<int> pl(labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        ps[i] = scores[perm[i]];
        pl[i] = labels[perm[i]];
    }
    CHECK(average_precision(ps, pl) == doctest::Approx(ap0).epsilon(1e-12));
    CHECK(auc(ps, pl) == doctest::Approx(auc0).epsilon(1e-12));
}

TEST_CASE("score matrix evaluation aggregates per-class metrics") {
    // Two well-separated classes, multiclass rows sum to 1.
    std::vector<std::vector<double>> scores{{0.9, 0.1}, {0.8, 0.2}, {0.3, 0.7}, {0.2, 0.8}};
    std::vector<std::vector<double>> labels{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
    EvalReport r = evaluate_scores(scores, labels, LabelMode::multiclass);
    REQUIRE(r.per_class.size() == 2);
    CHECK(r.samples == 4);
    CHECK(r.skipped == 0);
    CHECK(r.warnings.empty());

    for (std::size_t c = 0; c < 2; ++c) {
        std::vector<double> col{scores[0][c], scores[1][c], scores[2][c], scores[3][c]};
        std::vector<int> lab{static_cast<int>(labels[0][c]), static_cast<int>(labels[1][c]),
                             static_cast<int>(labels[2][c]), static_cast<int>(labels[3][c])};
        CHECK(*r.per_class[c].ap == average_precision(col, lab));
        CHECK(*r.per_class[c].auc == auc(col, lab));
    }
    CHECK(*r.map == doctest::Approx((*r.per_class[0].ap + *r.per_class[1].ap) / 2).epsilon(1e-12));
    CHECK(*r.mauc == 1.0);
    CHECK(*r.ms2 == 1.0);
}

TEST_CASE("classes without positives are skipped and recorded") {
    std::vector<std::vector<double>> scores{{0.9, 0.4}, {0.2, 0.3}, {0.7, 0.1}};
    std::vector<std::vector<double>> labels{{1, 0}, {0, 0}, {1, 0}};
    EvalReport r = evaluate_scores(scores, labels, LabelMode::multilabel);
    REQUIRE(r.per_class.size() == 2);
    CHECK_FALSE(r.per_class[1].ap.has_value());
    CHECK_FALSE(r.per_class[1].auc.has_value());
    CHECK(r.skipped == 1);
    CHECK_FALSE(r.warnings.empty());
    // Macro means fall back to the one defined class.
    CHECK(*r.map == *r.per_class[0].ap);
    CHECK(*r.mauc == *r.per_class[0].auc);
}

TEST_CASE("multiclass decisions break score ties toward the lowest class") {
    std::vector<std::vector<double>> scores{{0.5, 0.5}, {0.5, 0.5}, {0.4, 0.6}};
    std::vector<std::vector<double>> labels{{1, 0}, {1, 0}, {0, 1}};
    EvalReport r = evaluate_scores(scores, labels, LabelMode::multiclass);
    // Tied rows decide class 0, so class 0 is perfectly recalled and
    // perfectly specific.
    CHECK(*r.per_class[0].s2 == 1.0);
}

TEST_CASE("evaluation rejects malformed inputs") {
    std::vector<std::vector<double>> scores{{0.9, 0.1}, {0.8}};
    std::vector<std::vector<double>> labels{{1, 0}, {0, 1}};
    CHECK_THROWS_AS(static_cast<void>(evaluate_scores(scores, labels, LabelMode::multiclass)),
                    ShapeError);

    std::vector<std::vector<double>> empty;
    CHECK_THROWS_AS(static_cast<void>(evaluate_scores(empty, empty, LabelMode::multiclass)),
                    DataError);

    std::vector<std::vector<double>> one_col{{0.9}, {0.8}};
    std::vector<std::vector<double>> one_lab{{1}, {0}};
    CHECK_THROWS_AS(static_cast<void>(evaluate_scores(one_col, one_lab, LabelMode::multiclass)),
                    ShapeError);
}

TEST_CASE("report serializes with fixed key order and nulls for skipped classes") {
    std::vector<std::vector<double>> scores{{0.9, 0.4}, {0.2, 0.3}, {0.7, 0.1}};
    std::vector<std::vector<double>> labels{{1, 0}, {0, 0}, {1, 0}};
    EvalReport r = evaluate_scores(scores, labels, LabelMode::multilabel);
    const std::string j = r.to_json();

    const auto per_class_at = j.find("\"per_class\"");
    const auto macro_at = j.find("\"macro\"");
    const auto counts_at = j.find("\"counts\"");
    const auto warnings_at = j.find("\"warnings\"");
    REQUIRE(per_class_at != std::string::npos);
    REQUIRE(macro_at != std::string::npos);
    REQUIRE(counts_at != std::string::npos);
    REQUIRE(warnings_at != std::string::npos);
    CHECK(per_class_at < macro_at);
    CHECK(macro_at < counts_at);
    CHECK(counts_at < warnings_at);
    CHECK(j.find("\"ap\": null") != std::string::npos);
    CHECK(j.find("\"map\"") < j.find("\"mauc\""));
    CHECK(j.find("\"mauc\"") < j.find("\"ms2\""));
}
