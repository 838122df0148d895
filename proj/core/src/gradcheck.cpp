#include "ei/gradcheck.hpp"

#include <cmath>
#include <unordered_set>

#include "ei/tape.hpp"

namespace ei {

namespace {

double eval_loss(const std::function<Tensor()>& f) {
    Tensor loss = f();
    if (loss.numel() != 1) {
        throw ShapeError("gradcheck: objective must be scalar, got " + loss.shape_str());
    }
    return loss.value_at(0);
}

}  // namespace

GradCheckReport gradcheck(const std::function<Tensor()>& f, std::span<const NamedParam> params,
                          double eps, std::uint64_t seed, std::int64_t coords_per_tensor) {
    // Central differences are only trustworthy in full double precision.
    PrecisionScope prec(Precision::f64);

    GradCheckReport report;
    report.max_rel_err = 0.0;
    report.coords_checked = 0;
    report.finite = true;

    std::vector<Tensor> leaves;  // non-const handles onto the same storage
    leaves.reserve(params.size());
    for (const NamedParam& p : params) {
        leaves.push_back(p.tensor);
        leaves.back().drop_grad();
    }

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f();
        if (loss.numel() != 1) {
            throw ShapeError("gradcheck: objective must be scalar, got " + loss.shape_str());
        }
        if (!std::isfinite(loss.value_at(0))) report.finite = false;
        tape.backward(loss);
        for (const NamedParam& p : params) {
            if (p.tensor.has_grad()) {
                auto g = p.tensor.grad();
                analytic.emplace_back(g.begin(), g.end());
            } else {
                analytic.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
            }
        }
    }

    // Numeric phase: freeze every leaf so f() builds no graph while we perturb.
    std::vector<bool> saved_rg;
    for (Tensor& t : leaves) {
        saved_rg.push_back(t.requires_grad());
        t.set_requires_grad(false);
    }

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const NamedParam& p = params[pi];
        const std::int64_t n = p.tensor.numel();
        std::vector<std::int64_t> coords;
        if (n <= coords_per_tensor) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            Rng rng(Rng::derive(seed, p.name));
            std::unordered_set<std::int64_t> seen;
            while (static_cast<std::int64_t>(coords.size()) < coords_per_tensor) {
                const std::int64_t idx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
                if (seen.insert(idx).second) coords.push_back(idx);
            }
        }

        auto vals = leaves[pi].raw_values();
        for (std::int64_t idx : coords) {
            const double theta = vals[static_cast<std::size_t>(idx)];
            const double h = eps * std::max(1.0, std::abs(theta));
            vals[static_cast<std::size_t>(idx)] = theta + h;
            const double lp = eval_loss(f);
            vals[static_cast<std::size_t>(idx)] = theta - h;
            const double lm = eval_loss(f);
            vals[static_cast<std::size_t>(idx)] = theta;

            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][static_cast<std::size_t>(idx)];
            if (!std::isfinite(lp) || !std::isfinite(lm) || !std::isfinite(a)) {
                report.finite = false;
            }
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p.name + "[" + std::to_string(idx) + "]";
            }
            ++report.coords_checked;
        }
    }

    for (std::size_t pi = 0; pi < leaves.size(); ++pi) {
        leaves[pi].set_requires_grad(saved_rg[pi]);
        leaves[pi].drop_grad();
    }

    return report;
}

}  // namespace ei
