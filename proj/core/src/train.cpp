#include "ei/train.hpp"

#include <cmath>
#include <numeric>

#include "ei/errors.hpp"
#include "ei/tape.hpp"

namespace ei {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (max_epochs < 0) throw ConfigError("max epochs must be nonnegative");
    if (patience < 0) throw ConfigError("patience must be nonnegative");
    if (lr_min < 0 || lr_max < lr_min) throw ConfigError("need 0 <= lr_min <= lr_max");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight decay must be nonnegative");
    if (warmup_frac < 0 || warmup_frac > 1) throw ConfigError("warmup fraction must be in [0, 1]");
}

bool weight_decay_applies(const std::string& name) {
    return name.find("bias") == std::string::npos && name.find("router") == std::string::npos;
}

SgdOptimizer::SgdOptimizer(ParamList params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.reserve(params_.size());
    decay_.reserve(params_.size());
    for (const auto& p : params_) {
        velocity_.emplace_back(p.tensor.values().size(), 0.0);
        decay_.push_back(weight_decay_applies(p.name));
    }
}

void SgdOptimizer::zero_grad() {
    for (auto& p : params_) p.tensor.drop_grad();
}

void SgdOptimizer::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].tensor;
        if (!t.has_grad()) continue;
        const auto g = t.grad();
        auto v = velocity_[i].data();
        auto theta = t.raw_values();
        const double wd = decay_[i] ? weight_decay_ : 0.0;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            v[k] = momentum_ * v[k] + (g[k] + wd * theta[k]);
            theta[k] = quantize(theta[k] - lr * v[k]);
        }
    }
}

std::vector<Tensor> SgdOptimizer::snapshot() const {
    std::vector<Tensor> snap;
    snap.reserve(params_.size());
    for (const auto& p : params_) snap.push_back(p.tensor.clone());
    return snap;
}

void SgdOptimizer::restore(std::span<const Tensor> snap) {
    if (snap.size() != params_.size()) {
        throw ShapeError("optimizer snapshot holds " + std::to_string(snap.size()) +
                         " tensors, expected " + std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto dst = params_[i].tensor.raw_values();
        const auto src = snap[i].values();
        if (src.size() != dst.size()) {
            throw ShapeError("snapshot tensor " + params_[i].name + " changed size");
        }
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t steps_per_epoch,
             const TrainConfig& cfg) {
    const std::int64_t period = std::max<std::int64_t>(1, 2 * steps_per_epoch);
    const double u = static_cast<double>(step % period) / static_cast<double>(period);
    const double tri = 1.0 - std::abs(2.0 * u - 1.0);
    const double warm = cfg.warmup_frac * static_cast<double>(total_steps);
    const double ramp = warm > 0.0 ? std::min(1.0, static_cast<double>(step) / warm) : 1.0;
    if (tri == 0.0) return cfg.lr_min;
    if (tri == 1.0 && ramp >= 1.0) return cfg.lr_max;
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * tri * ramp;
}

bool EarlyStopTracker::observe(double value, std::int64_t epoch) {
    if (!seen_ || value > best_) {
        seen_ = true;
        best_ = value;
        best_epoch_ = epoch;
        streak_ = 0;
        return true;
    }
    ++streak_;
    return false;
}

namespace {

void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

std::int64_t steps_per_epoch_for(std::int64_t n, std::int64_t batch_size) {
    return (n + batch_size - 1) / batch_size;
}

std::vector<double> scores_from_logits(const Tensor& logits, LabelMode mode) {
    const auto z = logits.values();
    std::vector<double> s(z.size());
    if (mode == LabelMode::multiclass) {
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double sum = 0;
        for (std::size_t i = 0; i < z.size(); ++i) sum += (s[i] = std::exp(z[i] - mx));
        for (auto& v : s) v /= sum;
    } else {
        for (std::size_t i = 0; i < z.size(); ++i) s[i] = 1.0 / (1.0 + std::exp(-z[i]));
    }
    return s;
}

}  // namespace

EpochStats train_epoch(EIModel& model, const Dataset& data, const ModalityPrior& prior,
                       SgdOptimizer& opt, const TrainConfig& cfg, std::int64_t epoch,
                       std::int64_t total_steps, Rng& shuffle_rng) {
    if (data.samples.empty()) throw DataError("train_epoch: empty training set");
    const std::int64_t n = data.size();
    const std::int64_t spe = steps_per_epoch_for(n, cfg.batch_size);
    const LossWeights& weights = model.config().weights;

    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    fisher_yates(order, shuffle_rng);

    EpochStats stats;
    stats.first_step = epoch * spe;
    double sum_p = 0, sum_aa = 0, sum_ag = 0, sum_total = 0;

    for (std::int64_t b = 0; b < spe; ++b) {
        const std::int64_t lo = b * cfg.batch_size;
        const std::int64_t hi = std::min(n, lo + cfg.batch_size);
        const double lr = lr_at(stats.first_step + b, total_steps, spe, cfg);

        opt.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        Tensor batch_loss;
        try {
            for (std::int64_t s = lo; s < hi; ++s) {
                const Sample& sample = data.samples[order[static_cast<std::size_t>(s)]];
                auto loss = model.compute_losses(sample.tensors, sample.label, prior, weights);
                sum_p += loss.l_p.item();
                sum_aa += loss.l_aa.item();
                sum_ag += loss.l_ag.item();
                sum_total += loss.l_total.item();
                batch_loss = batch_loss.defined() ? add(batch_loss, loss.l_total) : loss.l_total;
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(hi - lo));
            if (!std::isfinite(batch_loss.item())) {
                throw NumericError("non-finite batch loss");
            }
            tape.backward(batch_loss);
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(stats.first_step + b) + ": " + e.what());
        }
        opt.step(lr);
        stats.lr = lr;
        ++stats.steps;
    }

    const auto nd = static_cast<double>(n);
    stats.l_p = sum_p / nd;
    stats.l_aa = sum_aa / nd;
    stats.l_ag = sum_ag / nd;
    stats.l_total = sum_total / nd;
    return stats;
}

std::vector<std::vector<double>> predict_scores(const EIModel& model, const Dataset& data) {
    std::vector<std::vector<double>> out;
    out.reserve(data.samples.size());
    for (const auto& s : data.samples) {
        out.push_back(scores_from_logits(model.predict(s.tensors), model.config().label_mode));
    }
    return out;
}

EvalReport evaluate_model(const EIModel& model, const Dataset& data) {
    if (data.samples.empty()) throw DataError("evaluate_model: empty dataset");
    std::vector<std::vector<double>> labels;
    labels.reserve(data.samples.size());
    for (const auto& s : data.samples) labels.push_back(s.label);
    return evaluate_scores(predict_scores(model, data), labels, model.config().label_mode);
}

TrainResult train_model(EIModel& model, const Dataset& train, const Dataset& val,
                        const ModalityPrior& prior, const TrainConfig& cfg,
                        const std::function<void(std::int64_t, const EpochStats&, double)>& on_epoch) {
    cfg.validate();
    if (train.samples.empty()) throw DataError("train_model: empty training set");
    if (val.samples.empty()) throw DataError("train_model: empty validation set");

    SgdOptimizer opt(model.trainable_params(), cfg.momentum, cfg.weight_decay);
    const std::int64_t spe = steps_per_epoch_for(train.size(), cfg.batch_size);
    const std::int64_t total_steps = cfg.max_epochs * spe;
    Rng shuffle_rng(Rng::derive(cfg.seed, "shuffle"));
    EarlyStopTracker tracker(cfg.patience);

    TrainResult result;
    std::vector<Tensor> best = opt.snapshot();
    for (std::int64_t e = 0; e < cfg.max_epochs; ++e) {
        EpochStats stats = train_epoch(model, train, prior, opt, cfg, e, total_steps, shuffle_rng);
        const double vmap = evaluate_model(model, val).map.value_or(0.0);
        result.epochs.push_back(stats);
        result.val_map.push_back(vmap);
        if (tracker.observe(vmap, e)) best = opt.snapshot();
        if (on_epoch) on_epoch(e, stats, vmap);
        if (tracker.should_stop()) {
            result.stopped_early = true;
            break;
        }
    }
    opt.restore(best);
    result.best_epoch = tracker.best_epoch();
    result.best_val_map = tracker.best();
    return result;
}

Tensor UnimodalModel::logits(const Tensor& image) const {
    TokenSequence seq = backbone->patchify_embed(image);
    seq = backbone->forward_segment(seq, &adapters, 0, backbone->config().layers);
    Tensor cls = backbone->feature_norm(ViTBackbone::extract_cls(seq));
    return reshape(head.forward(reshape(cls, {1, cls.dim(0)})), {head.w.dim(0)});
}

ParamList UnimodalModel::trainable_params() const {
    ParamList out;
    adapters.collect_params("adapters", out);
    out.push_back({"head.w", head.w});
    out.push_back({"head.bias", head.b});
    return out;
}

UnimodalModel pretrain_unimodal(const ViTBackbone& backbone, const Dataset& data,
                                std::int64_t modality, AdapterMode mode,
                                std::span<const std::int64_t> ranks, const TrainConfig& cfg,
                                LabelMode label_mode, std::uint64_t seed) {
    cfg.validate();
    if (data.samples.empty()) throw DataError("pretrain_unimodal: empty dataset");
    if (modality < 0 || modality >= data.modalities) {
        throw ConfigError("pretrain_unimodal: modality " + std::to_string(modality) +
                          " out of range for " + std::to_string(data.modalities) + " modalities");
    }

    UnimodalModel m;
    m.backbone = &backbone;
    m.label_mode = label_mode;
    m.adapters = init_adapter_set(backbone, mode, ranks, Rng::derive(seed, "adapters"));
    const std::int64_t c = data.classes;
    const std::int64_t d = backbone.config().d_model;
    Rng hr(Rng::derive(seed, "head"));
    {
        const double head_std = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> w(static_cast<std::size_t>(c * d));
        for (auto& x : w) x = hr.trunc_normal(0.0, head_std);
        m.head.w = Tensor::from({c, d}, w, true);
        m.head.b = Tensor::zeros({c}, true);
    }

    SgdOptimizer opt(m.trainable_params(), cfg.momentum, cfg.weight_decay);
    const std::int64_t spe = steps_per_epoch_for(data.size(), cfg.batch_size);
    const std::int64_t total_steps = cfg.max_epochs * spe;
    Rng shuffle_rng(Rng::derive(seed, "shuffle"));

    std::vector<std::size_t> order(data.samples.size());
    for (std::int64_t e = 0; e < cfg.max_epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        fisher_yates(order, shuffle_rng);
        for (std::int64_t b = 0; b < spe; ++b) {
            const std::int64_t lo = b * cfg.batch_size;
            const std::int64_t hi = std::min<std::int64_t>(data.size(), lo + cfg.batch_size);
            const double lr = lr_at(e * spe + b, total_steps, spe, cfg);
            opt.zero_grad();
            Tape tape;
            TapeScope scope(tape);
            Tensor batch_loss;
            try {
                for (std::int64_t s = lo; s < hi; ++s) {
                    const Sample& sample = data.samples[order[static_cast<std::size_t>(s)]];
                    Tensor z = m.logits(sample.tensors[static_cast<std::size_t>(modality)]);
                    Tensor l = cross_entropy(sample.label, z, label_mode);
                    batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
                }
                batch_loss = scale(batch_loss, 1.0 / static_cast<double>(hi - lo));
                if (!std::isfinite(batch_loss.item())) throw NumericError("non-finite batch loss");
                tape.backward(batch_loss);
            } catch (const NumericError& err) {
                throw NumericError("pretrain modality " + std::to_string(modality) + ", epoch " +
                                   std::to_string(e) + ", step " + std::to_string(e * spe + b) +
                                   ": " + err.what());
            }
            opt.step(lr);
        }
    }
    return m;
}

std::vector<std::vector<double>> predict_scores_unimodal(const UnimodalModel& model,
                                                         const Dataset& data,
                                                         std::int64_t modality) {
    std::vector<std::vector<double>> out;
    out.reserve(data.samples.size());
    for (const auto& s : data.samples) {
        Tensor z = model.logits(s.tensors[static_cast<std::size_t>(modality)]);
        out.push_back(scores_from_logits(z, model.label_mode));
    }
    return out;
}

double unimodal_map(const UnimodalModel& model, const Dataset& data, std::int64_t modality) {
    if (data.samples.empty()) throw DataError("unimodal_map: empty dataset");
    std::vector<std::vector<double>> labels;
    labels.reserve(data.samples.size());
    for (const auto& s : data.samples) labels.push_back(s.label);
    return evaluate_scores(predict_scores_unimodal(model, data, modality), labels, model.label_mode)
        .map.value_or(0.0);
}

}  // namespace ei
