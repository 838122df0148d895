#include "ei/model.hpp"

#include <algorithm>
#include <cmath>

#include "ei/errors.hpp"

namespace ei {

std::string_view label_mode_to_string(LabelMode mode) {
    return mode == LabelMode::multiclass ? "multiclass" : "multilabel";
}

LabelMode label_mode_from_string(std::string_view s) {
    if (s == "multiclass") return LabelMode::multiclass;
    if (s == "multilabel") return LabelMode::multilabel;
    throw ConfigError("unknown label mode '" + std::string(s) + "'");
}

ModalityPrior prior_from_scores(std::vector<double> scores) {
    if (scores.empty()) throw ConfigError("modality prior needs at least one score");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    ModalityPrior prior;
    prior.pi.assign(scores.size(), 0.0);
    prior.pi[best] = 1.0;
    prior.source_scores = std::move(scores);
    return prior;
}

Tensor IntAdapter::forward(const Tensor& x) const {
    return linear_t(gelu(linear_t(x, w1, &b1)), w2, &b2);
}

Tensor LinearHead::forward(const Tensor& x) const { return linear_t(x, w, &b); }

namespace {

Tensor trunc_normal_tensor(std::vector<std::int64_t> shape, double std, Rng& rng, bool trainable) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.trunc_normal(0.0, std);
    return Tensor::from(std::move(shape), v, trainable);
}

}  // namespace

EIModel::EIModel(const ViTConfig& backbone_cfg, const EIConfig& cfg)
    : backbone_cfg_(backbone_cfg), cfg_(cfg), backbone_(backbone_cfg) {
    const std::int64_t m = cfg_.modalities;
    const std::int64_t c = cfg_.classes;
    const std::int64_t d = backbone_cfg_.d_model;
    const std::int64_t layers = backbone_cfg_.layers;

    if (m < 2) throw ConfigError("EI needs at least 2 modalities, got " + std::to_string(m));
    if (c < 2) throw ConfigError("EI needs at least 2 classes, got " + std::to_string(c));
    if (cfg_.acquire_layer < 0) cfg_.acquire_layer = layers;
    if (cfg_.acquire_layer < 1 || cfg_.acquire_layer > layers) {
        throw ConfigError("acquire_layer " + std::to_string(cfg_.acquire_layer) + " outside 1.." +
                          std::to_string(layers));
    }
    if (cfg_.insert_layer < 0 || cfg_.insert_layer > layers) {
        throw ConfigError("insert_layer " + std::to_string(cfg_.insert_layer) + " outside 0.." +
                          std::to_string(layers));
    }
    if (cfg_.weights.lambda1 < 0 || cfg_.weights.lambda2 < 0) {
        throw ConfigError("loss weights must be nonnegative");
    }
    if (cfg_.ranks.empty()) cfg_.ranks = default_ranks(cfg_.mode);

    // Every component draws from its own stream: the set of tensors a
    // given component produces is independent of the adapter mode (the
    // mode only changes what the adapter streams emit).
    for (std::int64_t i = 0; i < m; ++i) {
        const std::string tag = std::to_string(i);
        aux_adapters_.push_back(init_adapter_set(backbone_, cfg_.mode, cfg_.ranks,
                                                 Rng::derive(cfg_.seed, "aux" + tag)));
        primary_adapters_.push_back(init_adapter_set(backbone_, cfg_.mode, cfg_.ranks,
                                                     Rng::derive(cfg_.seed, "primary" + tag)));

        // Heads and the token adapter sit on normalized unit-scale
        // features, so they get the usual 1/sqrt(fan_in) scale instead of
        // the backbone's 0.02.
        const double glue_std = 1.0 / std::sqrt(static_cast<double>(d));
        Rng ri1(Rng::derive(cfg_.seed, "int" + tag + ".w1"));
        Rng ri2(Rng::derive(cfg_.seed, "int" + tag + ".w2"));
        IntAdapter ia;
        ia.w1 = trunc_normal_tensor({d, d}, glue_std, ri1, true);
        ia.b1 = Tensor::zeros({d}, true);
        ia.w2 = trunc_normal_tensor({d, d}, glue_std, ri2, true);
        ia.b2 = Tensor::zeros({d}, true);
        int_adapters_.push_back(std::move(ia));

        Rng rah(Rng::derive(cfg_.seed, "aux_head" + tag));
        LinearHead ah;
        ah.w = trunc_normal_tensor({c, d}, glue_std, rah, true);
        ah.b = Tensor::zeros({c}, true);
        aux_heads_.push_back(std::move(ah));

        Rng rph(Rng::derive(cfg_.seed, "primary_head" + tag));
        LinearHead ph;
        ph.w = trunc_normal_tensor({c, d}, glue_std, rph, true);
        ph.b = Tensor::zeros({c}, true);
        primary_heads_.push_back(std::move(ph));
    }

    gating_w_ = Tensor::zeros({m, m * d}, true);
    gating_b_ = Tensor::zeros({m}, true);
}

std::vector<EIModel::AuxForward> EIModel::aux_forward(std::span<const Tensor> x) const {
    if (static_cast<std::int64_t>(x.size()) != cfg_.modalities) {
        throw ShapeError("aux_forward: expected " + std::to_string(cfg_.modalities) +
                         " modality images, got " + std::to_string(x.size()));
    }
    std::vector<AuxForward> out;
    out.reserve(x.size());
    for (std::int64_t i = 0; i < cfg_.modalities; ++i) {
        const AdapterSet* set = &aux_adapters_[static_cast<std::size_t>(i)];
        TokenSequence seq = backbone_.patchify_embed(x[static_cast<std::size_t>(i)]);
        TokenSequence tapped = backbone_.forward_segment(seq, set, 0, cfg_.acquire_layer);
        TokenSequence full =
            backbone_.forward_segment(tapped, set, cfg_.acquire_layer, backbone_cfg_.layers);
        out.push_back({backbone_.feature_norm(ViTBackbone::extract_cls(tapped)),
                       backbone_.feature_norm(ViTBackbone::extract_cls(full))});
    }
    return out;
}

Tensor EIModel::generate_int_tokens(std::span<const AuxForward> aux, std::int64_t target) const {
    if (target < 0 || target >= cfg_.modalities) {
        throw ConfigError("target modality " + std::to_string(target) + " outside 0.." +
                          std::to_string(cfg_.modalities - 1));
    }
    const IntAdapter& adapter = int_adapters_[static_cast<std::size_t>(target)];
    std::vector<Tensor> rows;
    for (std::int64_t r = 0; r < cfg_.modalities; ++r) {
        if (r == target) continue;
        const Tensor& cls = aux[static_cast<std::size_t>(r)].cls_acquire;
        rows.push_back(adapter.forward(reshape(cls, {1, cls.dim(0)})));
    }
    return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

Tensor EIModel::primary_features(std::span<const Tensor> x, std::int64_t target,
                                 const Tensor& int_tokens) const {
    const AdapterSet* set = &primary_adapters_[static_cast<std::size_t>(target)];
    TokenSequence seq = backbone_.patchify_embed(x[static_cast<std::size_t>(target)]);
    seq = backbone_.forward_segment(seq, set, 0, cfg_.insert_layer);
    seq = ViTBackbone::append_tokens(seq, int_tokens);
    seq = backbone_.forward_segment(seq, set, cfg_.insert_layer, backbone_cfg_.layers);
    return backbone_.feature_norm(ViTBackbone::extract_cls(seq));
}

EIModel::FusionResult EIModel::late_fusion(std::span<const Tensor> cls_list) const {
    const std::int64_t m = cfg_.modalities;
    const std::int64_t c = cfg_.classes;
    const std::int64_t d = backbone_cfg_.d_model;
    if (static_cast<std::int64_t>(cls_list.size()) != m) {
        throw ShapeError("late_fusion: expected " + std::to_string(m) + " features, got " +
                         std::to_string(cls_list.size()));
    }

    FusionResult out;
    std::vector<Tensor> logit_rows;
    std::vector<Tensor> cls_rows;
    for (std::int64_t t = 0; t < m; ++t) {
        Tensor cls_row = reshape(cls_list[static_cast<std::size_t>(t)], {1, d});
        cls_rows.push_back(cls_row);
        Tensor yt = primary_heads_[static_cast<std::size_t>(t)].forward(cls_row);  // [1 x C]
        logit_rows.push_back(yt);
        out.y_t.push_back(reshape(yt, {c}));
    }
    Tensor gate_in = reshape(concat_rows(cls_rows), {1, m * d});
    Tensor gate_logits = linear_t(gate_in, gating_w_, &gating_b_);  // [1 x M]
    Tensor alpha = softmax(gate_logits, 1);
    Tensor stacked = concat_rows(logit_rows);            // [M x C]
    out.y_hat = reshape(affine(alpha, stacked), {c});    // convex mix of per-modality logits
    out.alpha = reshape(alpha, {m});
    out.gate_logits = reshape(gate_logits, {m});
    return out;
}

EIModel::LossResult EIModel::compute_losses(std::span<const Tensor> x, std::span<const double> y,
                                            const ModalityPrior& prior,
                                            const LossWeights& weights) const {
    const std::int64_t m = cfg_.modalities;
    if (static_cast<std::int64_t>(prior.pi.size()) != m) {
        throw ShapeError("modality prior length " + std::to_string(prior.pi.size()) + " vs " +
                         std::to_string(m) + " modalities");
    }

    std::vector<AuxForward> aux = aux_forward(x);
    std::vector<Tensor> cls;
    cls.reserve(static_cast<std::size_t>(m));
    for (std::int64_t t = 0; t < m; ++t) {
        Tensor int_tokens = generate_int_tokens(aux, t);
        cls.push_back(primary_features(x, t, int_tokens));
    }

    LossResult res;
    res.fusion = late_fusion(cls);

    Tensor l_p = cross_entropy(y, res.fusion.y_hat, cfg_.label_mode);
    for (std::int64_t t = 0; t < m; ++t) {
        l_p = add(l_p, cross_entropy(y, res.fusion.y_t[static_cast<std::size_t>(t)], cfg_.label_mode));
    }

    Tensor l_aa;
    for (std::int64_t i = 0; i < m; ++i) {
        const Tensor& cf = aux[static_cast<std::size_t>(i)].cls_full;
        Tensor ya = reshape(aux_heads_[static_cast<std::size_t>(i)].forward(reshape(cf, {1, cf.dim(0)})),
                            {cfg_.classes});
        Tensor term = cross_entropy(y, ya, cfg_.label_mode);
        l_aa = l_aa.defined() ? add(l_aa, term) : term;
    }

    Tensor l_ag = cross_entropy(prior.pi, res.fusion.gate_logits, LabelMode::multiclass);

    res.l_p = l_p;
    res.l_aa = l_aa;
    res.l_ag = l_ag;
    res.l_total = add(l_p, add(scale(l_aa, weights.lambda1), scale(l_ag, weights.lambda2)));
    return res;
}

Tensor EIModel::predict(std::span<const Tensor> x) const {
    std::vector<AuxForward> aux = aux_forward(x);
    std::vector<Tensor> cls;
    for (std::int64_t t = 0; t < cfg_.modalities; ++t) {
        cls.push_back(primary_features(x, t, generate_int_tokens(aux, t)));
    }
    return late_fusion(cls).y_hat;
}

ParamList EIModel::trainable_params() const {
    ParamList out;
    for (std::int64_t i = 0; i < cfg_.modalities; ++i) {
        const std::string tag = std::to_string(i);
        aux_adapters_[static_cast<std::size_t>(i)].collect_params("aux" + tag, out);
        primary_adapters_[static_cast<std::size_t>(i)].collect_params("primary" + tag, out);
    }
    for (std::int64_t i = 0; i < cfg_.modalities; ++i) {
        const std::string tag = std::to_string(i);
        const IntAdapter& ia = int_adapters_[static_cast<std::size_t>(i)];
        out.push_back({"int" + tag + ".w1", ia.w1});
        out.push_back({"int" + tag + ".bias1", ia.b1});
        out.push_back({"int" + tag + ".w2", ia.w2});
        out.push_back({"int" + tag + ".bias2", ia.b2});
        out.push_back({"aux_head" + tag + ".w", aux_heads_[static_cast<std::size_t>(i)].w});
        out.push_back({"aux_head" + tag + ".bias", aux_heads_[static_cast<std::size_t>(i)].b});
        out.push_back({"primary_head" + tag + ".w", primary_heads_[static_cast<std::size_t>(i)].w});
        out.push_back({"primary_head" + tag + ".bias", primary_heads_[static_cast<std::size_t>(i)].b});
    }
    out.push_back({"gating.w", gating_w_});
    out.push_back({"gating.bias", gating_b_});
    return out;
}

ParamList EIModel::all_params() const {
    ParamList out = trainable_params();
    backbone_.collect_params("backbone", out);
    return out;
}

}  // namespace ei
