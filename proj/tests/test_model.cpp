#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ei/errors.hpp"
#include "ei/model.hpp"
#include "ei/tape.hpp"

using namespace ei;

namespace {

ViTConfig micro_vit(std::uint64_t seed = 3) {
    ViTConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.channels = 1;
    cfg.d_model = 16;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.mlp_ratio = 2;
    cfg.seed = seed;
    return cfg;
}

EIConfig micro_ei(AdapterMode mode = AdapterMode::mor, std::uint64_t seed = 1) {
    EIConfig cfg;
    cfg.mode = mode;
    cfg.seed = seed;
    return cfg;
}

std::vector<Tensor> random_images(const ViTConfig& vc, std::int64_t m, Rng& rng) {
    std::vector<Tensor> out;
    for (std::int64_t i = 0; i < m; ++i) {
        Tensor img = Tensor::zeros({vc.image_size, vc.image_size});
        for (auto& v : img.raw_values()) v = rng.normal(0.0, 1.0);
        out.push_back(std::move(img));
    }
    return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    auto av = a.values();
    auto bv = b.values();
    if (av.size() != bv.size()) return false;
    for (std::size_t i = 0; i < av.size(); ++i)
        if (av[i] != bv[i]) return false;
    return true;
}

const Tensor& find_param(const ParamList& params, const std::string& name) {
    for (const auto& p : params)
        if (p.name == name) return p.tensor;
    throw std::runtime_error("missing param " + name);
}

}  // namespace

TEST_CASE("label mode names roundtrip") {
    CHECK(label_mode_to_string(LabelMode::multiclass) == "multiclass");
    CHECK(label_mode_to_string(LabelMode::multilabel) == "multilabel");
    CHECK(label_mode_from_string("multiclass") == LabelMode::multiclass);
    CHECK(label_mode_from_string("multilabel") == LabelMode::multilabel);
    CHECK_THROWS_AS(static_cast<void>(label_mode_from_string("binary")), ConfigError);
}

TEST_CASE("gate prior is one-hot on the best unimodal score") {
    ModalityPrior p = prior_from_scores({0.2, 0.7, 0.1});
    CHECK(p.pi == std::vector<double>{0.0, 1.0, 0.0});
    CHECK(p.source_scores == std::vector<double>{0.2, 0.7, 0.1});

    // Ties resolve to the lowest index.
    ModalityPrior tie = prior_from_scores({0.5, 0.5});
    CHECK(tie.pi == std::vector<double>{1.0, 0.0});

    CHECK_THROWS_AS(static_cast<void>(prior_from_scores({})), ConfigError);
}

TEST_CASE("model construction validates its configuration") {
    const ViTConfig vc = micro_vit();

    EIConfig bad = micro_ei();
    bad.modalities = 1;
    CHECK_THROWS_AS(EIModel(vc, bad), ConfigError);

    bad = micro_ei();
    bad.classes = 1;
    CHECK_THROWS_AS(EIModel(vc, bad), ConfigError);

    bad = micro_ei();
    bad.acquire_layer = 0;  // tap must sit after at least one block
    CHECK_THROWS_AS(EIModel(vc, bad), ConfigError);

    bad = micro_ei();
    bad.acquire_layer = vc.layers + 1;
    CHECK_THROWS_AS(EIModel(vc, bad), ConfigError);

    bad = micro_ei();
    bad.insert_layer = vc.layers + 1;
    CHECK_THROWS_AS(EIModel(vc, bad), ConfigError);

    bad = micro_ei();
    bad.insert_layer = -1;
    CHECK_THROWS_AS(EIModel(vc, bad), ConfigError);

    bad = micro_ei();
    bad.weights.lambda1 = -0.5;
    CHECK_THROWS_AS(EIModel(vc, bad), ConfigError);

    // Unset acquire layer resolves to the final one; empty ranks pick the
    // mode's defaults.
    EIModel m(vc, micro_ei());
    CHECK(m.config().acquire_layer == vc.layers);
    CHECK(m.config().ranks == default_ranks(AdapterMode::mor));
}

TEST_CASE("fresh adapters leave the fused prediction at the frozen baseline") {
    const ViTConfig vc = micro_vit();
    EIModel frozen(vc, micro_ei(AdapterMode::frozen));
    Rng rng(99);
    for (AdapterMode mode : {AdapterMode::lora, AdapterMode::lora_moe, AdapterMode::mor}) {
        EIModel m(vc, micro_ei(mode));
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<Tensor> x = random_images(vc, 2, rng);
            CHECK(bit_equal(m.predict(x), frozen.predict(x)));
        }
    }
}

TEST_CASE("aux tap at the final layer coincides with the full-depth feature") {
    const ViTConfig vc = micro_vit();
    EIModel m(vc, micro_ei());  // acquire resolves to L
    Rng rng(7);
    std::vector<Tensor> x = random_images(vc, 2, rng);
    auto aux = m.aux_forward(x);
    REQUIRE(aux.size() == 2);
    for (const auto& a : aux) {
        CHECK(a.cls_acquire.ndim() == 1);
        CHECK(a.cls_acquire.dim(0) == vc.d_model);
        CHECK(bit_equal(a.cls_acquire, a.cls_full));
    }

    std::vector<Tensor> three = random_images(vc, 3, rng);
    CHECK_THROWS_AS(static_cast<void>(m.aux_forward(three)), ShapeError);
}

TEST_CASE("intervention rows follow ascending reference order") {
    const ViTConfig vc = micro_vit();
    EIConfig ec = micro_ei();
    ec.modalities = 3;
    ec.classes = 2;
    EIModel m(vc, ec);
    Rng rng(11);
    std::vector<Tensor> x = random_images(vc, 3, rng);
    auto aux = m.aux_forward(x);

    Tensor rows = m.generate_int_tokens(aux, 1);
    REQUIRE(rows.ndim() == 2);
    CHECK(rows.dim(0) == 2);
    CHECK(rows.dim(1) == vc.d_model);

    // Row r is the target's adapter applied to reference r's tapped CLS.
    const IntAdapter& ia = m.int_adapter(1);
    Tensor want0 = ia.forward(reshape(aux[0].cls_acquire, {1, vc.d_model}));
    Tensor want2 = ia.forward(reshape(aux[2].cls_acquire, {1, vc.d_model}));
    auto rv = rows.values();
    auto w0 = want0.values();
    auto w2 = want2.values();
    for (std::int64_t j = 0; j < vc.d_model; ++j) {
        CHECK(rv[static_cast<std::size_t>(j)] == w0[static_cast<std::size_t>(j)]);
        CHECK(rv[static_cast<std::size_t>(vc.d_model + j)] == w2[static_cast<std::size_t>(j)]);
    }

    CHECK_THROWS_AS(static_cast<void>(m.generate_int_tokens(aux, 3)), ConfigError);
    CHECK_THROWS_AS(static_cast<void>(m.generate_int_tokens(aux, -1)), ConfigError);

    // Two modalities produce exactly one row.
    EIModel m2(vc, micro_ei());
    std::vector<Tensor> x2 = random_images(vc, 2, rng);
    Tensor one = m2.generate_int_tokens(m2.aux_forward(x2), 0);
    CHECK(one.dim(0) == 1);
}

TEST_CASE("insertion after the last block cannot alter the feature") {
    const ViTConfig vc = micro_vit();
    EIConfig ec = micro_ei();
    ec.insert_layer = vc.layers;
    EIModel m(vc, ec);

    // Randomize every trainable tensor so the equality is not an artifact
    // of the zero initialization.
    Rng pr(4242);
    ParamList params = m.trainable_params();
    for (auto& p : params)
        for (auto& v : p.tensor.raw_values()) v = pr.normal(0.0, 0.2);

    Rng rng(13);
    std::vector<Tensor> x = random_images(vc, 2, rng);
    auto aux = m.aux_forward(x);
    for (std::int64_t t = 0; t < 2; ++t) {
        Tensor with_int = m.primary_features(x, t, m.generate_int_tokens(aux, t));
        TokenSequence seq = m.backbone().patchify_embed(x[static_cast<std::size_t>(t)]);
        seq = m.backbone().forward_segment(seq, &m.primary_adapters(t), 0, vc.layers);
        Tensor plain = m.backbone().feature_norm(ViTBackbone::extract_cls(seq));
        CHECK(bit_equal(with_int, plain));
    }
}

TEST_CASE("late fusion mixes per-modality logits convexly") {
    const ViTConfig vc = micro_vit();
    EIModel m(vc, micro_ei());
    Rng rng(17);

    std::vector<Tensor> feats;
    for (int t = 0; t < 2; ++t) {
        Tensor f = Tensor::zeros({vc.d_model});
        for (auto& v : f.raw_values()) v = rng.normal(0.0, 1.0);
        feats.push_back(std::move(f));
    }

    auto fusion = m.late_fusion(feats);
    REQUIRE(fusion.alpha.numel() == 2);
    REQUIRE(fusion.y_hat.numel() == 2);
    REQUIRE(fusion.y_t.size() == 2);

    // Zero-initialized gating weights mean exactly uniform mixing.
    auto alpha = fusion.alpha.values();
    CHECK(alpha[0] == 0.5);
    CHECK(alpha[1] == 0.5);
    auto gl = fusion.gate_logits.values();
    CHECK(gl[0] == 0.0);
    CHECK(gl[1] == 0.0);

    // y_hat is the alpha-weighted sum of the per-modality logits.
    auto y0 = fusion.y_t[0].values();
    auto y1 = fusion.y_t[1].values();
    auto yh = fusion.y_hat.values();
    for (std::size_t c = 0; c < 2; ++c)
        CHECK(yh[c] == doctest::Approx(alpha[0] * y0[c] + alpha[1] * y1[c]).epsilon(1e-12));

    // Perturbed gating weights keep the mix convex.
    for (auto& v : m.gating_w().raw_values()) v = rng.normal(0.0, 0.3);
    auto fusion2 = m.late_fusion(feats);
    auto a2 = fusion2.alpha.values();
    CHECK(a2[0] + a2[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a2[0] > 0.0);
    CHECK(a2[1] > 0.0);
    CHECK(a2[0] != 0.5);

    std::vector<Tensor> wrong{feats[0]};
    CHECK_THROWS_AS(static_cast<void>(m.late_fusion(wrong)), ShapeError);
}

TEST_CASE("loss composition is the pinned weighted sum") {
    const ViTConfig vc = micro_vit();
    Rng rng(23);
    const ModalityPrior prior = prior_from_scores({1.0, 0.0});
    const std::vector<double> y{0.0, 1.0};

    for (Precision p : {Precision::f32, Precision::f64}) {
        PrecisionScope scope(p);
        EIModel m(vc, micro_ei());
        std::vector<Tensor> x = random_images(vc, 2, rng);

        LossWeights w;
        w.lambda1 = 0.3;
        w.lambda2 = 0.1;
        auto res = m.compute_losses(x, y, prior, w);
        const double recomposed =
            add(res.l_p, add(scale(res.l_aa, w.lambda1), scale(res.l_ag, w.lambda2))).item();
        CHECK(res.l_total.item() == recomposed);

        // Zero weights collapse the total onto the primary term exactly.
        LossWeights off;
        off.lambda1 = 0.0;
        off.lambda2 = 0.0;
        auto res0 = m.compute_losses(x, y, prior, off);
        CHECK(res0.l_total.item() == res0.l_p.item());
    }
}

TEST_CASE("loss terms recompute from the fusion outputs") {
    const ViTConfig vc = micro_vit();
    EIModel m(vc, micro_ei());
    Rng rng(29);
    std::vector<Tensor> x = random_images(vc, 2, rng);
    const ModalityPrior prior = prior_from_scores({0.0, 1.0});
    const std::vector<double> y{1.0, 0.0};

    auto res = m.compute_losses(x, y, prior, m.config().weights);

    // Primary term: fused CE plus each per-modality CE, summed in modality
    // order.
    Tensor lp = cross_entropy(y, res.fusion.y_hat, LabelMode::multiclass);
    for (const auto& yt : res.fusion.y_t) lp = add(lp, cross_entropy(y, yt, LabelMode::multiclass));
    CHECK(res.l_p.item() == lp.item());

    // Gate term supervises the gate logits with the one-hot prior.
    Tensor lag = cross_entropy(prior.pi, res.fusion.gate_logits, LabelMode::multiclass);
    CHECK(res.l_ag.item() == lag.item());

    ModalityPrior short_prior;
    short_prior.pi = {1.0};
    CHECK_THROWS_AS(static_cast<void>(m.compute_losses(x, y, short_prior, m.config().weights)),
                    ShapeError);
}

TEST_CASE("gradients reach every component family") {
    const ViTConfig vc = micro_vit();
    PrecisionScope scope(Precision::f64);
    EIModel m(vc, micro_ei());
    Rng rng(31);
    std::vector<Tensor> x = random_images(vc, 2, rng);
    const ModalityPrior prior = prior_from_scores({1.0, 0.0});
    const std::vector<double> y{0.0, 1.0};

    // lambda1 = lambda2 = 0: the auxiliary-head loss is switched off, yet
    // the INT path, adapters, and gating still feed the primary term.
    LossWeights w;
    w.lambda1 = 0.0;
    w.lambda2 = 0.0;

    Tape tape;
    TapeScope ts(tape);
    auto res = m.compute_losses(x, y, prior, w);
    tape.backward(res.l_total);

    const ParamList params = m.trainable_params();
    auto grad_norm = [&](const std::string& name) {
        const Tensor& t = find_param(params, name);
        if (!t.has_grad()) return 0.0;
        double s = 0;
        for (double g : t.grad()) s += std::fabs(g);
        return s;
    };

    CHECK(grad_norm("int0.w1") > 0.0);
    CHECK(grad_norm("int1.w2") > 0.0);
    CHECK(grad_norm("gating.w") > 0.0);
    CHECK(grad_norm("primary_head0.w") > 0.0);
    // B blocks start at zero but sit directly on the gradient path.
    CHECK(grad_norm("primary0.block0.qkv.B0") > 0.0);
    CHECK(grad_norm("aux0.block0.qkv.B0") > 0.0);
    // The auxiliary heads only feed the disabled term.
    CHECK(grad_norm("aux_head0.w") == 0.0);
    CHECK(grad_norm("aux_head1.w") == 0.0);
}

TEST_CASE("trainable parameters are complete, named, and distinct") {
    const ViTConfig vc = micro_vit();
    EIConfig ec = micro_ei();
    EIModel m(vc, ec);
    const ParamList params = m.trainable_params();

    std::set<std::string> names;
    for (const auto& p : params) {
        CHECK(p.tensor.requires_grad());
        CHECK(names.insert(p.name).second);
    }

    // Two adapter sets per modality, each L blocks x 4 sites, plus the
    // glue: 4 INT tensors, 4 head tensors per modality, and the gate pair.
    const std::int64_t per_adapter =
        static_cast<std::int64_t>(default_ranks(AdapterMode::mor).size()) * 2 + 1;
    const std::int64_t adapter_tensors = 2 * 2 * vc.layers * 4 * per_adapter;
    CHECK(static_cast<std::int64_t>(params.size()) == adapter_tensors + 2 * 8 + 2);

    CHECK(names.count("aux0.block0.qkv.A0") == 1);
    CHECK(names.count("primary1.block1.fc2.router") == 1);
    CHECK(names.count("int1.bias2") == 1);
    CHECK(names.count("gating.bias") == 1);

    // The backbone appears only in the full list, and stays frozen.
    const ParamList all = m.all_params();
    CHECK(all.size() > params.size());
    bool saw_backbone = false;
    for (const auto& p : all) {
        if (p.name.rfind("backbone.", 0) == 0) {
            saw_backbone = true;
            CHECK_FALSE(p.tensor.requires_grad());
        }
    }
    CHECK(saw_backbone);
}

TEST_CASE("prediction is deterministic and feature scale is normalized") {
    const ViTConfig vc = micro_vit();
    EIModel m(vc, micro_ei());
    Rng rng(37);
    std::vector<Tensor> x = random_images(vc, 2, rng);

    Tensor a = m.predict(x);
    Tensor b = m.predict(x);
    REQUIRE(a.ndim() == 1);
    CHECK(a.dim(0) == 2);
    CHECK(bit_equal(a, b));

    // Head inputs are layer-normalized: per-feature mean 0, variance near 1.
    auto aux = m.aux_forward(x);
    Tensor f = m.primary_features(x, 0, m.generate_int_tokens(aux, 0));
    auto fv = f.values();
    double mean = 0, var = 0;
    for (double v : fv) mean += v;
    mean /= static_cast<double>(fv.size());
    for (double v : fv) var += (v - mean) * (v - mean);
    var /= static_cast<double>(fv.size());
    CHECK(std::fabs(mean) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}
