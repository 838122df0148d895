#include <doctest.h>

#include <cmath>
#include <vector>

#include "ei/ops.hpp"
#include "ei/tape.hpp"
#include "ei/vit.hpp"

using namespace ei;

namespace {

ViTConfig small_cfg() {
    ViTConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 8;  // 4 patches, 2x2 grid
    cfg.channels = 1;
    cfg.d_model = 16;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.mlp_ratio = 2;
    cfg.seed = 3;
    return cfg;
}

Tensor rand_image(const ViTConfig& cfg, Rng& r) {
    Tensor img = Tensor::zeros({cfg.image_size, cfg.image_size});
    for (auto& v : img.raw_values()) v = r.normal();
    return img;
}

bool all_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        if (a.value_at(i) != b.value_at(i)) return false;
    return true;
}

}  // namespace

TEST_CASE("config validation rejects bad geometry") {
    ViTConfig cfg = small_cfg();
    CHECK_NOTHROW(cfg.validate());

    cfg.image_size = 15;  // 15 / 8 has a remainder
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = small_cfg();
    cfg.d_model = 30;  // not divisible by heads
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = small_cfg();
    cfg.layers = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = small_cfg();
    CHECK(cfg.num_patches() == 4);
    CHECK(cfg.patch_dim() == 64);
    CHECK(cfg.head_dim() == 4);
}

TEST_CASE("initialization is seeded and frozen") {
    ViTBackbone a(small_cfg()), b(small_cfg());
    ParamList pa, pb;
    a.collect_params("vit", pa);
    b.collect_params("vit", pb);
    REQUIRE(pa.size() == pb.size());
    CHECK(pa.size() == 4 + 2 * 12);  // embed/cls/pos + 12 tensors per block

    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(all_equal(pa[i].tensor, pb[i].tensor));
        CHECK_FALSE(pa[i].tensor.requires_grad());
    }

    ViTConfig other = small_cfg();
    other.seed = 4;
    ViTBackbone c(other);
    CHECK(a.param_hash() != c.param_hash());
    CHECK(a.param_hash() == b.param_hash());

    // Weights are truncated normals (std 0.02), biases zero, LN affine at identity.
    for (double v : a.patch_w.values()) CHECK(std::abs(v) <= 0.04 + 1e-12);
    for (double v : a.patch_b.values()) CHECK(v == 0.0);
    for (double v : a.cls_token.values()) CHECK(std::abs(v) <= 0.04 + 1e-12);
    for (double v : a.block(0).ln1_gamma.values()) CHECK(v == 1.0);
    for (double v : a.block(1).ln2_beta.values()) CHECK(v == 0.0);
    for (double v : a.block(0).qkv_b.values()) CHECK(v == 0.0);
}

TEST_CASE("param hash tracks the values") {
    ViTBackbone vit(small_cfg());
    const std::uint64_t before = vit.param_hash();
    vit.patch_w.raw_values()[0] += 1e-9;
    CHECK(vit.param_hash() != before);
    vit.patch_w.raw_values()[0] -= 1e-9;
    CHECK(vit.param_hash() == before);
}

TEST_CASE("patchify produces CLS plus positioned patch tokens") {
    PrecisionScope p(Precision::f64);
    ViTConfig cfg = small_cfg();
    ViTBackbone vit(cfg);

    Tensor zero_img = Tensor::zeros({16, 16});
    TokenSequence seq = vit.patchify_embed(zero_img);
    REQUIRE(seq.tokens.shape() == std::vector<std::int64_t>{5, 16});
    CHECK(seq.extra == 0);

    // Zero image: patch rows collapse to bias + position.
    for (std::int64_t j = 0; j < 16; ++j) {
        CHECK(seq.tokens.value_at(j) ==
              doctest::Approx(vit.cls_token.value_at(j) + vit.pos_emb.value_at(j)).epsilon(1e-15));
        for (std::int64_t k = 1; k < 5; ++k) {
            CHECK(seq.tokens.value_at(k * 16 + j) ==
                  doctest::Approx(vit.patch_b.value_at(j) + vit.pos_emb.value_at(k * 16 + j))
                      .epsilon(1e-15));
        }
    }

    // Pixels land in the patch that covers them: lighting up pixel (0, 15)
    // changes patch 1 (top right) only.
    Tensor img = Tensor::zeros({16, 16});
    img.raw_values()[15] = 1.0;
    TokenSequence lit = vit.patchify_embed(img);
    bool patch1_changed = false;
    for (std::int64_t j = 0; j < 16; ++j) {
        if (lit.tokens.value_at(2 * 16 + j) != seq.tokens.value_at(2 * 16 + j)) patch1_changed = true;
        CHECK(lit.tokens.value_at(1 * 16 + j) == seq.tokens.value_at(1 * 16 + j));
        CHECK(lit.tokens.value_at(3 * 16 + j) == seq.tokens.value_at(3 * 16 + j));
        CHECK(lit.tokens.value_at(4 * 16 + j) == seq.tokens.value_at(4 * 16 + j));
    }
    CHECK(patch1_changed);

    CHECK_THROWS_AS((void)vit.patchify_embed(Tensor::zeros({15, 16})), ShapeError);
    CHECK_THROWS_AS((void)vit.patchify_embed(Tensor::zeros({2, 16, 16})), ShapeError);
}

TEST_CASE("channel-first images patchify consistently") {
    PrecisionScope p(Precision::f64);
    ViTConfig cfg = small_cfg();
    ViTBackbone vit(cfg);
    Rng r(9);
    Tensor img = rand_image(cfg, r);
    Tensor img3 = reshape(img, {1, 16, 16});
    CHECK(all_equal(vit.patchify_embed(img).tokens, vit.patchify_embed(img3).tokens));
}

TEST_CASE("segments compose and empty segments are the identity") {
    ViTConfig cfg = small_cfg();
    ViTBackbone vit(cfg);
    Rng r(10);
    TokenSequence seq = vit.patchify_embed(rand_image(cfg, r));

    TokenSequence same = vit.forward_segment(seq, nullptr, 1, 1);
    CHECK(all_equal(same.tokens, seq.tokens));

    TokenSequence full = vit.forward_segment(seq, nullptr, 0, 2);
    TokenSequence half = vit.forward_segment(seq, nullptr, 0, 1);
    TokenSequence rest = vit.forward_segment(half, nullptr, 1, 2);
    CHECK(all_equal(full.tokens, rest.tokens));

    CHECK_THROWS_AS((void)vit.forward_segment(seq, nullptr, 1, 0), ShapeError);
    CHECK_THROWS_AS((void)vit.forward_segment(seq, nullptr, 0, 3), ShapeError);

    // Deterministic forward.
    TokenSequence again = vit.forward_segment(seq, nullptr, 0, 2);
    CHECK(all_equal(full.tokens, again.tokens));
}

TEST_CASE("appended tokens ride along without positional offsets") {
    PrecisionScope p(Precision::f64);
    ViTConfig cfg = small_cfg();
    ViTBackbone vit(cfg);
    Rng r(11);
    TokenSequence seq = vit.patchify_embed(rand_image(cfg, r));

    Tensor extra = Tensor::zeros({2, 16});
    for (auto& v : extra.raw_values()) v = r.normal();
    TokenSequence app = ViTBackbone::append_tokens(seq, extra);
    REQUIRE(app.tokens.dim(0) == 7);
    CHECK(app.extra == 2);
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 16; ++j)
            CHECK(app.tokens.value_at((5 + i) * 16 + j) == extra.value_at(i * 16 + j));

    Tensor cls = ViTBackbone::extract_cls(app);
    REQUIRE(cls.shape() == std::vector<std::int64_t>{16});
    for (std::int64_t j = 0; j < 16; ++j) CHECK(cls.value_at(j) == app.tokens.value_at(j));

    // Extra rows flow through attention like any token, so the CLS state
    // must react to them.
    TokenSequence out_plain = vit.forward_segment(seq, nullptr, 0, 2);
    TokenSequence out_app = vit.forward_segment(app, nullptr, 0, 2);
    bool differs = false;
    for (std::int64_t j = 0; j < 16; ++j)
        if (out_plain.tokens.value_at(j) != out_app.tokens.value_at(j)) differs = true;
    CHECK(differs);
}

TEST_CASE("similarity map is cosine against CLS on the patch grid") {
    ViTConfig cfg = small_cfg();
    ViTBackbone vit(cfg);

    Tensor tokens = Tensor::zeros({5, 16});
    auto tv = tokens.raw_values();
    tv[0] = 1.0;                     // CLS = e0
    tv[1 * 16 + 0] = 2.0;            // parallel
    tv[2 * 16 + 0] = -3.0;           // anti-parallel
    tv[3 * 16 + 1] = 5.0;            // orthogonal
    /* patch 4 stays zero */
    TokenSequence seq{tokens, 0};

    Tensor sim = vit.cls_patch_similarity(seq);
    REQUIRE(sim.shape() == std::vector<std::int64_t>{2, 2});
    CHECK(sim.value_at(0) == doctest::Approx(1.0));
    CHECK(sim.value_at(1) == doctest::Approx(-1.0));
    CHECK(sim.value_at(2) == doctest::Approx(0.0));
    CHECK(sim.value_at(3) == 0.0);

    CHECK_THROWS_AS((void)vit.cls_patch_similarity(TokenSequence{Tensor::zeros({3, 16}), 0}),
                    ShapeError);
}

TEST_CASE("forward records nothing without a tape and stays grad-free with one") {
    ViTConfig cfg = small_cfg();
    ViTBackbone vit(cfg);
    Rng r(13);
    TokenSequence seq = vit.patchify_embed(rand_image(cfg, r));

    Tape tape;
    {
        TapeScope scope(tape);
        TokenSequence out = vit.forward_segment(seq, nullptr, 0, 2);
        // All inputs are frozen, so nothing asks for gradients.
        CHECK_FALSE(out.tokens.requires_grad());
        CHECK(tape.size() == 0);
    }
}
