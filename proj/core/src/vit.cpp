#include "ei/vit.hpp"

#include <cmath>
#include <cstring>

#include "ei/errors.hpp"
#include "ei/ops.hpp"

namespace ei {

void ViTConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || channels <= 0 || d_model <= 0 || layers <= 0 ||
        heads <= 0 || mlp_ratio <= 0) {
        throw ConfigError("backbone dimensions must be positive");
    }
    if (image_size % patch_size != 0) {
        throw ConfigError("image size not divisible by patch size (" + std::to_string(image_size) +
                          " / " + std::to_string(patch_size) + ")");
    }
    if (d_model % heads != 0) {
        throw ConfigError("hidden dim " + std::to_string(d_model) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
}

namespace {

Tensor trunc_normal_tensor(std::vector<std::int64_t> shape, double std, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.trunc_normal(0.0, std);
    return Tensor::from(std::move(shape), v);
}

}  // namespace

ViTBackbone::ViTBackbone(const ViTConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::int64_t d = cfg_.d_model;
    const std::int64_t pd = cfg_.patch_dim();
    const std::int64_t n_tok = 1 + cfg_.num_patches();

    auto stream = [&](const std::string& label) { return Rng(Rng::derive(cfg_.seed, label)); };
    auto weight = [&](std::vector<std::int64_t> shape, const std::string& label) {
        Rng rng = stream(label);
        return trunc_normal_tensor(std::move(shape), 0.02, rng);
    };

    patch_w = weight({d, pd}, "patch_w");
    patch_b = Tensor::zeros({d});
    cls_token = weight({1, d}, "cls");
    pos_emb = weight({n_tok, d}, "pos");

    blocks_.resize(static_cast<std::size_t>(cfg_.layers));
    for (std::int64_t i = 0; i < cfg_.layers; ++i) {
        ViTBlock& b = blocks_[static_cast<std::size_t>(i)];
        const std::string p = "block" + std::to_string(i) + ".";
        b.ln1_gamma = Tensor::full({d}, 1.0);
        b.ln1_beta = Tensor::zeros({d});
        b.qkv_w = weight({3 * d, d}, p + "qkv_w");
        b.qkv_b = Tensor::zeros({3 * d});
        b.attn_out_w = weight({d, d}, p + "attn_out_w");
        b.attn_out_b = Tensor::zeros({d});
        b.ln2_gamma = Tensor::full({d}, 1.0);
        b.ln2_beta = Tensor::zeros({d});
        b.fc1_w = weight({cfg_.mlp_ratio * d, d}, p + "fc1_w");
        b.fc1_b = Tensor::zeros({cfg_.mlp_ratio * d});
        b.fc2_w = weight({d, cfg_.mlp_ratio * d}, p + "fc2_w");
        b.fc2_b = Tensor::zeros({d});
    }
    feat_gamma_ = Tensor::full({d}, 1.0);
    feat_beta_ = Tensor::zeros({d});
}

TokenSequence ViTBackbone::patchify_embed(const Tensor& image) const {
    const std::int64_t sz = cfg_.image_size, ps = cfg_.patch_size, c = cfg_.channels;
    bool ok = false;
    if (image.ndim() == 2 && c == 1) {
        ok = image.dim(0) == sz && image.dim(1) == sz;
    } else if (image.ndim() == 3) {
        ok = image.dim(0) == c && image.dim(1) == sz && image.dim(2) == sz;
    }
    if (!ok) {
        throw ShapeError("patchify_embed: image " + image.shape_str() + " does not match " +
                         std::to_string(c) + "x" + std::to_string(sz) + "x" + std::to_string(sz));
    }

    const std::int64_t side = cfg_.patches_per_side();
    const std::int64_t n = cfg_.num_patches();
    const std::int64_t pd = cfg_.patch_dim();
    std::vector<double> patches(static_cast<std::size_t>(n * pd));
    auto img = image.values();
    for (std::int64_t pi = 0; pi < side; ++pi) {
        for (std::int64_t pj = 0; pj < side; ++pj) {
            double* dst = patches.data() + (pi * side + pj) * pd;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                for (std::int64_t r = 0; r < ps; ++r) {
                    const std::int64_t row = pi * ps + r;
                    const double* src = img.data() + (ch * sz + row) * sz + pj * ps;
                    std::memcpy(dst + (ch * ps + r) * ps, src, static_cast<std::size_t>(ps) * sizeof(double));
                }
            }
        }
    }
    Tensor patch_mat = Tensor::from({n, pd}, std::move(patches));
    Tensor tok = linear_t(patch_mat, patch_w, &patch_b);
    std::array<Tensor, 2> parts{cls_token, tok};
    Tensor seq = concat_rows(parts);
    seq = add(seq, pos_emb);
    return {seq, 0};
}

namespace {

Tensor site_linear(const Tensor& x, const Tensor& w, const Tensor& b, const AdapterSet* adapters,
                   std::int64_t layer, Site site) {
    if (adapters) return adapters->at(layer, site).forward(x, w, &b);
    return linear_t(x, w, &b);
}

}  // namespace

TokenSequence ViTBackbone::forward_segment(const TokenSequence& seq, const AdapterSet* adapters,
                                           std::int64_t from_layer, std::int64_t to_layer) const {
    if (from_layer < 0 || to_layer < from_layer || to_layer > cfg_.layers) {
        throw ConfigError("forward_segment: layer range [" + std::to_string(from_layer) + "," +
                          std::to_string(to_layer) + ") outside 0.." + std::to_string(cfg_.layers));
    }
    const std::int64_t d = cfg_.d_model;
    const std::int64_t h = cfg_.heads;
    const std::int64_t dh = cfg_.head_dim();
    Tensor tokens = seq.tokens;
    const std::int64_t n = tokens.dim(0);

    for (std::int64_t l = from_layer; l < to_layer; ++l) {
        const ViTBlock& blk = blocks_[static_cast<std::size_t>(l)];

        Tensor x = layer_norm(tokens, blk.ln1_gamma, blk.ln1_beta);
        Tensor qkv = site_linear(x, blk.qkv_w, blk.qkv_b, adapters, l, Site::qkv);
        Tensor q = permute(reshape(slice_cols(qkv, 0, d), {n, h, dh}), {1, 0, 2});
        Tensor k = permute(reshape(slice_cols(qkv, d, 2 * d), {n, h, dh}), {1, 0, 2});
        Tensor v = permute(reshape(slice_cols(qkv, 2 * d, 3 * d), {n, h, dh}), {1, 0, 2});
        Tensor att = softmax(scale(bmm_t(q, k), 1.0 / std::sqrt(static_cast<double>(dh))), 2);
        Tensor ctx = reshape(permute(bmm(att, v), {1, 0, 2}), {n, d});
        Tensor attn = site_linear(ctx, blk.attn_out_w, blk.attn_out_b, adapters, l, Site::attn_out);
        tokens = add(tokens, attn);

        Tensor y = layer_norm(tokens, blk.ln2_gamma, blk.ln2_beta);
        Tensor h1 = gelu(site_linear(y, blk.fc1_w, blk.fc1_b, adapters, l, Site::fc1));
        Tensor h2 = site_linear(h1, blk.fc2_w, blk.fc2_b, adapters, l, Site::fc2);
        tokens = add(tokens, h2);
    }
    return {tokens, seq.extra};
}

TokenSequence ViTBackbone::append_tokens(const TokenSequence& seq, const Tensor& extra) {
    if (extra.ndim() != 2 || extra.dim(1) != seq.tokens.dim(1)) {
        throw ShapeError("append_tokens: extra " + extra.shape_str() + " does not match width of " +
                         seq.tokens.shape_str());
    }
    std::array<Tensor, 2> parts{seq.tokens, extra};
    return {concat_rows(parts), seq.extra + extra.dim(0)};
}

Tensor ViTBackbone::extract_cls(const TokenSequence& seq) {
    if (!seq.tokens.defined() || seq.tokens.dim(0) < 1) {
        throw ShapeError("extract_cls: empty sequence");
    }
    return reshape(slice_rows(seq.tokens, 0, 1), {seq.tokens.dim(1)});
}

Tensor ViTBackbone::feature_norm(const Tensor& feat) const {
    if (feat.ndim() == 1) {
        if (feat.dim(0) != cfg_.d_model) {
            throw ShapeError("feature_norm: " + feat.shape_str() + " vs width " +
                             std::to_string(cfg_.d_model));
        }
        Tensor rows = reshape(feat, {1, cfg_.d_model});
        return reshape(layer_norm(rows, feat_gamma_, feat_beta_), {cfg_.d_model});
    }
    if (feat.ndim() != 2 || feat.dim(1) != cfg_.d_model) {
        throw ShapeError("feature_norm: " + feat.shape_str() + " vs width " +
                         std::to_string(cfg_.d_model));
    }
    return layer_norm(feat, feat_gamma_, feat_beta_);
}

Tensor ViTBackbone::cls_patch_similarity(const TokenSequence& seq) const {
    const std::int64_t n = cfg_.num_patches();
    const std::int64_t side = cfg_.patches_per_side();
    const std::int64_t d = cfg_.d_model;
    if (seq.tokens.dim(0) < 1 + n) {
        throw ShapeError("cls_patch_similarity: sequence " + seq.tokens.shape_str() +
                         " shorter than 1+" + std::to_string(n));
    }
    auto tv = seq.tokens.values();
    double cls_norm = 0.0;
    for (std::int64_t j = 0; j < d; ++j) cls_norm += tv[j] * tv[j];
    cls_norm = std::sqrt(cls_norm);

    std::vector<double> sim(static_cast<std::size_t>(n), 0.0);
    for (std::int64_t p = 0; p < n; ++p) {
        const double* tok = tv.data() + (1 + p) * d;
        double dot = 0.0, norm = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            dot += tv[j] * tok[j];
            norm += tok[j] * tok[j];
        }
        norm = std::sqrt(norm);
        sim[static_cast<std::size_t>(p)] = (cls_norm == 0.0 || norm == 0.0) ? 0.0 : dot / (cls_norm * norm);
    }
    return Tensor::from({side, side}, std::move(sim));
}

void ViTBackbone::collect_params(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".patch_w", patch_w});
    out.push_back({prefix + ".patch_bias", patch_b});
    out.push_back({prefix + ".cls", cls_token});
    out.push_back({prefix + ".pos", pos_emb});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const ViTBlock& b = blocks_[i];
        const std::string p = prefix + ".block" + std::to_string(i) + ".";
        out.push_back({p + "ln1_gamma", b.ln1_gamma});
        out.push_back({p + "ln1_beta", b.ln1_beta});
        out.push_back({p + "qkv_w", b.qkv_w});
        out.push_back({p + "qkv_bias", b.qkv_b});
        out.push_back({p + "attn_out_w", b.attn_out_w});
        out.push_back({p + "attn_out_bias", b.attn_out_b});
        out.push_back({p + "ln2_gamma", b.ln2_gamma});
        out.push_back({p + "ln2_beta", b.ln2_beta});
        out.push_back({p + "fc1_w", b.fc1_w});
        out.push_back({p + "fc1_bias", b.fc1_b});
        out.push_back({p + "fc2_w", b.fc2_w});
        out.push_back({p + "fc2_bias", b.fc2_b});
    }
}

std::uint64_t ViTBackbone::param_hash() const {
    ParamList params;
    collect_params("bb", params);
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const NamedParam& p : params) {
        auto v = p.tensor.values();
        mix(v.data(), v.size() * sizeof(double));
    }
    return h;
}

AdapterSet init_adapter_set(const ViTBackbone& backbone, AdapterMode mode,
                            std::span<const std::int64_t> ranks, std::uint64_t seed) {
    const ViTConfig& c = backbone.config();
    return init_adapter_set(c.d_model, c.mlp_ratio, c.layers, mode, ranks, seed);
}

}  // namespace ei
