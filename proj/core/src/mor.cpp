#include "ei/mor.hpp"

#include <algorithm>

#include "ei/errors.hpp"
#include "ei/ops.hpp"

namespace ei {

AdapterMode adapter_mode_from_string(std::string_view s) {
    if (s == "frozen") return AdapterMode::frozen;
    if (s == "lora") return AdapterMode::lora;
    if (s == "lora_moe") return AdapterMode::lora_moe;
    if (s == "mor") return AdapterMode::mor;
    throw ConfigError("unknown adapter mode '" + std::string(s) +
                      "' (expected frozen|lora|lora_moe|mor)");
}

std::string to_string(AdapterMode mode) {
    switch (mode) {
        case AdapterMode::frozen: return "frozen";
        case AdapterMode::lora: return "lora";
        case AdapterMode::lora_moe: return "lora_moe";
        case AdapterMode::mor: return "mor";
    }
    return "frozen";
}

std::vector<std::int64_t> default_ranks(AdapterMode mode) {
    switch (mode) {
        case AdapterMode::frozen: return {};
        case AdapterMode::lora: return {4};
        case AdapterMode::lora_moe: return {4, 4, 4};
        case AdapterMode::mor: return {2, 4, 8};
    }
    return {};
}

namespace {

Tensor normal_tensor(std::vector<std::int64_t> shape, double std, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.normal(0.0, std);
    return Tensor::from(std::move(shape), v);
}

}  // namespace

MoRAdapter::MoRAdapter(AdapterMode mode, std::int64_t d_in, std::int64_t d_out,
                       std::span<const std::int64_t> ranks, Rng& rng)
    : mode_(mode), d_in_(d_in), d_out_(d_out) {
    if (d_in <= 0 || d_out <= 0) {
        throw ConfigError("adapter dimensions must be positive");
    }
    if (mode == AdapterMode::frozen) return;
    if (ranks.empty()) throw ConfigError("adapter mode " + to_string(mode) + " needs at least one rank");
    if (mode == AdapterMode::lora && ranks.size() != 1) {
        throw ConfigError("lora mode takes exactly one rank, got " + std::to_string(ranks.size()));
    }
    if (mode == AdapterMode::lora_moe) {
        for (std::int64_t r : ranks) {
            if (r != ranks[0]) throw ConfigError("lora_moe mode requires equal ranks");
        }
    }
    for (std::int64_t r : ranks) {
        if (r <= 0 || r >= std::min(d_in, d_out)) {
            throw ConfigError("rank " + std::to_string(r) + " out of range for a " +
                              std::to_string(d_out) + "x" + std::to_string(d_in) + " layer");
        }
        LoRAUnit u;
        u.rank = r;
        u.a = normal_tensor({r, d_in}, 0.02, rng);
        u.a.set_requires_grad(true);
        u.b = Tensor::zeros({d_out, r}, true);
        units_.push_back(std::move(u));
    }
    if (mode == AdapterMode::mor || mode == AdapterMode::lora_moe) {
        const std::int64_t width =
            static_cast<std::int64_t>(units_.size()) + (mode == AdapterMode::mor ? 1 : 0);
        router_ = Tensor::zeros({width, d_in}, true);
    }
}

Tensor MoRAdapter::router_weights(const Tensor& h) const {
    if (!has_router()) {
        throw ConfigError("router_weights: mode " + to_string(mode_) + " has no router");
    }
    const bool single = h.ndim() == 1;
    Tensor rows = single ? reshape(h, {1, h.dim(0)}) : h;
    Tensor logits = linear_t(rows, router_, router_bias_.defined() ? &router_bias_ : nullptr);
    Tensor w = softmax(logits, 1);
    return single ? reshape(w, {w.dim(1)}) : w;
}

Tensor MoRAdapter::forward(const Tensor& h, const Tensor& w_frozen, const Tensor* bias) const {
    Tensor base = linear_t(h, w_frozen, bias);
    if (units_.empty()) return base;

    if (mode_ == AdapterMode::lora) {
        return add(base, linear_t(linear_t(h, units_[0].a), units_[0].b));
    }

    Tensor gates = router_weights(h);  // [n x width]
    const std::int64_t offset = mode_ == AdapterMode::mor ? 1 : 0;  // column 0 gates nothing
    const std::int64_t n = h.dim(0);
    Tensor delta;
    for (std::size_t k = 0; k < units_.size(); ++k) {
        Tensor term = linear_t(linear_t(h, units_[k].a), units_[k].b);
        const std::int64_t col = offset + static_cast<std::int64_t>(k);
        Tensor gate = reshape(slice_cols(gates, col, col + 1), {n});
        Tensor gated = row_scale(term, gate);
        delta = delta.defined() ? add(delta, gated) : gated;
    }
    return add(base, delta);
}

void MoRAdapter::set_router_bias(Tensor bias) {
    if (!has_router()) {
        throw ConfigError("set_router_bias: mode " + to_string(mode_) + " has no router");
    }
    if (bias.ndim() != 1 || bias.dim(0) != router_width()) {
        throw ShapeError("set_router_bias: expected [" + std::to_string(router_width()) + "], got " +
                         bias.shape_str());
    }
    bias.set_requires_grad(false);
    router_bias_ = std::move(bias);
}

void MoRAdapter::collect_params(const std::string& prefix, ParamList& out) const {
    for (std::size_t k = 0; k < units_.size(); ++k) {
        out.push_back({prefix + ".A" + std::to_string(k), units_[k].a});
        out.push_back({prefix + ".B" + std::to_string(k), units_[k].b});
    }
    if (router_.defined()) out.push_back({prefix + ".router", router_});
}

std::int64_t MoRAdapter::trainable_param_count() const {
    std::int64_t total = 0;
    for (const LoRAUnit& u : units_) total += u.rank * (d_in_ + d_out_);
    if (router_.defined()) total += router_.numel();
    return total;
}

void AdapterSet::collect_params(const std::string& prefix, ParamList& out) const {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t s = 0; s < 4; ++s) {
            blocks[b][s].collect_params(
                prefix + ".block" + std::to_string(b) + "." + kSiteNames[s], out);
        }
    }
}

std::int64_t AdapterSet::trainable_param_count() const {
    std::int64_t total = 0;
    for (const auto& blk : blocks) {
        for (const auto& ad : blk) total += ad.trainable_param_count();
    }
    return total;
}

AdapterSet init_adapter_set(std::int64_t d_model, std::int64_t mlp_ratio, std::int64_t layers,
                            AdapterMode mode, std::span<const std::int64_t> ranks,
                            std::uint64_t seed) {
    std::vector<std::int64_t> resolved(ranks.begin(), ranks.end());
    if (resolved.empty()) resolved = default_ranks(mode);

    AdapterSet set;
    set.mode = mode;
    set.blocks.resize(static_cast<std::size_t>(layers));
    const std::int64_t d_mlp = d_model * mlp_ratio;
    const std::array<std::pair<std::int64_t, std::int64_t>, 4> dims{{
        {d_model, 3 * d_model},  // qkv
        {d_model, d_model},      // attn_out
        {d_model, d_mlp},        // fc1
        {d_mlp, d_model},        // fc2
    }};
    for (std::int64_t b = 0; b < layers; ++b) {
        for (std::size_t s = 0; s < 4; ++s) {
            Rng rng(Rng::derive(seed, "block" + std::to_string(b) + "." + kSiteNames[s]));
            set.at(b, static_cast<Site>(s)) =
                MoRAdapter(mode, dims[s].first, dims[s].second, resolved, rng);
        }
    }
    return set;
}

}  // namespace ei
