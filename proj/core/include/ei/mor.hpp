#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ei/tensor.hpp"

namespace ei {

enum class AdapterMode { frozen, lora, lora_moe, mor };

AdapterMode adapter_mode_from_string(std::string_view s);
std::string to_string(AdapterMode mode);

// Ranks used when the caller does not pick any: a single rank-4 unit for
// lora, three equal units for lora_moe, and the 2/4/8 spread for mor.
std::vector<std::int64_t> default_ranks(AdapterMode mode);

struct LoRAUnit {
    std::int64_t rank = 0;
    Tensor a;  // [rank x d_in]
    Tensor b;  // [d_out x rank], zero at init so the adapted map starts as the frozen map
};

// One adapted linear site: delta = sum_k w_k * B_k A_k h on top of the
// frozen W h + bias. In mor mode the router emits one extra weight (w0,
// column 0) that gates nothing; saturating it disables the adaptation.
class MoRAdapter {
  public:
    MoRAdapter() = default;
    MoRAdapter(AdapterMode mode, std::int64_t d_in, std::int64_t d_out,
               std::span<const std::int64_t> ranks, Rng& rng);

    AdapterMode mode() const { return mode_; }
    std::int64_t d_in() const { return d_in_; }
    std::int64_t d_out() const { return d_out_; }
    bool has_router() const { return router_.defined(); }
    std::int64_t router_width() const { return has_router() ? router_.dim(0) : 0; }

    std::vector<LoRAUnit>& units() { return units_; }
    const std::vector<LoRAUnit>& units() const { return units_; }
    Tensor& router() { return router_; }
    const Tensor& router() const { return router_; }

    // Per-token gate weights, [n x router_width]. Only meaningful for the
    // routed modes; lora and frozen have no router.
    Tensor router_weights(const Tensor& h) const;

    // h: [n x d_in], w_frozen: [d_out x d_in]. Bias added once in every mode.
    Tensor forward(const Tensor& h, const Tensor& w_frozen, const Tensor* bias) const;

    // Fixed (non-trainable) offset on the router logits. Lets callers pin
    // the gate, e.g. a large bypass logit to switch adaptation off.
    void set_router_bias(Tensor bias);
    void clear_router_bias() { router_bias_ = Tensor(); }

    void collect_params(const std::string& prefix, ParamList& out) const;
    std::int64_t trainable_param_count() const;

  private:
    AdapterMode mode_ = AdapterMode::frozen;
    std::int64_t d_in_ = 0, d_out_ = 0;
    std::vector<LoRAUnit> units_;
    Tensor router_;       // [router_width x d_in], zero-init -> uniform gate
    Tensor router_bias_;  // optional steering, excluded from parameters
};

enum class Site { qkv = 0, attn_out = 1, fc1 = 2, fc2 = 3 };
constexpr std::array<const char*, 4> kSiteNames{"qkv", "attn_out", "fc1", "fc2"};

// One adapter per designated linear site per transformer block.
struct AdapterSet {
    AdapterMode mode = AdapterMode::frozen;
    std::vector<std::array<MoRAdapter, 4>> blocks;

    MoRAdapter& at(std::int64_t block, Site site) {
        return blocks[static_cast<std::size_t>(block)][static_cast<std::size_t>(site)];
    }
    const MoRAdapter& at(std::int64_t block, Site site) const {
        return blocks[static_cast<std::size_t>(block)][static_cast<std::size_t>(site)];
    }
    std::int64_t adapter_count() const { return static_cast<std::int64_t>(blocks.size()) * 4; }
    void collect_params(const std::string& prefix, ParamList& out) const;
    std::int64_t trainable_param_count() const;
};

// Builds L x 4 adapters sized for a backbone with width d_model and MLP
// expansion mlp_ratio. Each adapter draws from its own seed stream, so two
// sets built with the same arguments are bit-identical.
AdapterSet init_adapter_set(std::int64_t d_model, std::int64_t mlp_ratio, std::int64_t layers,
                            AdapterMode mode, std::span<const std::int64_t> ranks,
                            std::uint64_t seed);

}  // namespace ei
