#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ei/mor.hpp"
#include "ei/tensor.hpp"

namespace ei {

struct ViTConfig {
    std::int64_t image_size = 16;
    std::int64_t patch_size = 4;
    std::int64_t channels = 1;
    std::int64_t d_model = 32;
    std::int64_t layers = 4;
    std::int64_t heads = 4;
    std::int64_t mlp_ratio = 4;
    std::uint64_t seed = 0;

    std::int64_t patches_per_side() const { return image_size / patch_size; }
    std::int64_t num_patches() const { return patches_per_side() * patches_per_side(); }
    std::int64_t patch_dim() const { return channels * patch_size * patch_size; }
    std::int64_t head_dim() const { return d_model / heads; }
    void validate() const;  // divisibility and positivity
};

// tokens: [(1 + N + extra) x d], row 0 is CLS, then N patch tokens, then
// any appended tokens (which never receive positional embeddings).
struct TokenSequence {
    Tensor tokens;
    std::int64_t extra = 0;
};

struct ViTBlock {
    Tensor ln1_gamma, ln1_beta;
    Tensor qkv_w, qkv_b;            // [3d x d], [3d]
    Tensor attn_out_w, attn_out_b;  // [d x d], [d]
    Tensor ln2_gamma, ln2_beta;
    Tensor fc1_w, fc1_b;            // [mlp*d x d], [mlp*d]
    Tensor fc2_w, fc2_b;            // [d x mlp*d], [d]
};

// Frozen feature extractor. All weights are created with requires_grad off
// and stay that way; the only trainable pieces live in adapter sets that
// hook the four linear sites of each block.
class ViTBackbone {
  public:
    ViTBackbone() = default;
    explicit ViTBackbone(const ViTConfig& cfg);

    const ViTConfig& config() const { return cfg_; }
    ViTBlock& block(std::int64_t i) { return blocks_[static_cast<std::size_t>(i)]; }
    const ViTBlock& block(std::int64_t i) const { return blocks_[static_cast<std::size_t>(i)]; }

    // image: [H x W] or [channels x H x W] -> [CLS | N patches] + pos.
    TokenSequence patchify_embed(const Tensor& image) const;

    // Applies blocks [from_layer, to_layer); equal indices = identity.
    TokenSequence forward_segment(const TokenSequence& seq, const AdapterSet* adapters,
                                  std::int64_t from_layer, std::int64_t to_layer) const;

    static TokenSequence append_tokens(const TokenSequence& seq, const Tensor& extra);
    static Tensor extract_cls(const TokenSequence& seq);  // [d]

    // Affine-free layer norm over the feature axis, applied to any state
    // that leaves the token stream (head inputs, [INT] sources). The usual
    // ViT output norm; without it the 0.02-scale initialization leaves
    // features too small for the fixed learning-rate band to train heads.
    Tensor feature_norm(const Tensor& feat) const;  // [d] or [n x d]

    // Cosine similarity of each patch token against CLS, as a sqrt(N) x
    // sqrt(N) grid. Zero-norm tokens map to 0.
    Tensor cls_patch_similarity(const TokenSequence& seq) const;

    void collect_params(const std::string& prefix, ParamList& out) const;
    std::uint64_t param_hash() const;

    Tensor patch_w, patch_b;  // [d x patch_dim], [d]
    Tensor cls_token;         // [1 x d]
    Tensor pos_emb;           // [(1+N) x d]

  private:
    ViTConfig cfg_;
    std::vector<ViTBlock> blocks_;
    Tensor feat_gamma_, feat_beta_;  // constant 1/0, not parameters
};

// Convenience: adapters sized for this backbone.
AdapterSet init_adapter_set(const ViTBackbone& backbone, AdapterMode mode,
                            std::span<const std::int64_t> ranks, std::uint64_t seed);

}  // namespace ei
