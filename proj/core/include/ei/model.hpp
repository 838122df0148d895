#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ei/ops.hpp"
#include "ei/vit.hpp"

namespace ei {

struct LossWeights {
    double lambda1 = 0.3;
    double lambda2 = 0.1;
};

std::string_view label_mode_to_string(LabelMode mode);
LabelMode label_mode_from_string(std::string_view s);  // ConfigError on anything else

// One-hot gate supervision target: the modality that scored best on the
// training set, lowest index winning ties.
struct ModalityPrior {
    std::vector<double> pi;
    std::vector<double> source_scores;
};

ModalityPrior prior_from_scores(std::vector<double> scores);

struct EIConfig {
    std::int64_t modalities = 2;
    std::int64_t classes = 2;
    std::int64_t acquire_layer = -1;  // -1 resolves to L
    std::int64_t insert_layer = 0;    // L switches intervention off
    AdapterMode mode = AdapterMode::mor;
    std::vector<std::int64_t> ranks;  // empty -> default_ranks(mode)
    LossWeights weights;
    LabelMode label_mode = LabelMode::multiclass;
    std::uint64_t seed = 0;
};

// Two-layer MLP d -> d -> d with GELU; turns a reference CLS feature into
// an intervention token row.
struct IntAdapter {
    Tensor w1, b1, w2, b2;
    Tensor forward(const Tensor& x) const;  // [n x d] -> [n x d]
};

struct LinearHead {
    Tensor w, b;  // [C x d], [C]
    Tensor forward(const Tensor& x) const;  // [n x d] -> [n x C]
};

class EIModel {
  public:
    EIModel() = default;
    EIModel(const ViTConfig& backbone_cfg, const EIConfig& cfg);

    const EIConfig& config() const { return cfg_; }
    const ViTBackbone& backbone() const { return backbone_; }
    ViTBackbone& backbone() { return backbone_; }

    AdapterSet& aux_adapters(std::int64_t m) { return aux_adapters_[static_cast<std::size_t>(m)]; }
    AdapterSet& primary_adapters(std::int64_t m) { return primary_adapters_[static_cast<std::size_t>(m)]; }
    const AdapterSet& aux_adapters(std::int64_t m) const { return aux_adapters_[static_cast<std::size_t>(m)]; }
    const AdapterSet& primary_adapters(std::int64_t m) const { return primary_adapters_[static_cast<std::size_t>(m)]; }
    IntAdapter& int_adapter(std::int64_t m) { return int_adapters_[static_cast<std::size_t>(m)]; }
    LinearHead& aux_head(std::int64_t m) { return aux_heads_[static_cast<std::size_t>(m)]; }
    LinearHead& primary_head(std::int64_t m) { return primary_heads_[static_cast<std::size_t>(m)]; }
    Tensor& gating_w() { return gating_w_; }
    Tensor& gating_b() { return gating_b_; }

    // Per-modality auxiliary tower outputs, shared by every target within
    // one sample: the CLS tapped at acquire_layer (feeds INT generation)
    // and the full-depth CLS (feeds the auxiliary heads).
    struct AuxForward {
        Tensor cls_acquire;  // [d]
        Tensor cls_full;     // [d]
    };
    std::vector<AuxForward> aux_forward(std::span<const Tensor> x) const;

    // [ (M-1) x d ], reference rows in ascending modality order.
    Tensor generate_int_tokens(std::span<const AuxForward> aux, std::int64_t target) const;

    // Target tower with the INT rows spliced in at insert_layer.
    Tensor primary_features(std::span<const Tensor> x, std::int64_t target,
                            const Tensor& int_tokens) const;

    struct FusionResult {
        Tensor y_hat;               // [C]
        std::vector<Tensor> y_t;    // M x [C]
        Tensor alpha;               // [M]
        Tensor gate_logits;         // [M]
    };
    FusionResult late_fusion(std::span<const Tensor> cls_list) const;

    struct LossResult {
        Tensor l_p, l_aa, l_ag, l_total;  // scalars
        FusionResult fusion;
    };
    LossResult compute_losses(std::span<const Tensor> x, std::span<const double> y,
                              const ModalityPrior& prior, const LossWeights& weights) const;

    // Inference-time fused prediction (logits, [C]).
    Tensor predict(std::span<const Tensor> x) const;

    ParamList trainable_params() const;
    ParamList all_params() const;  // backbone included, for serialization

  private:
    ViTConfig backbone_cfg_;
    EIConfig cfg_;
    ViTBackbone backbone_;
    std::vector<AdapterSet> aux_adapters_, primary_adapters_;
    std::vector<IntAdapter> int_adapters_;
    std::vector<LinearHead> aux_heads_, primary_heads_;
    Tensor gating_w_, gating_b_;  // [M x M*d], [M]
};

}  // namespace ei
