#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ei/dataset.hpp"
#include "ei/metrics.hpp"
#include "ei/model.hpp"

namespace ei {

struct TrainConfig {
    std::int64_t batch_size = 8;
    std::int64_t max_epochs = 60;
    std::int64_t patience = 10;
    double lr_min = 1e-5;
    double lr_max = 1e-3;
    double momentum = 0.95;
    double weight_decay = 1e-4;
    double warmup_frac = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

// Biases and router weights train without decay.
bool weight_decay_applies(const std::string& name);

// SGD with momentum; decayed gradient is g + wd * theta, as in the usual
// PyTorch formulation. Parameters without a gradient buffer are skipped.
class SgdOptimizer {
  public:
    SgdOptimizer(ParamList params, double momentum, double weight_decay);

    void zero_grad();
    void step(double lr);

    const ParamList& params() const { return params_; }
    std::vector<Tensor> snapshot() const;
    void restore(std::span<const Tensor> snap);

  private:
    ParamList params_;
    std::vector<std::vector<double>> velocity_;
    std::vector<bool> decay_;
    double momentum_;
    double weight_decay_;
};

// Triangular cycle between lr_min and lr_max with a period of two epochs,
// amplitude-ramped linearly over the first warmup_frac of all steps.
double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t steps_per_epoch,
             const TrainConfig& cfg);

// Best-so-far watcher; improvement must be strict, so ties keep the
// earlier epoch. should_stop() fires after `patience` bad validations.
class EarlyStopTracker {
  public:
    explicit EarlyStopTracker(std::int64_t patience) : patience_(patience) {}

    bool observe(double value, std::int64_t epoch);
    bool should_stop() const { return patience_ > 0 && streak_ >= patience_; }
    double best() const { return best_; }
    std::int64_t best_epoch() const { return best_epoch_; }

  private:
    std::int64_t patience_;
    std::int64_t best_epoch_ = -1;
    std::int64_t streak_ = 0;
    double best_ = 0.0;
    bool seen_ = false;
};

struct EpochStats {
    double l_p = 0, l_aa = 0, l_ag = 0, l_total = 0;  // per-sample means
    double lr = 0;                                    // last step of the epoch
    std::int64_t steps = 0;
    std::int64_t first_step = 0;  // global step index at epoch start
};

// One pass over the training set: shuffle, then per batch build the joint
// loss over every sample (aux CLS shared across that sample's M target
// passes), backprop, and step. Throws NumericError on a non-finite loss.
EpochStats train_epoch(EIModel& model, const Dataset& data, const ModalityPrior& prior,
                       SgdOptimizer& opt, const TrainConfig& cfg, std::int64_t epoch,
                       std::int64_t total_steps, Rng& shuffle_rng);

// Fused class scores for every sample: softmax probabilities (multiclass)
// or per-class sigmoids (multilabel). Run without an active tape.
std::vector<std::vector<double>> predict_scores(const EIModel& model, const Dataset& data);

EvalReport evaluate_model(const EIModel& model, const Dataset& data);

struct TrainResult {
    std::vector<EpochStats> epochs;
    std::vector<double> val_map;
    std::int64_t best_epoch = -1;
    double best_val_map = 0;
    bool stopped_early = false;
};

// Full loop: epoch passes with per-epoch validation, early stop on
// validation mAP, and restoration of the best epoch's parameters.
TrainResult train_model(EIModel& model, const Dataset& train, const Dataset& val,
                        const ModalityPrior& prior, const TrainConfig& cfg,
                        const std::function<void(std::int64_t, const EpochStats&, double)>& on_epoch = {});

// Frozen backbone plus one adapter set and a linear head; the shape every
// per-modality tower takes before joint training.
struct UnimodalModel {
    const ViTBackbone* backbone = nullptr;
    AdapterSet adapters;
    LinearHead head;
    LabelMode label_mode = LabelMode::multiclass;

    Tensor logits(const Tensor& image) const;  // [C]
    ParamList trainable_params() const;
};

// Cross-entropy training of (adapters, head) on one modality's images for
// a fixed number of epochs. epochs == 0 returns the fresh initialization.
UnimodalModel pretrain_unimodal(const ViTBackbone& backbone, const Dataset& data,
                                std::int64_t modality, AdapterMode mode,
                                std::span<const std::int64_t> ranks, const TrainConfig& cfg,
                                LabelMode label_mode, std::uint64_t seed);

std::vector<std::vector<double>> predict_scores_unimodal(const UnimodalModel& model,
                                                         const Dataset& data,
                                                         std::int64_t modality);

// Training-set mAP of each pretrained tower, for the gating prior.
double unimodal_map(const UnimodalModel& model, const Dataset& data, std::int64_t modality);

}  // namespace ei
