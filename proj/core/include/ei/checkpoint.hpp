#pragma once

#include <filesystem>

#include "ei/model.hpp"
#include "ei/train.hpp"

namespace ei {

// Checkpoints are directories: manifest.json describing the architecture
// plus one tensor file per parameter under params/. Files follow the
// ambient precision, which loses nothing because parameter values already
// sit on the f32 grid in f32 mode.
void save_checkpoint(const EIModel& model, const std::filesystem::path& dir);
EIModel load_checkpoint(const std::filesystem::path& dir);

// Pre-adaptation output for one modality: adapter set plus linear head.
void save_unimodal(const UnimodalModel& model, AdapterMode mode, const std::filesystem::path& dir);
UnimodalModel load_unimodal(const ViTBackbone& backbone, AdapterMode mode,
                            std::span<const std::int64_t> ranks, LabelMode label_mode,
                            const std::filesystem::path& dir);

void save_prior(const ModalityPrior& prior, const std::filesystem::path& file);
ModalityPrior load_prior(const std::filesystem::path& file);

// Copies values position-wise between identically shaped parameter lists.
void copy_param_values(const ParamList& src, const ParamList& dst);

}  // namespace ei
