#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ei/dataset.hpp"
#include "ei/model.hpp"
#include "ei/train.hpp"
#include "ei/vit.hpp"

namespace ei {

// Everything a run needs. Loaded from flat `key = value` text; unset keys
// keep their defaults, which describe the stock xor corpus experiment.
struct RunConfig {
    ViTConfig backbone;
    EIConfig ei;
    TrainConfig train;
    std::string data_manifest;  // empty -> corpus synthesized in memory
    SyntheticSpec synth;

    // Ties the dependent pieces together (synthetic corpus geometry from
    // the model, ei.seed from train.seed) and validates.
    void finalize();

    // Effective configuration as reparseable key = value text.
    std::string echo() const;
};

RunConfig parse_config_text(std::string_view text);
RunConfig parse_config_file(const std::filesystem::path& file);

// Applies one `key = value` assignment. Unknown keys are rejected.
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace ei
