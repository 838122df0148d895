#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ei/tensor.hpp"

namespace ei {

struct Sample {
    std::string id;
    std::vector<Tensor> tensors;  // one image per modality
    std::vector<double> label;    // dense, length C
};

struct Dataset {
    std::vector<Sample> samples;
    std::int64_t modalities = 0;
    std::int64_t classes = 0;
    std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
};

struct SyntheticSpec {
    std::string task = "xor";  // xor | redundant | unimodal-linear
    std::int64_t modalities = 2;
    std::int64_t classes = 2;
    std::int64_t image_size = 16;
    std::int64_t train_count = 1000;
    std::int64_t val_count = 200;
    std::int64_t test_count = 200;
    double noise_std = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
    std::int64_t count_for(std::string_view split) const;
};

// Builds one split directly in memory. The on-disk generator writes
// exactly these samples, so both paths agree bit for bit.
Dataset synth_split(const SyntheticSpec& spec, std::string_view split);

// Writes manifest.jsonl plus tensors/<id>_m<k>.eitf (f32) under out_dir.
void generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// Loads one split from a manifest, ordered by sample id.
Dataset load_split(const std::filesystem::path& manifest_path, std::string_view split);

}  // namespace ei
