#include "ei/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "ei/errors.hpp"
#include "ei/tensor_io.hpp"

namespace ei {

namespace {

constexpr std::int64_t kBlock = 4;  // cue block side, fixed

bool known_split(std::string_view s) { return s == "train" || s == "val" || s == "test"; }

}  // namespace

void SyntheticSpec::validate() const {
    if (task != "xor" && task != "redundant" && task != "unimodal-linear") {
        throw ConfigError("unknown synthetic task '" + task + "'");
    }
    if (task == "xor" && (modalities != 2 || classes != 2)) {
        throw ConfigError("xor task requires 2 modalities and 2 classes");
    }
    if (modalities < 2) throw ConfigError("synthetic corpora need at least 2 modalities");
    if (classes < 2 || classes > 4) {
        throw ConfigError("synthetic corpora support 2..4 classes (corner cues), got " +
                          std::to_string(classes));
    }
    if (image_size < 2 * kBlock) {
        throw ConfigError("image size " + std::to_string(image_size) +
                          " too small for corner cues (needs >= " + std::to_string(2 * kBlock) + ")");
    }
    if (train_count < 0 || val_count < 0 || test_count < 0) {
        throw ConfigError("split sizes must be nonnegative");
    }
    if (noise_std < 0) throw ConfigError("noise std must be nonnegative");
}

std::int64_t SyntheticSpec::count_for(std::string_view split) const {
    if (split == "train") return train_count;
    if (split == "val") return val_count;
    if (split == "test") return test_count;
    throw DataError("unknown split '" + std::string(split) + "'");
}

namespace {

// Corner anchors in class order: top-left, bottom-right, top-right, bottom-left.
std::pair<std::int64_t, std::int64_t> corner_anchor(std::int64_t corner, std::int64_t sz) {
    switch (corner) {
        case 0: return {0, 0};
        case 1: return {sz - kBlock, sz - kBlock};
        case 2: return {0, sz - kBlock};
        default: return {sz - kBlock, 0};
    }
}

// Background noise first, then the bright block redrawn on top (corner < 0
// means no cue). Values land on the f32 grid so the in-memory corpus and a
// written-then-loaded one are bit-identical.
Tensor make_image(std::int64_t sz, std::int64_t corner, double noise_std, Rng& rng) {
    std::vector<double> px(static_cast<std::size_t>(sz * sz));
    for (auto& v : px) v = static_cast<double>(static_cast<float>(rng.normal(0.0, noise_std)));
    if (corner >= 0) {
        auto [r0, c0] = corner_anchor(corner, sz);
        for (std::int64_t r = 0; r < kBlock; ++r) {
            for (std::int64_t c = 0; c < kBlock; ++c) {
                px[static_cast<std::size_t>((r0 + r) * sz + (c0 + c))] =
                    static_cast<double>(static_cast<float>(1.0 + rng.normal(0.0, noise_std)));
            }
        }
    }
    Tensor t = Tensor::zeros({sz, sz});
    std::copy(px.begin(), px.end(), t.raw_values().begin());
    return t;
}

Sample make_sample(const SyntheticSpec& spec, std::string_view split, std::int64_t index) {
    Rng rng(Rng::derive(spec.seed, std::string(split) + "/" + std::to_string(index)));

    Sample s;
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%s-%05lld", spec.task.c_str(), std::string(split).c_str(),
                  static_cast<long long>(index));
    s.id = id;
    s.label.assign(static_cast<std::size_t>(spec.classes), 0.0);

    if (spec.task == "xor") {
        const std::int64_t b1 = static_cast<std::int64_t>(rng.below(2));
        const std::int64_t b2 = static_cast<std::int64_t>(rng.below(2));
        s.label[static_cast<std::size_t>(b1 ^ b2)] = 1.0;
        // bit 1 -> top-left block, bit 0 -> bottom-right
        s.tensors.push_back(make_image(spec.image_size, b1 ? 0 : 1, spec.noise_std, rng));
        s.tensors.push_back(make_image(spec.image_size, b2 ? 0 : 1, spec.noise_std, rng));
    } else if (spec.task == "redundant") {
        const auto cls = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(spec.classes)));
        s.label[static_cast<std::size_t>(cls)] = 1.0;
        for (std::int64_t m = 0; m < spec.modalities; ++m) {
            s.tensors.push_back(make_image(spec.image_size, cls, spec.noise_std, rng));
        }
    } else {  // unimodal-linear: cue only in modality 0
        const auto cls = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(spec.classes)));
        s.label[static_cast<std::size_t>(cls)] = 1.0;
        s.tensors.push_back(make_image(spec.image_size, cls, spec.noise_std, rng));
        for (std::int64_t m = 1; m < spec.modalities; ++m) {
            s.tensors.push_back(make_image(spec.image_size, -1, spec.noise_std, rng));
        }
    }
    return s;
}

}  // namespace

Dataset synth_split(const SyntheticSpec& spec, std::string_view split) {
    spec.validate();
    Dataset ds;
    ds.modalities = spec.modalities;
    ds.classes = spec.classes;
    const std::int64_t n = spec.count_for(split);
    ds.samples.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) ds.samples.push_back(make_sample(spec, split, i));
    return ds;
}

void generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "tensors");

    std::ofstream manifest(out_dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
    if (!manifest) throw DataError("cannot open " + (out_dir / "manifest.jsonl").string());

    for (const char* split : {"train", "val", "test"}) {
        const std::int64_t n = spec.count_for(split);
        for (std::int64_t i = 0; i < n; ++i) {
            Sample s = make_sample(spec, split, i);
            nlohmann::ordered_json line;
            line["id"] = s.id;
            auto& paths = line["tensors"] = nlohmann::json::array();
            for (std::size_t m = 0; m < s.tensors.size(); ++m) {
                const std::string rel = "tensors/" + s.id + "_m" + std::to_string(m) + ".eitf";
                write_tensor(out_dir / rel, s.tensors[m], FileDtype::f32);
                paths.push_back(rel);
            }
            line["label"] = s.label;
            line["split"] = split;
            manifest << line.dump() << "\n";
        }
    }
    if (!manifest) throw DataError("short write to manifest under " + out_dir.string());
}

Dataset load_split(const std::filesystem::path& manifest_path, std::string_view split) {
    if (!known_split(split)) throw DataError("unknown split '" + std::string(split) + "'");

    std::ifstream f(manifest_path, std::ios::binary);
    if (!f) throw DataError("cannot open manifest " + manifest_path.string());
    const std::filesystem::path base = manifest_path.parent_path();

    Dataset ds;
    std::int64_t label_width = -1, tensor_count = -1;
    std::string line;
    std::size_t line_no = 0;
    std::set<std::string> seen_ids;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("id") || !j.contains("tensors") || !j.contains("label") || !j.contains("split")) {
            throw DataError("manifest line " + std::to_string(line_no) + ": missing field");
        }
        const std::string s_split = j["split"].get<std::string>();
        if (!known_split(s_split)) {
            throw DataError("manifest line " + std::to_string(line_no) + ": unknown split '" + s_split + "'");
        }
        const auto width = static_cast<std::int64_t>(j["label"].size());
        if (label_width < 0) label_width = width;
        if (width != label_width) {
            throw DataError("manifest line " + std::to_string(line_no) + ": label width " +
                            std::to_string(width) + " != " + std::to_string(label_width));
        }
        const auto tcount = static_cast<std::int64_t>(j["tensors"].size());
        if (tensor_count < 0) tensor_count = tcount;
        if (tcount != tensor_count) {
            throw DataError("manifest line " + std::to_string(line_no) + ": modality count " +
                            std::to_string(tcount) + " != " + std::to_string(tensor_count));
        }
        if (s_split != split) continue;

        Sample s;
        s.id = j["id"].get<std::string>();
        if (!seen_ids.insert(s.id).second) {
            throw DataError("manifest line " + std::to_string(line_no) + ": duplicate id '" + s.id + "'");
        }
        s.label = j["label"].get<std::vector<double>>();
        for (const auto& rel : j["tensors"]) {
            s.tensors.push_back(read_tensor(base / rel.get<std::string>()));
        }
        ds.samples.push_back(std::move(s));
    }
    std::sort(ds.samples.begin(), ds.samples.end(),
              [](const Sample& a, const Sample& b) { return a.id < b.id; });
    ds.modalities = tensor_count < 0 ? 0 : tensor_count;
    ds.classes = label_width < 0 ? 0 : label_width;
    return ds;
}

}  // namespace ei
