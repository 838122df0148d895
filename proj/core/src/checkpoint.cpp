#include "ei/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "ei/errors.hpp"
#include "ei/tensor_io.hpp"

namespace ei {

namespace {

using json = nlohmann::ordered_json;

constexpr int kVersion = 1;

FileDtype ambient_dtype() {
    return precision() == Precision::f32 ? FileDtype::f32 : FileDtype::f64;
}

void write_json(const json& j, const std::filesystem::path& file) {
    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + file.string());
    f << j.dump(2) << "\n";
    if (!f) throw DataError("short write to " + file.string());
}

json read_json(const std::filesystem::path& file) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw DataError("cannot open " + file.string());
    try {
        return json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(file.string() + ": " + e.what());
    }
}

void write_params(const ParamList& params, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& p : params) {
        write_tensor(dir / (p.name + ".eitf"), p.tensor, ambient_dtype());
    }
}

void read_params(const ParamList& params, const std::filesystem::path& dir) {
    for (const auto& p : params) {
        const auto file = dir / (p.name + ".eitf");
        Tensor stored = read_tensor(file);
        if (stored.shape() != p.tensor.shape()) {
            throw DataError("checkpoint tensor " + p.name + " has shape " + stored.shape_str() +
                            ", model expects " + p.tensor.shape_str());
        }
        const auto src = stored.values();
        Tensor target = p.tensor;  // shared storage, non-const handle
        auto dst = target.raw_values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

std::vector<std::string> param_names(const ParamList& params) {
    std::vector<std::string> names;
    names.reserve(params.size());
    for (const auto& p : params) names.push_back(p.name);
    return names;
}

void check_header(const json& j, const char* format, const std::filesystem::path& where) {
    if (!j.contains("format") || j["format"] != format) {
        throw DataError(where.string() + ": not a " + format + " manifest");
    }
    if (!j.contains("version") || j["version"].get<int>() != kVersion) {
        throw DataError(where.string() + ": unsupported version");
    }
}

}  // namespace

void save_checkpoint(const EIModel& model, const std::filesystem::path& dir) {
    const ViTConfig& bc = model.backbone().config();
    const EIConfig& ec = model.config();

    json j;
    j["format"] = "ei-checkpoint";
    j["version"] = kVersion;
    json b;
    b["image_size"] = bc.image_size;
    b["patch_size"] = bc.patch_size;
    b["channels"] = bc.channels;
    b["dim"] = bc.d_model;
    b["layers"] = bc.layers;
    b["heads"] = bc.heads;
    b["mlp_ratio"] = bc.mlp_ratio;
    b["seed"] = bc.seed;
    j["backbone"] = b;
    json e;
    e["modalities"] = ec.modalities;
    e["classes"] = ec.classes;
    e["acquire_layer"] = ec.acquire_layer;
    e["insert_layer"] = ec.insert_layer;
    e["adapter_mode"] = to_string(ec.mode);
    e["ranks"] = ec.ranks;
    e["lambda1"] = ec.weights.lambda1;
    e["lambda2"] = ec.weights.lambda2;
    e["label_mode"] = label_mode_to_string(ec.label_mode);
    e["seed"] = ec.seed;
    j["ei"] = e;

    ParamList params = model.all_params();
    j["params"] = param_names(params);

    std::filesystem::create_directories(dir);
    write_params(params, dir / "params");
    write_json(j, dir / "manifest.json");
}

EIModel load_checkpoint(const std::filesystem::path& dir) {
    const json j = read_json(dir / "manifest.json");
    check_header(j, "ei-checkpoint", dir / "manifest.json");

    ViTConfig bc;
    const auto& b = j.at("backbone");
    bc.image_size = b.at("image_size").get<std::int64_t>();
    bc.patch_size = b.at("patch_size").get<std::int64_t>();
    bc.channels = b.at("channels").get<std::int64_t>();
    bc.d_model = b.at("dim").get<std::int64_t>();
    bc.layers = b.at("layers").get<std::int64_t>();
    bc.heads = b.at("heads").get<std::int64_t>();
    bc.mlp_ratio = b.at("mlp_ratio").get<std::int64_t>();
    bc.seed = b.at("seed").get<std::uint64_t>();

    EIConfig ec;
    const auto& e = j.at("ei");
    ec.modalities = e.at("modalities").get<std::int64_t>();
    ec.classes = e.at("classes").get<std::int64_t>();
    ec.acquire_layer = e.at("acquire_layer").get<std::int64_t>();
    ec.insert_layer = e.at("insert_layer").get<std::int64_t>();
    ec.mode = adapter_mode_from_string(e.at("adapter_mode").get<std::string>());
    ec.ranks = e.at("ranks").get<std::vector<std::int64_t>>();
    ec.weights.lambda1 = e.at("lambda1").get<double>();
    ec.weights.lambda2 = e.at("lambda2").get<double>();
    ec.label_mode = label_mode_from_string(e.at("label_mode").get<std::string>());
    ec.seed = e.at("seed").get<std::uint64_t>();

    EIModel model(bc, ec);
    ParamList params = model.all_params();
    const auto names = j.at("params").get<std::vector<std::string>>();
    if (names != param_names(params)) {
        throw DataError(dir.string() + ": parameter list does not match the model layout");
    }
    read_params(params, dir / "params");
    return model;
}

void save_unimodal(const UnimodalModel& model, AdapterMode mode, const std::filesystem::path& dir) {
    json j;
    j["format"] = "ei-adapters";
    j["version"] = kVersion;
    j["adapter_mode"] = to_string(mode);
    j["head"] = {{"classes", model.head.w.dim(0)}, {"dim", model.head.w.dim(1)}};

    ParamList params = model.trainable_params();
    j["params"] = param_names(params);

    std::filesystem::create_directories(dir);
    write_params(params, dir / "params");
    write_json(j, dir / "adapters.json");
}

UnimodalModel load_unimodal(const ViTBackbone& backbone, AdapterMode mode,
                            std::span<const std::int64_t> ranks, LabelMode label_mode,
                            const std::filesystem::path& dir) {
    const json j = read_json(dir / "adapters.json");
    check_header(j, "ei-adapters", dir / "adapters.json");
    if (adapter_mode_from_string(j.at("adapter_mode").get<std::string>()) != mode) {
        throw DataError(dir.string() + ": adapter mode mismatch");
    }
    UnimodalModel model;
    model.backbone = &backbone;
    model.label_mode = label_mode;
    model.adapters = init_adapter_set(backbone, mode, ranks, 0);
    const auto& h = j.at("head");
    model.head.w = Tensor::zeros({h.at("classes").get<std::int64_t>(),
                                  h.at("dim").get<std::int64_t>()}, true);
    model.head.b = Tensor::zeros({h.at("classes").get<std::int64_t>()}, true);
    ParamList params = model.trainable_params();
    if (j.at("params").get<std::vector<std::string>>() != param_names(params)) {
        throw DataError(dir.string() + ": parameter list does not match the model layout");
    }
    read_params(params, dir / "params");
    return model;
}

void save_prior(const ModalityPrior& prior, const std::filesystem::path& file) {
    json j;
    j["pi"] = prior.pi;
    j["source_scores"] = prior.source_scores;
    write_json(j, file);
}

ModalityPrior load_prior(const std::filesystem::path& file) {
    const json j = read_json(file);
    ModalityPrior prior;
    prior.pi = j.at("pi").get<std::vector<double>>();
    prior.source_scores = j.at("source_scores").get<std::vector<double>>();
    if (prior.pi.empty()) throw DataError(file.string() + ": empty prior");
    return prior;
}

void copy_param_values(const ParamList& src, const ParamList& dst) {
    if (src.size() != dst.size()) {
        throw ShapeError("parameter lists differ in length: " + std::to_string(src.size()) +
                         " vs " + std::to_string(dst.size()));
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].tensor.shape() != dst[i].tensor.shape()) {
            throw ShapeError("parameter " + dst[i].name + " has shape " +
                             dst[i].tensor.shape_str() + ", source has " +
                             src[i].tensor.shape_str());
        }
        const auto s = src[i].tensor.values();
        Tensor target = dst[i].tensor;
        auto d = target.raw_values();
        std::copy(s.begin(), s.end(), d.begin());
    }
}

}  // namespace ei
