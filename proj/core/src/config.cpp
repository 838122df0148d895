#include "ei/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ei/errors.hpp"

namespace ei {

namespace {

std::string trim(std::string_view s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string_view::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return std::string(s.substr(a, b - a + 1));
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const std::int64_t x = std::stoll(v, &used);
        if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as an integer");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] != '-') {
            const std::uint64_t x = std::stoull(v, &used);
            if (used == v.size()) return x;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a seed");
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
}

std::vector<std::int64_t> parse_ranks(const std::string& key, const std::string& v) {
    std::vector<std::int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty rank list");
    return out;
}

// Shortest round-trip formatting, so 0.3 echoes as "0.3".
std::string fmt(double v) { return nlohmann::json(v).dump(); }

std::string fmt_ranks(const std::vector<std::int64_t>& ranks) {
    std::string s;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(ranks[i]);
    }
    return s;
}

}  // namespace

void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "backbone.image_size") cfg.backbone.image_size = parse_int(key, value);
    else if (key == "backbone.patch_size") cfg.backbone.patch_size = parse_int(key, value);
    else if (key == "backbone.channels") cfg.backbone.channels = parse_int(key, value);
    else if (key == "backbone.dim") cfg.backbone.d_model = parse_int(key, value);
    else if (key == "backbone.layers") cfg.backbone.layers = parse_int(key, value);
    else if (key == "backbone.heads") cfg.backbone.heads = parse_int(key, value);
    else if (key == "backbone.mlp_ratio") cfg.backbone.mlp_ratio = parse_int(key, value);
    else if (key == "backbone.seed") cfg.backbone.seed = parse_u64(key, value);
    else if (key == "ei.modalities") cfg.ei.modalities = parse_int(key, value);
    else if (key == "ei.classes") cfg.ei.classes = parse_int(key, value);
    else if (key == "ei.acquire_layer") cfg.ei.acquire_layer = parse_int(key, value);
    else if (key == "ei.insert_layer") cfg.ei.insert_layer = parse_int(key, value);
    else if (key == "ei.adapter_mode") cfg.ei.mode = adapter_mode_from_string(value);
    else if (key == "ei.ranks") cfg.ei.ranks = parse_ranks(key, value);
    else if (key == "ei.lambda1") cfg.ei.weights.lambda1 = parse_double(key, value);
    else if (key == "ei.lambda2") cfg.ei.weights.lambda2 = parse_double(key, value);
    else if (key == "ei.label_mode") cfg.ei.label_mode = label_mode_from_string(value);
    else if (key == "train.batch_size") cfg.train.batch_size = parse_int(key, value);
    else if (key == "train.max_epochs") cfg.train.max_epochs = parse_int(key, value);
    else if (key == "train.patience") cfg.train.patience = parse_int(key, value);
    else if (key == "train.lr_min") cfg.train.lr_min = parse_double(key, value);
    else if (key == "train.lr_max") cfg.train.lr_max = parse_double(key, value);
    else if (key == "train.momentum") cfg.train.momentum = parse_double(key, value);
    else if (key == "train.weight_decay") cfg.train.weight_decay = parse_double(key, value);
    else if (key == "train.warmup_frac") cfg.train.warmup_frac = parse_double(key, value);
    else if (key == "train.seed") cfg.train.seed = parse_u64(key, value);
    else if (key == "data.manifest") cfg.data_manifest = value;
    else if (key == "data.task") cfg.synth.task = value;
    else if (key == "data.train") cfg.synth.train_count = parse_int(key, value);
    else if (key == "data.val") cfg.synth.val_count = parse_int(key, value);
    else if (key == "data.test") cfg.synth.test_count = parse_int(key, value);
    else if (key == "data.noise_std") cfg.synth.noise_std = parse_double(key, value);
    else if (key == "data.seed") cfg.synth.seed = parse_u64(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config_text(std::string_view text) {
    RunConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        apply_config_kv(cfg, key, value);
    }
    return cfg;
}

RunConfig parse_config_file(const std::filesystem::path& file) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file " + file.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

void RunConfig::finalize() {
    ei.seed = train.seed;
    synth.modalities = ei.modalities;
    synth.classes = ei.classes;
    synth.image_size = backbone.image_size;
    backbone.validate();
    train.validate();
    if (data_manifest.empty()) synth.validate();
}

std::string RunConfig::echo() const {
    std::ostringstream out;
    out << "backbone.image_size = " << backbone.image_size << "\n";
    out << "backbone.patch_size = " << backbone.patch_size << "\n";
    out << "backbone.channels = " << backbone.channels << "\n";
    out << "backbone.dim = " << backbone.d_model << "\n";
    out << "backbone.layers = " << backbone.layers << "\n";
    out << "backbone.heads = " << backbone.heads << "\n";
    out << "backbone.mlp_ratio = " << backbone.mlp_ratio << "\n";
    out << "backbone.seed = " << backbone.seed << "\n";
    out << "ei.modalities = " << ei.modalities << "\n";
    out << "ei.classes = " << ei.classes << "\n";
    out << "ei.acquire_layer = " << ei.acquire_layer << "\n";
    out << "ei.insert_layer = " << ei.insert_layer << "\n";
    out << "ei.adapter_mode = " << to_string(ei.mode) << "\n";
    out << "ei.ranks = " << fmt_ranks(ei.ranks.empty() ? default_ranks(ei.mode) : ei.ranks) << "\n";
    out << "ei.lambda1 = " << fmt(ei.weights.lambda1) << "\n";
    out << "ei.lambda2 = " << fmt(ei.weights.lambda2) << "\n";
    out << "ei.label_mode = " << label_mode_to_string(ei.label_mode) << "\n";
    out << "train.batch_size = " << train.batch_size << "\n";
    out << "train.max_epochs = " << train.max_epochs << "\n";
    out << "train.patience = " << train.patience << "\n";
    out << "train.lr_min = " << fmt(train.lr_min) << "\n";
    out << "train.lr_max = " << fmt(train.lr_max) << "\n";
    out << "train.momentum = " << fmt(train.momentum) << "\n";
    out << "train.weight_decay = " << fmt(train.weight_decay) << "\n";
    out << "train.warmup_frac = " << fmt(train.warmup_frac) << "\n";
    out << "train.seed = " << train.seed << "\n";
    if (!data_manifest.empty()) out << "data.manifest = " << data_manifest << "\n";
    out << "data.task = " << synth.task << "\n";
    out << "data.train = " << synth.train_count << "\n";
    out << "data.val = " << synth.val_count << "\n";
    out << "data.test = " << synth.test_count << "\n";
    out << "data.noise_std = " << fmt(synth.noise_std) << "\n";
    out << "data.seed = " << synth.seed << "\n";
    return out.str();
}

}  // namespace ei
