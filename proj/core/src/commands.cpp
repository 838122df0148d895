#include "ei/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "ei/checkpoint.hpp"
#include "ei/errors.hpp"
#include "ei/gradcheck.hpp"

namespace ei {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Dataset corpus_split(const RunConfig& cfg, std::string_view split) {
    if (!cfg.data_manifest.empty()) return load_split(cfg.data_manifest, split);
    return synth_split(cfg.synth, split);
}

void write_text(const fs::path& file, std::string_view text) {
    fs::create_directories(file.parent_path());
    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + file.string());
    f << text;
    if (!f) throw DataError("short write to " + file.string());
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.echo());
}

ParamList adapter_params(const AdapterSet& set) {
    ParamList out;
    set.collect_params("a", out);
    return out;
}

std::uint64_t pretrain_seed(const RunConfig& cfg, std::int64_t modality) {
    return Rng::derive(cfg.ei.seed, "pretrain" + std::to_string(modality));
}

// Pre-adapts one tower per modality (epochs = 0 leaves them fresh) and
// scores each on the training set for the gating prior.
struct Towers {
    std::vector<UnimodalModel> models;
    ModalityPrior prior;
};

Towers build_towers(const ViTBackbone& backbone, const RunConfig& cfg, const Dataset& train_ds,
                    std::int64_t epochs, bool verbose) {
    Towers t;
    std::vector<double> maps;
    TrainConfig tc = cfg.train;
    tc.max_epochs = epochs;
    const auto ranks = cfg.ei.ranks.empty() ? default_ranks(cfg.ei.mode) : cfg.ei.ranks;
    for (std::int64_t m = 0; m < cfg.ei.modalities; ++m) {
        UnimodalModel um = pretrain_unimodal(backbone, train_ds, m, cfg.ei.mode, ranks, tc,
                                             cfg.ei.label_mode, pretrain_seed(cfg, m));
        const double score = unimodal_map(um, train_ds, m);
        if (verbose) {
            std::cout << "modality " << m << ": train mAP " << score << "\n";
        }
        maps.push_back(score);
        t.models.push_back(std::move(um));
    }
    t.prior = prior_from_scores(maps);
    return t;
}

void seed_from_pretrained(EIModel& model, const UnimodalModel& tower, std::int64_t modality) {
    copy_param_values(adapter_params(tower.adapters), adapter_params(model.aux_adapters(modality)));
    copy_param_values(adapter_params(tower.adapters),
                      adapter_params(model.primary_adapters(modality)));
}

json epoch_line(std::int64_t epoch, const EpochStats& s, double val_map) {
    json j;
    j["epoch"] = epoch;
    j["l_p"] = s.l_p;
    j["l_aa"] = s.l_aa;
    j["l_ag"] = s.l_ag;
    j["l_total"] = s.l_total;
    j["lr"] = s.lr;
    j["val_map"] = val_map;
    return j;
}

struct JointOutcome {
    TrainResult result;
    EvalReport val_report;
};

JointOutcome run_joint_training(EIModel& model, const RunConfig& cfg, const Dataset& train_ds,
                                const Dataset& val_ds, const ModalityPrior& prior,
                                std::ostream* log, bool verbose) {
    JointOutcome out;
    out.result = train_model(model, train_ds, val_ds, prior, cfg.train,
                             [&](std::int64_t e, const EpochStats& s, double vmap) {
                                 if (log) *log << epoch_line(e, s, vmap).dump() << std::endl;
                                 if (verbose) {
                                     std::cout << "epoch " << e << ": l_total=" << s.l_total
                                               << " val_map=" << vmap << " lr=" << s.lr << "\n";
                                 }
                             });
    out.val_report = evaluate_model(model, val_ds);
    return out;
}

void write_pgm(const Tensor& sim, const fs::path& file) {
    const std::int64_t h = sim.dim(0), w = sim.dim(1);
    std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (double v : sim.values()) {
        v = std::clamp(v, -1.0, 1.0);
        buf.push_back(static_cast<char>(
            static_cast<unsigned char>(std::lround((v + 1.0) / 2.0 * 255.0))));
    }
    write_text(file, buf);
}

}  // namespace

void cmd_generate(RunConfig cfg, const fs::path& out) {
    cfg.finalize();
    if (!cfg.data_manifest.empty()) {
        throw ConfigError("generate synthesizes a corpus; drop data.manifest from the config");
    }
    generate_synthetic(cfg.synth, out);
    echo_config(cfg, out);
    std::cout << "wrote " << (out / "manifest.jsonl").string() << "\n";
}

void cmd_pretrain(RunConfig cfg, const fs::path& out) {
    cfg.finalize();
    const Dataset train_ds = corpus_split(cfg, "train");
    ViTBackbone backbone(cfg.backbone);
    Towers towers = build_towers(backbone, cfg, train_ds, cfg.train.max_epochs, true);
    for (std::int64_t m = 0; m < cfg.ei.modalities; ++m) {
        save_unimodal(towers.models[static_cast<std::size_t>(m)], cfg.ei.mode,
                      out / "pretrain" / ("modality" + std::to_string(m)));
    }
    save_prior(towers.prior, out / "prior.json");
    echo_config(cfg, out / "pretrain");
    std::cout << "wrote " << (out / "prior.json").string() << "\n";
}

void cmd_train(RunConfig cfg, const fs::path& out, bool no_int, bool from_scratch) {
    if (no_int) cfg.ei.insert_layer = cfg.backbone.layers;
    cfg.finalize();
    const Dataset train_ds = corpus_split(cfg, "train");
    const Dataset val_ds = corpus_split(cfg, "val");

    EIModel model(cfg.backbone, cfg.ei);
    ModalityPrior prior;
    if (from_scratch) {
        prior = build_towers(model.backbone(), cfg, train_ds, 0, false).prior;
    } else {
        const auto ranks = cfg.ei.ranks.empty() ? default_ranks(cfg.ei.mode) : cfg.ei.ranks;
        for (std::int64_t m = 0; m < cfg.ei.modalities; ++m) {
            UnimodalModel tower =
                load_unimodal(model.backbone(), cfg.ei.mode, ranks, cfg.ei.label_mode,
                              out / "pretrain" / ("modality" + std::to_string(m)));
            seed_from_pretrained(model, tower, m);
        }
        prior = load_prior(out / "prior.json");
    }

    const fs::path train_dir = out / "train";
    fs::create_directories(train_dir);
    std::ofstream log(train_dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw DataError("cannot open " + (train_dir / "train_log.jsonl").string());

    JointOutcome outcome = run_joint_training(model, cfg, train_ds, val_ds, prior, &log, true);
    log.close();

    save_checkpoint(model, train_dir / "checkpoint");
    write_text(train_dir / "metrics.json", outcome.val_report.to_json() + "\n");
    echo_config(cfg, train_dir);
    std::cout << "best epoch " << outcome.result.best_epoch << " (val mAP "
              << outcome.result.best_val_map << "), checkpoint at "
              << (train_dir / "checkpoint").string() << "\n";
}

void cmd_eval(RunConfig cfg, const fs::path& out, const std::string& split,
              const fs::path& checkpoint) {
    cfg.finalize();
    EIModel model = load_checkpoint(checkpoint);
    const Dataset ds = corpus_split(cfg, split);
    EvalReport report = evaluate_model(model, ds);
    const fs::path eval_dir = out / "eval";
    write_text(eval_dir / ("metrics_" + split + ".json"), report.to_json() + "\n");
    echo_config(cfg, eval_dir);
    std::cout << "split " << split << ": mAP "
              << (report.map ? std::to_string(*report.map) : std::string("undefined")) << "\n";
}

void cmd_gradcheck(RunConfig cfg, bool inject_fault) {
    // Micro profile: big enough to exercise every op, small enough for a
    // finite-difference sweep over all trainable tensors.
    cfg.backbone.image_size = 8;
    cfg.backbone.patch_size = 4;
    cfg.backbone.channels = 1;
    cfg.backbone.d_model = 16;
    cfg.backbone.layers = 2;
    cfg.backbone.heads = 4;
    cfg.backbone.mlp_ratio = 4;
    cfg.ei.modalities = 2;
    cfg.ei.classes = 2;
    cfg.synth.task = "xor";
    cfg.finalize();

    PrecisionScope precision_guard(Precision::f64);
    SyntheticSpec spec = cfg.synth;
    spec.train_count = 2;
    const Dataset batch = synth_split(spec, "train");

    EIModel model(cfg.backbone, cfg.ei);
    const ModalityPrior prior = prior_from_scores({1.0, 0.0});
    const LossWeights weights = cfg.ei.weights;

    const auto loss_fn = [&]() {
        Tensor total;
        for (const auto& s : batch.samples) {
            Tensor l = model.compute_losses(s.tensors, s.label, prior, weights).l_total;
            total = total.defined() ? add(total, l) : l;
        }
        return scale(total, 1.0 / static_cast<double>(batch.samples.size()));
    };

    // Check at a generic parameter point. At the stock initialization many
    // coordinates (A and router behind zero B blocks, gate-shift
    // directions) have an exactly zero derivative, where the relative
    // error of a finite difference is all rounding noise.
    const ParamList params = model.trainable_params();
    Rng pr(Rng::derive(cfg.train.seed, "gradcheck_point"));
    for (const auto& p : params) {
        Tensor t = p.tensor;
        for (auto& v : t.raw_values()) v = pr.normal(0.0, 0.1);
    }

    debug::set_backward_fault(inject_fault);
    GradCheckReport report =
        gradcheck(loss_fn, params, 5e-4, Rng::derive(cfg.train.seed, "gradcheck"), 32);
    debug::set_backward_fault(false);

    constexpr double kTol = 1e-4;
    std::cout << "gradcheck: max_rel_err=" << report.max_rel_err << " over "
              << report.coords_checked << " coordinates (worst " << report.worst_param << ")\n";
    if (!report.pass(kTol)) {
        std::cout << "gradcheck: FAIL (tolerance " << kTol << ")\n";
        throw NumericError("gradcheck failed: max_rel_err=" + std::to_string(report.max_rel_err) +
                           " at " + report.worst_param);
    }
    std::cout << "gradcheck: PASS (tolerance " << kTol << ")\n";
}

void cmd_ablate(RunConfig cfg, const fs::path& out, std::vector<std::int64_t> acquire_layers,
                std::vector<std::int64_t> insert_layers, bool from_scratch) {
    cfg.finalize();
    const std::int64_t layers = cfg.backbone.layers;
    if (acquire_layers.empty()) {
        for (std::int64_t a = 1; a <= layers; ++a) acquire_layers.push_back(a);
    }
    if (insert_layers.empty()) {
        for (std::int64_t i = 0; i <= layers; ++i) insert_layers.push_back(i);
    }
    for (std::int64_t a : acquire_layers) {
        if (a < 1 || a > layers) {
            throw ConfigError("acquire layer " + std::to_string(a) + " outside [1, " +
                              std::to_string(layers) + "]");
        }
    }
    for (std::int64_t i : insert_layers) {
        if (i < 0 || i > layers) {
            throw ConfigError("insert layer " + std::to_string(i) + " outside [0, " +
                              std::to_string(layers) + "]");
        }
    }

    const Dataset train_ds = corpus_split(cfg, "train");
    const Dataset val_ds = corpus_split(cfg, "val");
    const Dataset test_ds = corpus_split(cfg, "test");

    // Towers do not depend on acquire/insert, so one pre-adaptation pass
    // serves every cell; cells then differ only in the layer choice.
    ViTBackbone backbone(cfg.backbone);
    Towers towers =
        build_towers(backbone, cfg, train_ds, from_scratch ? 0 : cfg.train.max_epochs, false);

    json grid = json::array();
    for (std::int64_t a : acquire_layers) {
        for (std::int64_t i : insert_layers) {
            RunConfig cell = cfg;
            cell.ei.acquire_layer = a;
            cell.ei.insert_layer = i;
            EIModel model(cell.backbone, cell.ei);
            if (!from_scratch) {
                for (std::int64_t m = 0; m < cell.ei.modalities; ++m) {
                    seed_from_pretrained(model, towers.models[static_cast<std::size_t>(m)], m);
                }
            }
            run_joint_training(model, cell, train_ds, val_ds, towers.prior, nullptr, false);
            EvalReport report = evaluate_model(model, test_ds);
            json entry;
            entry["acquire"] = a;
            entry["insert"] = i;
            entry["config"] = cell.echo();
            entry["metrics"] = json::parse(report.to_json());
            grid.push_back(entry);
            std::cout << "acquire " << a << ", insert " << i << ": test mAP "
                      << (report.map ? std::to_string(*report.map) : std::string("undefined"))
                      << "\n";
        }
    }
    json j;
    j["grid"] = grid;
    const fs::path ablate_dir = out / "ablate";
    write_text(ablate_dir / "ablate.json", j.dump(2) + "\n");
    echo_config(cfg, ablate_dir);
}

void cmd_simmap(RunConfig cfg, const fs::path& checkpoint, const std::string& split,
                const std::string& sample_id, std::int64_t modality, bool no_int,
                const fs::path& out_file) {
    cfg.finalize();
    EIModel model = load_checkpoint(checkpoint);
    const Dataset ds = corpus_split(cfg, split);
    const auto it = std::find_if(ds.samples.begin(), ds.samples.end(),
                                 [&](const Sample& s) { return s.id == sample_id; });
    if (it == ds.samples.end()) {
        throw DataError("sample '" + sample_id + "' not found in split '" + split + "'");
    }
    if (modality < 0 || modality >= model.config().modalities) {
        throw ConfigError("modality " + std::to_string(modality) + " outside [0, " +
                          std::to_string(model.config().modalities - 1) + "]");
    }

    const ViTBackbone& bb = model.backbone();
    const std::int64_t layers = bb.config().layers;
    const std::int64_t insert = no_int ? layers : model.config().insert_layer;
    const AdapterSet& set = model.primary_adapters(modality);

    TokenSequence seq =
        bb.patchify_embed(it->tensors[static_cast<std::size_t>(modality)]);
    seq = bb.forward_segment(seq, &set, 0, insert);
    if (!no_int) {
        auto aux = model.aux_forward(it->tensors);
        seq = ViTBackbone::append_tokens(seq, model.generate_int_tokens(aux, modality));
    }
    seq = bb.forward_segment(seq, &set, insert, layers);

    write_pgm(bb.cls_patch_similarity(seq), out_file);
    std::cout << "wrote " << out_file.string() << "\n";
}

}  // namespace ei
