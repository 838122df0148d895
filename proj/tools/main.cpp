#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ei/commands.hpp"
#include "ei/errors.hpp"

namespace {

std::vector<std::int64_t> parse_layer_list(const std::string& text) {
    std::vector<std::int64_t> out;
    std::string item;
    std::stringstream ss(text);
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const std::int64_t v = std::stoll(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ei::ConfigError("cannot parse layer list entry '" + item + "'");
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Early-intervention multimodal classification toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out = "out";
    std::string split = "test";
    std::string mode;
    std::string checkpoint;
    std::string sample;
    std::string acquire_list, insert_list;
    std::string simmap_out = "simmap.pgm";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::int64_t modality = 0;
    bool no_int = false, from_scratch = false, inject_fault = false;

    const auto add_common = [&](CLI::App* cmd, bool with_out) {
        cmd->add_option("--config", config_path, "key = value configuration file");
        if (with_out) cmd->add_option("--out", out, "output directory (default: out)");
        cmd->add_option("--seed", seed, "override every configured seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    auto* generate = app.add_subcommand("generate", "write a synthetic corpus to disk");
    add_common(generate, true);

    auto* pretrain = app.add_subcommand("pretrain", "pre-adapt one tower per modality");
    add_common(pretrain, true);
    pretrain->add_option("--mode", mode, "adapter mode: frozen, lora, lora_moe, mor");

    auto* train = app.add_subcommand("train", "joint training with early intervention");
    add_common(train, true);
    train->add_option("--mode", mode, "adapter mode: frozen, lora, lora_moe, mor");
    train->add_flag("--no-int", no_int, "disable intervention (insert at depth L)");
    train->add_flag("--from-scratch", from_scratch,
                    "skip pre-adaptation; prior from a fresh unimodal pass");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    add_common(eval, true);
    eval->add_option("--split", split, "train, val or test (default: test)");
    eval->add_option("--checkpoint", checkpoint, "checkpoint directory (default: OUT/train/checkpoint)");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the joint loss");
    add_common(gradcheck, false);
    gradcheck->add_flag("--inject-fault", inject_fault, "corrupt one backward kernel")
        ->group("");  // test hook, hidden from help

    auto* ablate = app.add_subcommand("ablate", "acquire x insert layer grid");
    add_common(ablate, true);
    ablate->add_option("--mode", mode, "adapter mode: frozen, lora, lora_moe, mor");
    ablate->add_option("--acquire-layers", acquire_list, "comma list, default 1..L");
    ablate->add_option("--insert-layers", insert_list, "comma list, default 0..L");
    ablate->add_flag("--from-scratch", from_scratch,
                     "skip pre-adaptation; prior from a fresh unimodal pass");

    auto* simmap = app.add_subcommand("simmap", "export a patch-to-CLS similarity map");
    add_common(simmap, false);
    simmap->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    simmap->add_option("--split", split, "split holding the sample (default: test)");
    simmap->add_option("--sample", sample, "sample id")->required();
    simmap->add_option("--modality", modality, "modality index (default: 0)");
    simmap->add_flag("--no-int", no_int, "render the map without intervention tokens");
    simmap->add_option("--out", simmap_out, "output PGM path (default: simmap.pgm)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        ei::RunConfig cfg;
        if (!config_path.empty()) cfg = ei::parse_config_file(config_path);
        if (seed_set) {
            cfg.backbone.seed = seed;
            cfg.train.seed = seed;
            cfg.synth.seed = seed;
        }
        if (!mode.empty()) cfg.ei.mode = ei::adapter_mode_from_string(mode);

        if (generate->parsed()) {
            ei::cmd_generate(cfg, out);
        } else if (pretrain->parsed()) {
            ei::cmd_pretrain(cfg, out);
        } else if (train->parsed()) {
            ei::cmd_train(cfg, out, no_int, from_scratch);
        } else if (eval->parsed()) {
            const std::string ckpt = checkpoint.empty() ? out + "/train/checkpoint" : checkpoint;
            ei::cmd_eval(cfg, out, split, ckpt);
        } else if (gradcheck->parsed()) {
            ei::cmd_gradcheck(cfg, inject_fault);
        } else if (ablate->parsed()) {
            ei::cmd_ablate(cfg, out, parse_layer_list(acquire_list), parse_layer_list(insert_list),
                           from_scratch);
        } else if (simmap->parsed()) {
            ei::cmd_simmap(cfg, checkpoint, split, sample, modality, no_int, simmap_out);
        }
    } catch (const ei::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ei::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 1;
    } catch (const ei::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ei::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
