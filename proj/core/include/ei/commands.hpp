#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ei/config.hpp"

namespace ei {

// Subcommand bodies. Errors surface as the shared exception taxonomy; the
// CLI front end maps them onto exit codes.

void cmd_generate(RunConfig cfg, const std::filesystem::path& out);

// Trains one (adapter set, head) pair per modality, writes them under
// out/pretrain/modality<i>/ and the gating prior to out/prior.json.
void cmd_pretrain(RunConfig cfg, const std::filesystem::path& out);

// Joint training. Reads the pretraining outputs from `out` unless
// from_scratch is set (then the prior comes from a fresh unimodal pass).
// Writes out/train/{config.txt, train_log.jsonl, checkpoint/, metrics.json}.
void cmd_train(RunConfig cfg, const std::filesystem::path& out, bool no_int, bool from_scratch);

// Evaluates a checkpoint on a named split; writes
// out/eval/metrics_<split>.json.
void cmd_eval(RunConfig cfg, const std::filesystem::path& out, const std::string& split,
              const std::filesystem::path& checkpoint);

// Finite-difference check of the full joint loss on a micro model in
// 64-bit mode. Prints the worst coordinate; throws NumericError above
// tolerance. inject_fault corrupts one backward kernel to prove the
// check can fail.
void cmd_gradcheck(RunConfig cfg, bool inject_fault);

// Trains and evaluates one model per (acquire, insert) cell with a shared
// seed; writes out/ablate/ablate.json.
void cmd_ablate(RunConfig cfg, const std::filesystem::path& out,
                std::vector<std::int64_t> acquire_layers, std::vector<std::int64_t> insert_layers,
                bool from_scratch);

// Patch-to-CLS similarity map for one sample and modality as a binary PGM.
void cmd_simmap(RunConfig cfg, const std::filesystem::path& checkpoint, const std::string& split,
                const std::string& sample_id, std::int64_t modality, bool no_int,
                const std::filesystem::path& out_file);

}  // namespace ei
