#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vtg/config.hpp"
#include "vtg/decoder.hpp"
#include "vtg/diag.hpp"
#include "vtg/gradcheck.hpp"
#include "vtg/serialize.hpp"
#include "vtg/synth.hpp"

namespace vtg {

// Fresh decoder for the configured run, seeded from cfg.seed.
GroundingDecoder build_model(const RunConfig& cfg);

// CE plus the configured slot-alignment term for one sample. `sa` is always
// populated when slot maps exist (even at lambda = 0, where it is excluded
// from `total` and carries no gradient); it is 0 without slot adapters.
struct LossParts {
    Tensor total;
    Tensor ce;
    double sa = 0.0;
};
LossParts composed_loss(const GroundingDecoder& model, const VideoSample& sample,
                        const RunConfig& cfg);

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
    std::size_t tune_steps = 0;
    std::vector<double> epoch_total_mean;   // per fine-tune epoch
    std::vector<double> epoch_sa_mean;
    double first_sa = 0.0, last_sa = 0.0;
};

// Two phases into cfg.output_dir: pretrain the toy base for cfg.base_steps
// batches (CE only), freeze it, then fine-tune adapters + LoRA for
// cfg.epochs over the synthetic training set with CE + lambda*SA.
// Writes config.json, train_log.jsonl, and model.ckpt (refreshed every
// checkpoint_every steps, so a numeric abort retains the last good state).
TrainResult train(const RunConfig& cfg);

// Rebuild a decoder from a checkpoint; shapes must match the embedded config.
struct LoadedModel {
    RunConfig cfg;
    GroundingDecoder model;
};
LoadedModel load_model(const std::string& checkpoint_path);

// Greedy decode of one sample plus the parsed window (inverted endpoints
// swapped, both clamped into [0, last frame time]); pred is empty when the
// text does not parse.  `evaluate` and the perturbation protocol share this.
struct DecodedWindow {
    std::string text;
    Prediction pred;
};
DecodedWindow decode_window(const GroundingDecoder& model, const VideoSample& sample);

struct EvalResult {
    std::size_t n = 0;
    double r1_at_05 = 0.0;
    double r1_at_07 = 0.0;
    double miou = 0.0;
    double parse_fail_rate = 0.0;
};

// Greedy-decode each sample, parse the window (inverted endpoints swapped),
// clamp into [0, last frame time], and score. Optionally writes per-sample
// JSON lines {sample_id, text, t_start, t_end, parse_ok, gt_start, gt_end}.
EvalResult evaluate(const GroundingDecoder& model, const std::vector<SynthVideo>& videos,
                    const std::string& per_sample_path = "");

// Pooled hidden representation (exit of the last adapter layer) per video.
ReprSet pooled_reprs(const GroundingDecoder& model, const std::vector<SynthVideo>& videos);

// Per-frame argmax slot maps: <prefix>_frame<t>.pgm (square grid when N is a
// perfect square, else one row) plus <prefix>.csv with frame,token,slot rows.
void write_slot_maps(const std::string& prefix, const Tensor& attn);

// Finite-difference check of the full composed loss (CE + lambda*SA through
// decoder + adapters + LoRA) on a toy instance. max_per_param = 0 checks
// every element of every parameter.
GradCheckReport run_composed_gradcheck(std::uint64_t seed, std::size_t max_per_param = 0);

} // namespace vtg
