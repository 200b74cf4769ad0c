#pragma once

#include <string>
#include <vector>

#include "vtg/decoder.hpp"
#include "vtg/synth.hpp"

namespace vtg {

// Where the alignment loss reads slot-attention maps from.
enum class SaPlacement { last_adapter_layer, all_adapter_layers };

// One flat configuration for a full run. Field defaults double as the
// reference hyperparameters; tests and the CLI override them per experiment.
// Wired (non-key) fields: `decoder.adapter.d_host` follows `d_model`,
// `synth.feat_dim` follows `d_feat`, and `synth.seed` follows `seed`;
// adapter keys (`d`, `n_slots`, ...) route into `decoder.adapter`.
struct RunConfig {
    DecoderConfig decoder;          // adapter: d = 512, n_slots = 4, n_iters = 3, n_heads = 8
    SynthSpec synth;

    double lambda = 0.1;            // weight of the slot-alignment loss
    SaPlacement sa_placement = SaPlacement::last_adapter_layer;
    AdapterType adapter_type = AdapterType::slot;

    std::size_t epochs = 5;
    double lr = 5e-5;               // fine-tune learning rate (adapters + LoRA)
    double base_lr = 1e-3;          // toy-base pretrain learning rate
    std::size_t base_steps = 500;   // toy-base pretrain steps before freezing
    std::string base_checkpoint;    // warm-start the frozen base from this checkpoint
                                    // instead of pretraining (dims must match)
    double weight_decay = 0.01;
    std::size_t batch_size = 1;     // gradients accumulate over the batch
    std::uint64_t seed = 0;
    std::string output_dir;

    std::size_t n_train_videos = 2000;
    std::size_t n_eval_videos = 200;
    double ood_bias_scale = 1.0;    // domain shift applied to OOD eval sets
    bool ood_rotate = true;
    std::size_t checkpoint_every = 0;   // 0: checkpoint only at the end

    void validate() const;          // ConfigError naming the offending key
    bool operator==(const RunConfig&) const = default;
};

// Assign one `key=value` pair; throws ConfigError on unknown keys or
// unparseable values, always naming the key.
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);

// Defaults -> optional config text (flat key=value lines or a JSON object)
// -> `--set key=value` overrides, then validate.
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides);
RunConfig parse_config_file(const std::string& path, const std::vector<std::string>& overrides);

// Canonical JSON echo of every key; parse_config_text(echo_config(c), {}) == c.
std::string echo_config(const RunConfig& cfg);

std::string to_string(SaPlacement p);
std::string to_string(AdapterType t);
std::string to_string(ReconMode m);

} // namespace vtg
