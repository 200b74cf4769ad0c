#include "vtg/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vtg/errors.hpp"

namespace vtg {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& why) {
    throw ConfigError(key + ": " + why);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    if (!v.empty() && v[0] == '-') bad(key, "must be a non-negative integer, got '" + v + "'");
    try {
        std::size_t used = 0;
        unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) bad(key, "trailing characters in integer '" + v + "'");
        return static_cast<std::size_t>(x);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad(key, "not an integer: '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) bad(key, "trailing characters in number '" + v + "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad(key, "not a number: '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad(key, "expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::string body = trim(v);
    if (body.empty()) return out;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
    return out;
}

// Re-wire derived fields after any batch of key assignments.
void wire(RunConfig& cfg) {
    cfg.decoder.adapter.d_host = cfg.decoder.d_model;
    cfg.synth.feat_dim = cfg.decoder.d_feat;
    cfg.synth.seed = cfg.seed;
    cfg.synth.shift.bias_scale = cfg.ood_bias_scale;
    cfg.synth.shift.rotate = cfg.ood_rotate;
    cfg.synth.shift.enabled = false;   // flipped per eval set, never configured
}

} // namespace

std::string to_string(SaPlacement p) {
    return p == SaPlacement::last_adapter_layer ? "last_adapter_layer" : "all_adapter_layers";
}

std::string to_string(AdapterType t) {
    switch (t) {
        case AdapterType::slot: return "slot";
        case AdapterType::self_attention: return "self_attention";
        default: return "none";
    }
}

std::string to_string(ReconMode m) {
    return m == ReconMode::cross_attention ? "cross_attention" : "repeat_project";
}

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
    AdapterConfig& a = cfg.decoder.adapter;
    DecoderConfig& dec = cfg.decoder;
    SynthSpec& syn = cfg.synth;

    if (key == "d") a.d = parse_size(key, value);
    else if (key == "n_slots") a.n_slots = parse_size(key, value);
    else if (key == "n_iters") a.n_iters = parse_size(key, value);
    else if (key == "n_heads") a.n_heads = parse_size(key, value);
    else if (key == "eps_token_norm") a.eps_token_norm = parse_double(key, value);
    else if (key == "recon_mode") {
        if (value == "cross_attention") a.recon_mode = ReconMode::cross_attention;
        else if (value == "repeat_project") a.recon_mode = ReconMode::repeat_project;
        else bad(key, "expected cross_attention|repeat_project, got '" + value + "'");
    }

    else if (key == "n_layers") dec.n_layers = parse_size(key, value);
    else if (key == "d_model") dec.d_model = parse_size(key, value);
    else if (key == "dec_heads") dec.n_heads = parse_size(key, value);
    else if (key == "d_feat") dec.d_feat = parse_size(key, value);
    else if (key == "adapter_layers") dec.adapter_layers = parse_list(key, value);
    else if (key == "lora_layers") dec.lora_layers = parse_list(key, value);
    else if (key == "lora_rank") dec.lora_rank = parse_size(key, value);
    else if (key == "lora_alpha") dec.lora_alpha = parse_double(key, value);
    else if (key == "max_positions") dec.max_positions = parse_size(key, value);
    else if (key == "max_decode_len") dec.max_decode_len = parse_size(key, value);

    else if (key == "t_frames") syn.t_frames = parse_size(key, value);
    else if (key == "n_tokens") syn.n_tokens = parse_size(key, value);
    else if (key == "n_entities") syn.n_entities = parse_size(key, value);
    else if (key == "separation") syn.separation = parse_double(key, value);
    else if (key == "frame_dt") syn.frame_dt = parse_double(key, value);

    else if (key == "lambda") cfg.lambda = parse_double(key, value);
    else if (key == "sa_placement") {
        if (value == "last_adapter_layer") cfg.sa_placement = SaPlacement::last_adapter_layer;
        else if (value == "all_adapter_layers") cfg.sa_placement = SaPlacement::all_adapter_layers;
        else bad(key, "expected last_adapter_layer|all_adapter_layers, got '" + value + "'");
    } else if (key == "adapter_type") {
        if (value == "slot") cfg.adapter_type = AdapterType::slot;
        else if (value == "self_attention") cfg.adapter_type = AdapterType::self_attention;
        else if (value == "none") cfg.adapter_type = AdapterType::none;
        else bad(key, "expected slot|self_attention|none, got '" + value + "'");
    }

    else if (key == "epochs") cfg.epochs = parse_size(key, value);
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "base_lr") cfg.base_lr = parse_double(key, value);
    else if (key == "base_steps") cfg.base_steps = parse_size(key, value);
    else if (key == "base_checkpoint") cfg.base_checkpoint = value;
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_size(key, value);
    else if (key == "seed") {
        if (!value.empty() && value[0] == '-') bad(key, "must be non-negative");
        try {
            std::size_t used = 0;
            cfg.seed = std::stoull(value, &used);
            if (used != value.size()) bad(key, "trailing characters in integer '" + value + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            bad(key, "not an integer: '" + value + "'");
        }
    } else if (key == "output_dir") cfg.output_dir = value;

    else if (key == "n_train_videos") cfg.n_train_videos = parse_size(key, value);
    else if (key == "n_eval_videos") cfg.n_eval_videos = parse_size(key, value);
    else if (key == "ood_bias_scale") cfg.ood_bias_scale = parse_double(key, value);
    else if (key == "ood_rotate") cfg.ood_rotate = parse_bool(key, value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_size(key, value);

    else throw ConfigError("unknown config key: " + key);
}

void RunConfig::validate() const {
    if (decoder.adapter.d_host != decoder.d_model)
        throw ConfigError("d_model: adapter d_host is wired to d_model (" +
                          std::to_string(decoder.adapter.d_host) + " vs " +
                          std::to_string(decoder.d_model) + ")");
    if (synth.feat_dim != decoder.d_feat)
        throw ConfigError("d_feat: synth feature width is wired to d_feat (" +
                          std::to_string(synth.feat_dim) + " vs " + std::to_string(decoder.d_feat) +
                          ")");
    if (decoder.n_heads == 0 || decoder.d_model % decoder.n_heads != 0)
        throw ConfigError("dec_heads: must be >= 1 and divide d_model");
    decoder.adapter.validate();
    decoder.validate();
    synth.validate();

    if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("lambda: must be finite and >= 0");
    if (lambda > 0.0 && adapter_type != AdapterType::slot)
        throw ConfigError("lambda: a positive alignment weight requires adapter_type=slot");
    if (lambda > 0.0 && decoder.adapter_layers.empty())
        throw ConfigError("lambda: a positive alignment weight requires at least one adapter layer");
    if (adapter_type == AdapterType::none && decoder.lora_layers.empty())
        throw ConfigError(
            "adapter_type: 'none' with empty lora_layers leaves no trainable parameters");
    if (adapter_type != AdapterType::none && decoder.adapter_layers.empty())
        throw ConfigError("adapter_layers: must be non-empty when adapter_type != none");

    if (!std::isfinite(lr) || lr <= 0.0) throw ConfigError("lr: must be finite and > 0");
    if (!std::isfinite(base_lr) || base_lr <= 0.0)
        throw ConfigError("base_lr: must be finite and > 0");
    if (!std::isfinite(weight_decay) || weight_decay < 0.0)
        throw ConfigError("weight_decay: must be finite and >= 0");
    if (batch_size == 0) throw ConfigError("batch_size: must be >= 1");
    if (n_train_videos == 0) throw ConfigError("n_train_videos: must be >= 1");
    if (n_eval_videos == 0) throw ConfigError("n_eval_videos: must be >= 1");
    if (!std::isfinite(ood_bias_scale) || ood_bias_scale < 0.0)
        throw ConfigError("ood_bias_scale: must be finite and >= 0");
}

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
    RunConfig cfg;
    std::string body = trim(text);
    if (!body.empty() && body[0] == '{') {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw ConfigError("config JSON must be an object");
        for (const auto& [key, val] : j.items()) {
            std::string s;
            if (val.is_string()) {
                s = val.get<std::string>();
            } else if (val.is_array()) {
                for (std::size_t i = 0; i < val.size(); ++i) {
                    if (i) s += ",";
                    s += val[i].dump();
                }
            } else {
                s = val.dump();   // numbers/bools round-trip exactly through dump()
            }
            config_set(cfg, key, s);
        }
    } else if (!body.empty()) {
        std::stringstream ss(body);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(ss, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            std::size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) +
                                  " is not key=value: '" + t + "'");
            config_set(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        }
    }
    for (const std::string& ov : overrides) {
        std::size_t eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + ov + "'");
        config_set(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    }
    wire(cfg);
    cfg.validate();
    return cfg;
}

RunConfig parse_config_file(const std::string& path, const std::vector<std::string>& overrides) {
    if (path.empty()) return parse_config_text("", overrides);
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), overrides);
}

std::string echo_config(const RunConfig& cfg) {
    nlohmann::json j;
    const AdapterConfig& a = cfg.decoder.adapter;
    j["d"] = a.d;
    j["n_slots"] = a.n_slots;
    j["n_iters"] = a.n_iters;
    j["n_heads"] = a.n_heads;
    j["recon_mode"] = to_string(a.recon_mode);
    j["eps_token_norm"] = a.eps_token_norm;

    j["n_layers"] = cfg.decoder.n_layers;
    j["d_model"] = cfg.decoder.d_model;
    j["dec_heads"] = cfg.decoder.n_heads;
    j["d_feat"] = cfg.decoder.d_feat;
    j["adapter_layers"] = cfg.decoder.adapter_layers;
    j["lora_layers"] = cfg.decoder.lora_layers;
    j["lora_rank"] = cfg.decoder.lora_rank;
    j["lora_alpha"] = cfg.decoder.lora_alpha;
    j["max_positions"] = cfg.decoder.max_positions;
    j["max_decode_len"] = cfg.decoder.max_decode_len;

    j["t_frames"] = cfg.synth.t_frames;
    j["n_tokens"] = cfg.synth.n_tokens;
    j["n_entities"] = cfg.synth.n_entities;
    j["separation"] = cfg.synth.separation;
    j["frame_dt"] = cfg.synth.frame_dt;

    j["lambda"] = cfg.lambda;
    j["sa_placement"] = to_string(cfg.sa_placement);
    j["adapter_type"] = to_string(cfg.adapter_type);
    j["epochs"] = cfg.epochs;
    j["lr"] = cfg.lr;
    j["base_lr"] = cfg.base_lr;
    j["base_steps"] = cfg.base_steps;
    j["base_checkpoint"] = cfg.base_checkpoint;
    j["weight_decay"] = cfg.weight_decay;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["n_train_videos"] = cfg.n_train_videos;
    j["n_eval_videos"] = cfg.n_eval_videos;
    j["ood_bias_scale"] = cfg.ood_bias_scale;
    j["ood_rotate"] = cfg.ood_rotate;
    j["checkpoint_every"] = cfg.checkpoint_every;
    return j.dump(2) + "\n";
}

} // namespace vtg
