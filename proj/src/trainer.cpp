#include "vtg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vtg/alignment.hpp"
#include "vtg/errors.hpp"
#include "vtg/metrics.hpp"
#include "vtg/optim.hpp"
#include "vtg/rng.hpp"

namespace fs = std::filesystem;

namespace vtg {

GroundingDecoder build_model(const RunConfig& cfg) {
    cfg.validate();
    Rng rng = Rng(cfg.seed).split("model");
    return GroundingDecoder(cfg.decoder, cfg.adapter_type, rng);
}

LossParts composed_loss(const GroundingDecoder& model, const VideoSample& sample,
                        const RunConfig& cfg) {
    TokenSequence seq = build_sequence(sample, model.vocab(), true);
    GroundingDecoder::ForwardOut fo = model.forward(seq);

    LossParts parts;
    parts.ce = model.ce_loss(fo.logits, seq);
    if (!fo.adapter_outs.empty()) {
        Tensor target = feature_affinity(sample.frames);
        auto sa_of = [&](const SlotAttentionOutput& so) {
            return sa_loss(slot_similarity(so.attn), target);
        };
        if (cfg.lambda > 0.0) {
            Tensor sa;
            if (cfg.sa_placement == SaPlacement::last_adapter_layer) {
                sa = sa_of(fo.adapter_outs.back());
            } else {
                sa = sa_of(fo.adapter_outs.front());
                for (std::size_t i = 1; i < fo.adapter_outs.size(); ++i)
                    sa = add(sa, sa_of(fo.adapter_outs[i]));
                sa = scale(sa, 1.0 / static_cast<double>(fo.adapter_outs.size()));
            }
            parts.sa = sa.at(0);
            parts.total = total_loss(parts.ce, sa, cfg.lambda);
        } else {
            NoGradGuard guard;   // logged only; keep it off the tape
            if (cfg.sa_placement == SaPlacement::last_adapter_layer) {
                parts.sa = sa_of(fo.adapter_outs.back()).at(0);
            } else {
                double acc = 0.0;
                for (const auto& so : fo.adapter_outs) acc += sa_of(so).at(0);
                parts.sa = acc / static_cast<double>(fo.adapter_outs.size());
            }
            parts.total = parts.ce;
        }
    } else {
        parts.total = parts.ce;
    }
    return parts;
}

namespace {

Checkpoint snapshot(const GroundingDecoder& model, const std::string& config_json,
                    const AdamW* opt) {
    Checkpoint ckpt;
    ckpt.config_json = config_json;
    for (const Tensor& p : model.parameters()) ckpt.params.emplace_back(p.name(), p);
    if (opt) {
        // State is stored per checkpoint parameter; parameters the optimizer
        // does not cover (the frozen base) get all-zero moments.
        OptimizerState st;
        st.step = opt->t();
        st.m.assign(ckpt.params.size(), {});
        st.v.assign(ckpt.params.size(), {});
        const auto& opt_params = opt->params();
        for (std::size_t i = 0; i < opt_params.size(); ++i) {
            for (std::size_t j = 0; j < ckpt.params.size(); ++j) {
                if (ckpt.params[j].first == opt_params[i].name()) {
                    st.m[j] = opt->m()[i];
                    st.v[j] = opt->v()[i];
                    break;
                }
            }
        }
        for (std::size_t j = 0; j < ckpt.params.size(); ++j) {
            if (st.m[j].empty()) st.m[j].assign(ckpt.params[j].second.numel(), 0.0);
            if (st.v[j].empty()) st.v[j].assign(ckpt.params[j].second.numel(), 0.0);
        }
        ckpt.optimizer = std::move(st);
    }
    return ckpt;
}

void write_checkpoint_atomically(const std::string& path, const Checkpoint& ckpt) {
    std::string tmp = path + ".tmp";
    save_checkpoint(tmp, ckpt);
    fs::rename(tmp, path);
}

} // namespace

TrainResult train(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.output_dir.empty()) throw ConfigError("output_dir: required for training");
    fs::create_directories(cfg.output_dir);
    std::string config_json = echo_config(cfg);
    {
        std::ofstream out(fs::path(cfg.output_dir) / "config.json");
        if (!out) throw LoadError("cannot write config echo in " + cfg.output_dir);
        out << config_json;
    }

    // The held-out eval stream is regenerated on demand by `evaluate` callers;
    // training touches only the train stream.
    auto [train_videos, eval_videos] = gen_dataset(cfg.synth, cfg.n_train_videos, 1, false);
    (void)eval_videos;
    std::vector<VideoSample> samples;
    samples.reserve(train_videos.size());
    GroundingDecoder model = build_model(cfg);
    for (const SynthVideo& v : train_videos) samples.push_back(to_sample(v, model.vocab()));

    TrainResult result;
    result.checkpoint_path = (fs::path(cfg.output_dir) / "model.ckpt").string();
    result.log_path = (fs::path(cfg.output_dir) / "train_log.jsonl").string();
    std::ofstream log(result.log_path, std::ios::trunc);
    if (!log) throw LoadError("cannot write training log in " + cfg.output_dir);

    auto log_line = [&log](const char* phase, std::size_t step, double ce, double sa,
                           double total) {
        nlohmann::json j;
        j["phase"] = phase;
        j["step"] = step;
        j["ce"] = ce;
        j["sa"] = sa;
        j["total"] = total;
        log << j.dump() << "\n";
        log.flush();
    };

    // Phase 1: pretrain the toy base on CE alone, then freeze it. The
    // adapters stay at identity and LoRA deltas at zero, so this matches a
    // plain-decoder pretrain step for step. A base_checkpoint replaces the
    // pretrain entirely: the frozen-base weights are copied in by name, so
    // several adapter variants can share one pretrained base.
    try {
        if (!cfg.base_checkpoint.empty()) {
            Checkpoint donor = load_checkpoint(cfg.base_checkpoint);
            for (Tensor& p : model.base_parameters()) {
                auto it = std::find_if(donor.params.begin(), donor.params.end(),
                                       [&](const auto& kv) { return kv.first == p.name(); });
                if (it == donor.params.end())
                    throw LoadError("base_checkpoint: missing parameter '" + p.name() + "'");
                if (it->second.shape() != p.shape())
                    throw LoadError("base_checkpoint: shape mismatch for '" + p.name() +
                                    "': stored " + shape_str(it->second.shape()) + ", model " +
                                    shape_str(p.shape()));
                p.mutable_data() = it->second.data();
            }
        } else if (cfg.base_steps > 0) {
            AdamWConfig oc;
            oc.lr = cfg.base_lr;
            oc.weight_decay = cfg.weight_decay;
            AdamW opt(model.base_parameters(), oc);
            std::size_t cursor = 0;
            for (std::size_t step = 0; step < cfg.base_steps; ++step) {
                double ce_sum = 0.0;
                for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                    const VideoSample& s = samples[cursor++ % samples.size()];
                    TokenSequence seq = build_sequence(s, model.vocab(), true);
                    Tensor ce = model.ce_loss(model.forward(seq).logits, seq);
                    ce_sum += ce.at(0);
                    backward(scale(ce, 1.0 / static_cast<double>(cfg.batch_size)));
                }
                opt.step();
                double ce_mean = ce_sum / static_cast<double>(cfg.batch_size);
                log_line("base", step, ce_mean, 0.0, ce_mean);
            }
        }
    } catch (const NumericError& e) {
        throw NumericError(std::string("training aborted in base pretraining: ") + e.what());
    }

    model.set_base_trainable(false);
    write_checkpoint_atomically(result.checkpoint_path, snapshot(model, config_json, nullptr));

    // Phase 2: adapters + LoRA on CE + lambda*SA.
    AdamWConfig oc;
    oc.lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    AdamW opt(model.tuned_parameters(), oc);
    Rng order_rng = Rng(cfg.seed).split("order");
    std::size_t step = 0;
    try {
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::vector<std::size_t> order = order_rng.split(epoch).permutation(samples.size());
            double ep_total = 0.0, ep_sa = 0.0;
            std::size_t ep_batches = 0;
            for (std::size_t ofs = 0; ofs + cfg.batch_size <= order.size();
                 ofs += cfg.batch_size) {
                double ce_sum = 0.0, sa_sum = 0.0, total_sum = 0.0;
                for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                    LossParts parts =
                        composed_loss(model, samples[order[ofs + b]], cfg);
                    ce_sum += parts.ce.at(0);
                    sa_sum += parts.sa;
                    total_sum += parts.total.at(0);
                    backward(scale(parts.total, 1.0 / static_cast<double>(cfg.batch_size)));
                }
                opt.step();
                double inv = 1.0 / static_cast<double>(cfg.batch_size);
                log_line("tune", step, ce_sum * inv, sa_sum * inv, total_sum * inv);
                if (step == 0) result.first_sa = sa_sum * inv;
                result.last_sa = sa_sum * inv;
                ep_total += total_sum * inv;
                ep_sa += sa_sum * inv;
                ++ep_batches;
                ++step;
                if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
                    write_checkpoint_atomically(result.checkpoint_path,
                                                snapshot(model, config_json, &opt));
            }
            if (ep_batches == 0)
                throw ConfigError("batch_size: exceeds the training set; no full batch fits");
            result.epoch_total_mean.push_back(ep_total / static_cast<double>(ep_batches));
            result.epoch_sa_mean.push_back(ep_sa / static_cast<double>(ep_batches));
        }
    } catch (const NumericError& e) {
        throw NumericError(std::string("training aborted at fine-tune step ") +
                           std::to_string(step) + " (last good checkpoint retained at " +
                           result.checkpoint_path + "): " + e.what());
    }
    result.tune_steps = step;
    write_checkpoint_atomically(result.checkpoint_path, snapshot(model, config_json, &opt));
    return result;
}

LoadedModel load_model(const std::string& checkpoint_path) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    RunConfig cfg;
    try {
        cfg = parse_config_text(ckpt.config_json, {});
    } catch (const ConfigError& e) {
        throw LoadError(std::string("checkpoint carries an invalid config: ") + e.what());
    }
    GroundingDecoder model = build_model(cfg);
    std::vector<Tensor> params = model.parameters();
    if (params.size() != ckpt.params.size())
        throw LoadError("checkpoint/config shape mismatch: " + std::to_string(ckpt.params.size()) +
                        " stored parameters, model has " + std::to_string(params.size()));
    for (Tensor& p : params) {
        auto it = std::find_if(ckpt.params.begin(), ckpt.params.end(),
                               [&](const auto& kv) { return kv.first == p.name(); });
        if (it == ckpt.params.end())
            throw LoadError("checkpoint/config shape mismatch: missing parameter '" + p.name() +
                            "'");
        if (it->second.shape() != p.shape())
            throw LoadError("checkpoint/config shape mismatch for '" + p.name() + "': stored " +
                            shape_str(it->second.shape()) + ", model " + shape_str(p.shape()));
        p.mutable_data() = it->second.data();
    }
    model.set_base_trainable(false);
    return LoadedModel{std::move(cfg), std::move(model)};
}

DecodedWindow decode_window(const GroundingDecoder& model, const VideoSample& sample) {
    TokenSequence prefix = build_sequence(sample, model.vocab(), false);
    std::string text = model.greedy_decode(prefix);
    ParsedWindow parsed = parse_window(text, /*clamp_inverted=*/true);
    DecodedWindow out{std::move(text), std::nullopt};
    if (parsed.ok) {
        double dur = sample.times.back();
        Window w = parsed.window;
        w.start = std::clamp(w.start, 0.0, dur);
        w.end = std::clamp(w.end, 0.0, dur);
        out.pred = w;
    }
    return out;
}

EvalResult evaluate(const GroundingDecoder& model, const std::vector<SynthVideo>& videos,
                    const std::string& per_sample_path) {
    if (videos.empty()) throw ValueError("evaluate: empty evaluation set");
    std::ofstream per_sample;
    if (!per_sample_path.empty()) {
        per_sample.open(per_sample_path, std::ios::trunc);
        if (!per_sample) throw LoadError("cannot write per-sample report: " + per_sample_path);
    }

    std::vector<Prediction> preds;
    std::vector<Window> gts;
    std::size_t parse_fails = 0;
    for (const SynthVideo& v : videos) {
        VideoSample s = to_sample(v, model.vocab());
        DecodedWindow dec = decode_window(model, s);
        if (!dec.pred) ++parse_fails;
        preds.push_back(dec.pred);
        gts.push_back(s.gt_window);

        if (per_sample.is_open()) {
            nlohmann::json j;
            j["sample_id"] = v.sample_id;
            j["text"] = dec.text;
            j["parse_ok"] = dec.pred.has_value();
            if (dec.pred) {
                j["t_start"] = dec.pred->start;
                j["t_end"] = dec.pred->end;
            } else {
                j["t_start"] = nullptr;
                j["t_end"] = nullptr;
            }
            j["gt_start"] = s.gt_window.start;
            j["gt_end"] = s.gt_window.end;
            per_sample << j.dump() << "\n";
        }
    }

    EvalResult r;
    r.n = videos.size();
    r.r1_at_05 = recall_at_iou(preds, gts, 0.5);
    r.r1_at_07 = recall_at_iou(preds, gts, 0.7);
    r.miou = mean_iou(preds, gts);
    r.parse_fail_rate = static_cast<double>(parse_fails) / static_cast<double>(videos.size());
    return r;
}

ReprSet pooled_reprs(const GroundingDecoder& model, const std::vector<SynthVideo>& videos) {
    if (model.config().adapter_layers.empty())
        throw ContractError("pooled_reprs: the model has no adapter layers to capture");
    NoGradGuard guard;
    ReprSet out;
    for (const SynthVideo& v : videos) {
        VideoSample s = to_sample(v, model.vocab());
        TokenSequence seq = build_sequence(s, model.vocab(), false);
        out.vectors.push_back(pool_video_repr(model.forward(seq).visual_hidden));
    }
    return out;
}

void write_slot_maps(const std::string& prefix, const Tensor& attn) {
    if (!attn.defined() || attn.rank() != 3)
        throw ValueError("write_slot_maps: expected attention of shape [T, N, n_slots]");
    std::size_t T = attn.shape()[0], N = attn.shape()[1], S = attn.shape()[2];
    std::vector<int> assign = slot_assignment(attn);

    std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(N))));
    std::size_t rows = (side * side == N) ? side : 1;
    std::size_t cols = (side * side == N) ? side : N;

    std::ofstream csv(prefix + ".csv", std::ios::trunc);
    if (!csv) throw LoadError("cannot write slot map CSV at " + prefix + ".csv");
    csv << "frame,token,slot\n";
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t n = 0; n < N; ++n)
            csv << t << "," << n << "," << assign[t * N + n] << "\n";

        std::string path = prefix + "_frame" + std::to_string(t) + ".pgm";
        std::ofstream pgm(path, std::ios::trunc);
        if (!pgm) throw LoadError("cannot write slot map at " + path);
        pgm << "P2\n" << cols << " " << rows << "\n255\n";
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                int slot = assign[t * N + r * cols + c];
                int gray = S > 1 ? static_cast<int>(slot * 255 / static_cast<int>(S - 1)) : 0;
                pgm << gray << (c + 1 < cols ? " " : "\n");
            }
        }
    }
}

GradCheckReport run_composed_gradcheck(std::uint64_t seed, std::size_t max_per_param) {
    RunConfig cfg = parse_config_text("", {"n_layers=2", "d_model=8", "dec_heads=2", "d_feat=4",
                                           "adapter_layers=0", "lora_layers=1", "lora_rank=2",
                                           "lora_alpha=4", "d=8", "n_slots=2", "n_iters=2",
                                           "n_heads=2", "t_frames=2", "n_tokens=16",
                                           "n_entities=2", "max_positions=96",
                                           "seed=" + std::to_string(seed)});
    GroundingDecoder model = build_model(cfg);

    // Randomize the residual projections so CE reaches the slot machinery.
    Rng noise = Rng(seed).split("gradcheck-noise");
    for (std::size_t i = 0; i < model.n_adapters(); ++i) {
        Tensor w_up = model.param("adapter" + std::to_string(i) + ".w_up");
        for (double& x : w_up.mutable_data()) x = noise.normal(0.0, 0.3);
    }

    SynthVideo video = gen_video(cfg.synth, "gradcheck", 0);
    VideoSample sample = to_sample(video, model.vocab());
    auto loss_fn = [&]() { return composed_loss(model, sample, cfg).total; };
    Rng pick = Rng(seed).split("gradcheck-pick");
    return grad_check(loss_fn, model.parameters(), 1e-5, 1e-3, max_per_param, &pick);
}

} // namespace vtg
