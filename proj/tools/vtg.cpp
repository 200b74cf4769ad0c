// vtg — command-line runner for the slot-adapter grounding toolkit.
//
// Subcommands: train, eval, diag-mmd, diag-perturb, diag-simrank,
// export-slots, gradcheck, gen-data.  Configuration comes from --config
// (key=value lines or a JSON object) with --set key=value overrides.
// Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vtg/config.hpp"
#include "vtg/diag.hpp"
#include "vtg/errors.hpp"
#include "vtg/serialize.hpp"
#include "vtg/synth.hpp"
#include "vtg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

vtg::RunConfig make_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
    if (config_path.empty()) return vtg::parse_config_text("", overrides);
    return vtg::parse_config_file(config_path, overrides);
}

void emit(const json& j, const std::string& out_path) {
    std::string text = j.dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw vtg::LoadError("cannot write report: " + out_path);
    out << text;
}

json eval_json(const vtg::EvalResult& r) {
    json j;
    j["n"] = r.n;
    j["r1_at_0.5"] = r.r1_at_05;
    j["r1_at_0.7"] = r.r1_at_07;
    j["miou"] = r.miou;
    j["parse_fail_rate"] = r.parse_fail_rate;
    return j;
}

// A single .svtf file yields one pooled vector per frame (mean over tokens);
// a directory yields one pooled vector per contained .svtf file, in filename
// order.
vtg::ReprSet load_reprs(const std::string& path, const std::string& label) {
    vtg::ReprSet set;
    set.source = label;
    if (fs::is_directory(path)) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(path))
            if (entry.is_regular_file() && entry.path().extension() == ".svtf")
                files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw vtg::ValueError("no .svtf files in directory: " + path);
        for (const std::string& f : files)
            set.vectors.push_back(vtg::pool_video_repr(vtg::read_svtf(f)));
    } else if (fs::is_regular_file(path)) {
        vtg::Tensor frames = vtg::read_svtf(path);
        std::size_t T = frames.shape()[0], N = frames.shape()[1], D = frames.shape()[2];
        const auto& data = frames.data();
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> mean(D, 0.0);
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t d = 0; d < D; ++d) mean[d] += data[(t * N + i) * D + d];
            for (double& v : mean) v /= static_cast<double>(N);
            set.vectors.push_back(std::move(mean));
        }
    } else {
        throw vtg::ValueError("no such file or directory: " + path);
    }
    return set;
}

// Eval-stream videos for a loaded model, optionally under the domain shift.
std::vector<vtg::SynthVideo> eval_videos(const vtg::RunConfig& cfg, std::size_t n, bool ood) {
    if (n == 0) throw vtg::ConfigError("n: at least one evaluation video is required");
    return vtg::gen_dataset(cfg.synth, 1, n, ood).second;
}

json mmd_json(const vtg::Mmd2Result& r, bool biased) {
    json j;
    j["estimate"] = r.value;
    j["raw"] = r.raw;
    j["bandwidth"] = r.bandwidth;
    j["bandwidth_fallback"] = r.bandwidth_fallback;
    j["n_x"] = r.n_x;
    j["n_y"] = r.n_y;
    j["biased"] = biased;
    return j;
}

int run(int argc, char** argv) {
    CLI::App app{"slot-adapter video temporal grounding toolkit"};
    app.require_subcommand(1);
    app.fallthrough();   // let --config / --set appear after the subcommand name

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "config file (key=value lines or a JSON object)");
    app.add_option("--set", overrides, "override a config key, e.g. --set lambda=0.2");

    // --- train ---------------------------------------------------------
    auto* cmd_train = app.add_subcommand("train", "train a model into output_dir");

    // --- eval ----------------------------------------------------------
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a fresh eval stream");
    std::string eval_ckpt, eval_out, eval_per_sample;
    bool eval_ood = false;
    std::size_t eval_n = 0;
    cmd_eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    cmd_eval->add_flag("--ood", eval_ood, "apply the configured domain shift to the eval stream");
    cmd_eval->add_option("--n", eval_n, "eval-set size (default: the checkpoint's n_eval_videos)");
    cmd_eval->add_option("--per-sample", eval_per_sample, "write per-sample JSON lines here");
    cmd_eval->add_option("--out", eval_out, "write the metrics JSON here instead of stdout");

    // --- diag-mmd ------------------------------------------------------
    auto* cmd_mmd = app.add_subcommand(
        "diag-mmd", "MMD^2 between two representation sets (.svtf files/dirs or a live model)");
    std::string mmd_x, mmd_y, mmd_ckpt, mmd_out;
    bool mmd_biased = false;
    std::size_t mmd_n = 0;
    auto* ox = cmd_mmd->add_option("--x", mmd_x, ".svtf file or directory for the first set");
    auto* oy = cmd_mmd->add_option("--y", mmd_y, ".svtf file or directory for the second set");
    auto* ock = cmd_mmd->add_option(
        "--checkpoint", mmd_ckpt, "live mode: pooled model representations, ID vs OOD stream");
    cmd_mmd->add_option("--n", mmd_n, "videos per side in live mode (default n_eval_videos)");
    cmd_mmd->add_flag("--biased", mmd_biased, "use the biased (diagonal-included) estimator");
    cmd_mmd->add_option("--out", mmd_out, "write the report JSON here instead of stdout");
    ox->needs(oy);
    oy->needs(ox);
    ock->excludes(ox);

    // --- diag-perturb --------------------------------------------------
    auto* cmd_pert = app.add_subcommand(
        "diag-perturb", "noise-perturbation protocol: GT-window vs random-window noise");
    std::string pert_ckpt, pert_mode = "gt", pert_out;
    double pert_scale = 1.0, pert_tau = 0.7;
    std::uint64_t pert_seed = 0;
    std::size_t pert_n = 0;
    bool pert_ood = false;
    cmd_pert->add_option("--checkpoint", pert_ckpt, "model checkpoint")->required();
    cmd_pert->add_option("--mode", pert_mode, "gt | random")
        ->check(CLI::IsMember({"gt", "random"}));
    cmd_pert->add_option("--noise-scale", pert_scale, "noise std as a multiple of feature std");
    cmd_pert->add_option("--perturb-seed", pert_seed, "seed for noise and window placement");
    cmd_pert->add_option("--tau", pert_tau, "IoU threshold of the reported recall");
    cmd_pert->add_option("--n", pert_n, "eval-set size (default: the checkpoint's n_eval_videos)");
    cmd_pert->add_flag("--ood", pert_ood, "perturb the shifted (OOD) eval stream");
    cmd_pert->add_option("--out", pert_out, "write the report JSON here instead of stdout");

    // --- diag-simrank --------------------------------------------------
    auto* cmd_sim = app.add_subcommand(
        "diag-simrank", "rank test representations by max cosine similarity to a training set");
    std::string sim_train, sim_test, sim_out;
    double sim_fraction = 0.25;
    cmd_sim->add_option("--train", sim_train, ".svtf file or directory of training features")
        ->required();
    cmd_sim->add_option("--test", sim_test, ".svtf file or directory of test features")
        ->required();
    cmd_sim->add_option("--fraction", sim_fraction, "fraction per split set (0 < f <= 0.5)");
    cmd_sim->add_option("--out", sim_out, "write the split CSV here instead of stdout");

    // --- export-slots ---------------------------------------------------
    auto* cmd_slots = app.add_subcommand(
        "export-slots", "write per-frame argmax slot maps as PGM images plus a CSV");
    std::string slots_ckpt, slots_attn, slots_prefix, slots_stream = "eval";
    std::size_t slots_index = 0;
    bool slots_ood = false;
    auto* sck = cmd_slots->add_option("--checkpoint", slots_ckpt,
                                      "model checkpoint (attention from the last adapter layer)");
    auto* sat = cmd_slots->add_option("--attn", slots_attn,
                                      "read a [T, N, n_slots] attention tensor from this .svtf");
    cmd_slots->add_option("--out", slots_prefix, "output path prefix")->required();
    cmd_slots->add_option("--stream", slots_stream, "video stream in checkpoint mode")
        ->check(CLI::IsMember({"train", "eval"}));
    cmd_slots->add_option("--index", slots_index, "video index in checkpoint mode");
    cmd_slots->add_flag("--ood", slots_ood, "apply the domain shift in checkpoint mode");
    sck->excludes(sat);

    // --- gradcheck -------------------------------------------------------
    auto* cmd_grad = app.add_subcommand(
        "gradcheck", "finite-difference check of the composed loss on a toy instance");
    std::uint64_t grad_seed = 0;
    std::size_t grad_max = 0;
    double grad_tol = 1e-4;
    cmd_grad->add_option("--seed", grad_seed, "seed for the toy instance");
    cmd_grad->add_option("--max-per-param", grad_max,
                         "elements sampled per parameter (0 = every element)");
    cmd_grad->add_option("--tol", grad_tol, "maximum allowed relative error");

    // --- gen-data --------------------------------------------------------
    auto* cmd_gen = app.add_subcommand("gen-data", "write synthetic videos as SVTF files");
    std::string gen_dir;
    std::size_t gen_train = 0, gen_eval = 0;
    bool gen_ood_eval = false;
    cmd_gen->add_option("--out", gen_dir, "output directory")->required();
    cmd_gen->add_option("--n-train", gen_train, "training videos to write");
    cmd_gen->add_option("--n-eval", gen_eval, "eval videos to write");
    cmd_gen->add_flag("--ood-eval", gen_ood_eval, "apply the domain shift to the eval stream");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (cmd_train->parsed()) {
        vtg::RunConfig cfg = make_config(config_path, overrides);
        vtg::TrainResult r = vtg::train(cfg);
        json j;
        j["checkpoint"] = r.checkpoint_path;
        j["log"] = r.log_path;
        j["tune_steps"] = r.tune_steps;
        j["epoch_total_mean"] = r.epoch_total_mean;
        j["epoch_sa_mean"] = r.epoch_sa_mean;
        j["first_sa"] = r.first_sa;
        j["last_sa"] = r.last_sa;
        emit(j, "");
    } else if (cmd_eval->parsed()) {
        vtg::LoadedModel lm = vtg::load_model(eval_ckpt);
        std::size_t n = eval_n ? eval_n : lm.cfg.n_eval_videos;
        vtg::EvalResult r = vtg::evaluate(lm.model, eval_videos(lm.cfg, n, eval_ood),
                                          eval_per_sample);
        json j = eval_json(r);
        j["ood"] = eval_ood;
        emit(j, eval_out);
    } else if (cmd_mmd->parsed()) {
        vtg::ReprSet x, y;
        if (!mmd_ckpt.empty()) {
            vtg::LoadedModel lm = vtg::load_model(mmd_ckpt);
            std::size_t n = mmd_n ? mmd_n : lm.cfg.n_eval_videos;
            x = vtg::pooled_reprs(lm.model, eval_videos(lm.cfg, n, false));
            x.source = "id";
            y = vtg::pooled_reprs(lm.model, eval_videos(lm.cfg, n, true));
            y.source = "ood";
        } else if (!mmd_x.empty()) {
            x = load_reprs(mmd_x, mmd_x);
            y = load_reprs(mmd_y, mmd_y);
        } else {
            throw vtg::ConfigError("diag-mmd: provide either --x/--y or --checkpoint");
        }
        vtg::Mmd2Result r = mmd_biased ? vtg::mmd2_biased(x, y) : vtg::mmd2(x, y);
        json j = mmd_json(r, mmd_biased);
        j["x"] = x.source;
        j["y"] = y.source;
        emit(j, mmd_out);
    } else if (cmd_pert->parsed()) {
        vtg::LoadedModel lm = vtg::load_model(pert_ckpt);
        std::size_t n = pert_n ? pert_n : lm.cfg.n_eval_videos;
        std::vector<vtg::VideoSample> samples;
        for (const vtg::SynthVideo& v : eval_videos(lm.cfg, n, pert_ood))
            samples.push_back(vtg::to_sample(v, lm.model.vocab()));
        vtg::PerturbSpec spec;
        spec.mode = pert_mode == "gt" ? vtg::PerturbSpec::Mode::gt_window
                                      : vtg::PerturbSpec::Mode::random_window;
        spec.noise_scale = pert_scale;
        spec.seed = pert_seed;
        spec.tau = pert_tau;
        auto predict = [&lm](const vtg::VideoSample& s) {
            return vtg::decode_window(lm.model, s).pred;
        };
        vtg::PerturbResult r = vtg::perturb_eval(predict, samples, spec);
        json j;
        j["mode"] = pert_mode;
        j["noise_scale"] = spec.noise_scale;
        j["tau"] = spec.tau;
        j["n"] = samples.size();
        j["seed"] = spec.seed;
        j["clean"] = r.clean;
        j["perturbed"] = r.perturbed;
        j["drop"] = r.drop;
        j["overlap_warning"] = r.overlap_warning;
        emit(j, pert_out);
    } else if (cmd_sim->parsed()) {
        vtg::ReprSet train = load_reprs(sim_train, "train");
        vtg::ReprSet test = load_reprs(sim_test, "test");
        vtg::SimrankSplit split = vtg::simrank_split(train, test, sim_fraction);
        std::string csv = "set,id,score\n";
        for (std::size_t id : split.top)
            csv += "top," + std::to_string(id) + "," + std::to_string(split.scores[id]) + "\n";
        for (std::size_t id : split.bottom)
            csv += "bottom," + std::to_string(id) + "," + std::to_string(split.scores[id]) + "\n";
        if (sim_out.empty()) {
            std::cout << csv;
        } else {
            std::ofstream out(sim_out, std::ios::trunc);
            if (!out) throw vtg::LoadError("cannot write report: " + sim_out);
            out << csv;
        }
    } else if (cmd_slots->parsed()) {
        vtg::Tensor attn;
        if (!slots_attn.empty()) {
            attn = vtg::read_svtf(slots_attn);
        } else if (!slots_ckpt.empty()) {
            vtg::LoadedModel lm = vtg::load_model(slots_ckpt);
            vtg::SynthSpec spec = lm.cfg.synth;
            spec.shift.enabled = slots_ood;
            vtg::SynthVideo video = vtg::gen_video(spec, slots_stream, slots_index);
            vtg::NoGradGuard guard;
            vtg::VideoSample s = vtg::to_sample(video, lm.model.vocab());
            auto fo = lm.model.forward(vtg::build_sequence(s, lm.model.vocab(), false));
            if (fo.adapter_outs.empty())
                throw vtg::ValueError(
                    "export-slots: the checkpoint has no slot adapters to visualize");
            attn = fo.adapter_outs.back().attn;
        } else {
            throw vtg::ConfigError("export-slots: provide either --checkpoint or --attn");
        }
        vtg::write_slot_maps(slots_prefix, attn);
        json j;
        j["prefix"] = slots_prefix;
        j["frames"] = attn.shape()[0];
        j["tokens"] = attn.shape()[1];
        j["slots"] = attn.shape()[2];
        j["csv"] = slots_prefix + ".csv";
        emit(j, "");
    } else if (cmd_grad->parsed()) {
        vtg::GradCheckReport r = vtg::run_composed_gradcheck(grad_seed, grad_max);
        bool pass = r.max_rel_err <= grad_tol;
        json j;
        j["max_rel_err"] = r.max_rel_err;
        j["worst"] = r.worst;
        j["analytic"] = r.analytic;
        j["numeric"] = r.numeric;
        j["checked"] = r.checked;
        j["tol"] = grad_tol;
        j["pass"] = pass;
        emit(j, "");
        if (!pass) return 1;
    } else if (cmd_gen->parsed()) {
        if (gen_train + gen_eval == 0)
            throw vtg::ConfigError("gen-data: --n-train and/or --n-eval must be positive");
        vtg::RunConfig cfg = make_config(config_path, overrides);
        fs::create_directories(gen_dir);
        std::ofstream meta(fs::path(gen_dir) / "meta.jsonl", std::ios::trunc);
        if (!meta) throw vtg::LoadError("cannot write metadata in " + gen_dir);
        auto write_stream = [&](const char* stream, const std::vector<vtg::SynthVideo>& videos) {
            for (const vtg::SynthVideo& v : videos) {
                char name[32];
                std::snprintf(name, sizeof(name), "%s_%05zu.svtf", stream, v.sample_id);
                vtg::write_svtf((fs::path(gen_dir) / name).string(), v.frames);
                json j;
                j["file"] = name;
                j["stream"] = stream;
                j["sample_id"] = v.sample_id;
                j["target_entity"] = v.target_entity;
                j["gt_start"] = v.gt_window.start;
                j["gt_end"] = v.gt_window.end;
                j["times"] = v.times;
                j["labels"] = v.labels;
                meta << j.dump() << "\n";
            }
        };
        if (gen_train > 0)
            write_stream("train", vtg::gen_dataset(cfg.synth, gen_train, 1, false).first);
        if (gen_eval > 0)
            write_stream("eval", vtg::gen_dataset(cfg.synth, 1, gen_eval, gen_ood_eval).second);
        json j;
        j["dir"] = gen_dir;
        j["n_train"] = gen_train;
        j["n_eval"] = gen_eval;
        j["ood_eval"] = gen_ood_eval;
        j["meta"] = (fs::path(gen_dir) / "meta.jsonl").string();
        emit(j, "");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const vtg::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
