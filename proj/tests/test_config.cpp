#include <doctest.h>

#include <string>
#include <vector>

#include "vtg/config.hpp"
#include "vtg/errors.hpp"

using namespace vtg;

namespace {

std::string message_of(const std::string& text, const std::vector<std::string>& sets = {}) {
    try {
        parse_config_text(text, sets);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_SUITE("config") {

TEST_CASE("empty config yields the reference defaults") {
    RunConfig cfg = parse_config_text("", {});
    CHECK(cfg.decoder.adapter.d == 512);
    CHECK(cfg.decoder.adapter.n_slots == 4);
    CHECK(cfg.decoder.adapter.n_iters == 3);
    CHECK(cfg.decoder.adapter.n_heads == 8);
    CHECK(cfg.lambda == 0.1);
    CHECK(cfg.epochs == 5);
    CHECK(cfg.lr == 5e-5);
    CHECK(cfg.adapter_type == AdapterType::slot);
    CHECK(cfg.sa_placement == SaPlacement::last_adapter_layer);
    CHECK(cfg.decoder.adapter.recon_mode == ReconMode::cross_attention);
    // Wired fields follow their driving keys.
    CHECK(cfg.decoder.adapter.d_host == cfg.decoder.d_model);
    CHECK(cfg.synth.feat_dim == cfg.decoder.d_feat);
    CHECK(cfg.synth.seed == cfg.seed);
}

TEST_CASE("key=value text with comments, plus --set precedence") {
    std::string text =
        "# comment\n"
        "\n"
        "lambda = 0.2\n"
        "n_slots=6\n"
        "adapter_layers = 0, 1, 2\n"
        "n_layers = 5\n"
        "lora_layers = 3,4\n";
    RunConfig cfg = parse_config_text(text, {"lambda=0.3", "seed=42"});
    CHECK(cfg.lambda == 0.3);   // override beats file
    CHECK(cfg.decoder.adapter.n_slots == 6);
    CHECK(cfg.decoder.adapter_layers == std::vector<std::size_t>{0, 1, 2});
    CHECK(cfg.decoder.lora_layers == std::vector<std::size_t>{3, 4});
    CHECK(cfg.seed == 42);
    CHECK(cfg.synth.seed == 42);
}

TEST_CASE("lambda override is honored") {
    RunConfig cfg = parse_config_text("lambda = 0.2\n", {});
    CHECK(cfg.lambda == 0.2);
}

TEST_CASE("JSON object form parses the same as flat text") {
    std::string json = R"({
        "lambda": 0.2,
        "adapter_layers": [0],
        "lora_layers": [1, 2, 3, 4, 5],
        "ood_rotate": false,
        "recon_mode": "repeat_project",
        "lr": 5e-5,
        "output_dir": "runs/x"
    })";
    RunConfig a = parse_config_text(json, {});
    RunConfig b = parse_config_text(
        "lambda=0.2\nadapter_layers=0\nlora_layers=1,2,3,4,5\nood_rotate=false\n"
        "recon_mode=repeat_project\nlr=5e-5\noutput_dir=runs/x\n",
        {});
    CHECK(a == b);
    CHECK(a.decoder.adapter.recon_mode == ReconMode::repeat_project);
    CHECK(a.output_dir == "runs/x");
}

TEST_CASE("echo round-trips to an equal config") {
    RunConfig defaults = parse_config_text("", {});
    CHECK(parse_config_text(echo_config(defaults), {}) == defaults);

    RunConfig cfg = parse_config_text("", {"d=32", "n_slots=3", "n_heads=1", "d_model=48",
                                           "dec_heads=3", "d_feat=8", "n_layers=4",
                                           "adapter_layers=0", "lora_layers=2,3", "lora_rank=2",
                                           "lora_alpha=7.5", "t_frames=6", "n_tokens=9",
                                           "n_entities=3", "separation=2.25", "frame_dt=0.25",
                                           "lambda=0.05", "sa_placement=all_adapter_layers",
                                           "epochs=2", "lr=0.00013", "base_lr=0.002",
                                           "base_steps=17", "weight_decay=0.05", "batch_size=3",
                                           "seed=18446744073709551615", "output_dir=out dir",
                                           "n_train_videos=40", "n_eval_videos=9",
                                           "ood_bias_scale=0.75", "ood_rotate=false",
                                           "checkpoint_every=10", "max_decode_len=12",
                                           "max_positions=256", "eps_token_norm=1e-7",
                                           "n_iters=2", "adapter_type=slot"});
    RunConfig back = parse_config_text(echo_config(cfg), {});
    CHECK(back == cfg);
    CHECK(back.seed == 18446744073709551615ull);
    CHECK(back.output_dir == "out dir");
}

TEST_CASE("unknown keys and malformed values name the problem") {
    CHECK(message_of("bogus_key=1\n").find("unknown config key: bogus_key") != std::string::npos);
    CHECK(message_of("n_slots=abc\n").find("n_slots") != std::string::npos);
    CHECK(message_of("n_slots=-1\n").find("n_slots") != std::string::npos);
    CHECK(message_of("epochs=2.5\n").find("epochs") != std::string::npos);
    CHECK(message_of("lr=fast\n").find("lr") != std::string::npos);
    CHECK(message_of("ood_rotate=maybe\n").find("ood_rotate") != std::string::npos);
    CHECK(message_of("recon_mode=other\n").find("recon_mode") != std::string::npos);
    CHECK(message_of("adapter_type=flat\n").find("adapter_type") != std::string::npos);
    CHECK(message_of("just a line\n").find("key=value") != std::string::npos);
    CHECK(message_of("", {"lambda"}).find("--set") != std::string::npos);
    CHECK(message_of("{ not json").find("JSON") != std::string::npos);
}

TEST_CASE("constraint violations are rejected with the key named") {
    CHECK(message_of("n_slots=0\n").find("n_slots") != std::string::npos);
    CHECK(message_of("d=30\n").find("n_heads") != std::string::npos);   // 8 does not divide 30
    CHECK(message_of("d_model=65\n").find("dec_heads") != std::string::npos);
    CHECK(message_of("lambda=-0.1\n").find("lambda") != std::string::npos);
    CHECK(message_of("lr=0\n").find("lr") != std::string::npos);
    CHECK(message_of("batch_size=0\n").find("batch_size") != std::string::npos);
    CHECK(message_of("n_entities=1\n").find("n_entities") != std::string::npos);
    CHECK(message_of("frame_dt=0\n").find("frame_dt") != std::string::npos);
}

TEST_CASE("alignment weight requires slot adapters") {
    std::string m = message_of("adapter_type=none\n");
    CHECK(m.find("lambda") != std::string::npos);   // default lambda 0.1 conflicts
    CHECK(message_of("adapter_type=self_attention\nlambda=0.5\n").find("lambda") !=
          std::string::npos);
    // lambda = 0 makes both alternatives legal.
    CHECK_NOTHROW(parse_config_text("adapter_type=none\nlambda=0\n", {}));
    CHECK_NOTHROW(parse_config_text("adapter_type=self_attention\nlambda=0\n", {}));
    // Slot adapters with no adapter layer cannot host the loss either.
    CHECK(message_of("adapter_layers=\nlambda=0.1\n").find("lambda") != std::string::npos);
}

TEST_CASE("a run with no trainable parameters is rejected") {
    std::string m = message_of("adapter_type=none\nlambda=0\nlora_layers=\n");
    CHECK(m.find("no trainable parameters") != std::string::npos);
    // LoRA alone is fine.
    CHECK_NOTHROW(parse_config_text("adapter_type=none\nlambda=0\nadapter_layers=\n", {}));
}

} // TEST_SUITE
