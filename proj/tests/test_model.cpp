#include <doctest.h>

#include <filesystem>
#include <random>

#include "ptbt/model.hpp"

using namespace ptbt;

namespace {

ModelConfig tiny_config(EmbeddingTying tying = EmbeddingTying::Untied) {
    ModelConfig c;
    c.num_layers = 1;
    c.d_model = 8;
    c.num_heads = 2;
    c.d_ff = 16;
    c.src_vocab_size = 12;
    c.tgt_vocab_size = 12;
    c.dropout_rate = 0.0;
    c.max_positions = 16;
    c.tying = tying;
    return c;
}

TokenSeq random_seq(std::mt19937_64& rng, std::size_t len, std::size_t vocab) {
    std::uniform_int_distribution<TokenId> tok(special::kNumReserved, static_cast<TokenId>(vocab) - 1);
    TokenSeq s(len);
    for (auto& t : s) t = tok(rng);
    return s;
}

}  // namespace

TEST_CASE("build_model is deterministic in (config, seed)") {
    const ModelConfig c = tiny_config();
    CHECK(build_model(c, 3) == build_model(c, 3));
    CHECK_FALSE(build_model(c, 3) == build_model(c, 4));
}

TEST_CASE("parameter groups partition the parameters") {
    for (auto tying : {EmbeddingTying::Untied, EmbeddingTying::TiedTgtOut, EmbeddingTying::TiedAll}) {
        const Model m = build_model(tiny_config(tying), 1);
        std::size_t covered = 0;
        for (ParamGroup g : kAllGroups) {
            for (const auto& name : m.group_params(g)) {
                CHECK(name.rfind(std::string(group_name(g)) + ".", 0) == 0);
                ++covered;
            }
        }
        CHECK(covered == m.params().size());
    }
}

TEST_CASE("parameter count matches the closed form") {
    ModelConfig c;
    c.num_layers = 2;
    c.d_model = 64;
    c.num_heads = 4;
    c.d_ff = 256;
    c.src_vocab_size = 256;
    c.tgt_vocab_size = 256;
    const std::size_t d = 64, ff = 256, v = 256, L = 2;
    const std::size_t attn = 4 * d * d + 3 * d;
    const std::size_t ln = 2 * d;
    const std::size_t ffn = d * ff + ff + ff * d + d;
    const std::size_t enc = L * (attn + ffn + 2 * ln) + ln;
    const std::size_t dec = L * (2 * attn + ffn + 3 * ln) + ln;
    const std::size_t embeds = 2 * v * d;
    const std::size_t out = d * v + v;
    CHECK(build_model(c, 1).parameter_count() == embeds + enc + dec + out);
    c.tying = EmbeddingTying::TiedTgtOut;
    CHECK(build_model(c, 1).parameter_count() == embeds + enc + dec + v);
    c.tying = EmbeddingTying::TiedAll;
    CHECK(build_model(c, 1).parameter_count() == v * d + enc + dec + v);
}

TEST_CASE("forward output shape and validation") {
    const Model m = build_model(tiny_config(), 2);
    const TokenBatch src = TokenBatch::from({{5, 6, 7}, {8, 9}});
    const TokenBatch tgt = TokenBatch::from({{1, 5}, {1, 6}});
    const Tensor logits = forward_nmt(m, src, tgt);
    CHECK(logits.shape() == Shape{2, 2, 12});
    CHECK(logits.all_finite());
    CHECK_THROWS_AS(forward_nmt(m, TokenBatch::from({{5, 99}}), TokenBatch::from({{1}})), ModelError);
    CHECK_THROWS_AS(forward_nmt(m, TokenBatch::from({TokenSeq(17, 5)}), TokenBatch::from({{1}})), ModelError);
}

TEST_CASE("decoder is causal") {
    const Model m = build_model(tiny_config(), 5);
    const TokenBatch src = TokenBatch::from({{5, 6, 7, 8}});
    TokenBatch tgt = TokenBatch::from({{1, 5, 6, 7, 8}});
    const Tensor base = forward_nmt(m, src, tgt);
    tgt.ids[3] = 11;
    const Tensor changed = forward_nmt(m, src, tgt);
    const std::size_t V = 12;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t k = 0; k < V; ++k) CHECK(changed[t * V + k] == base[t * V + k]);
    double diff = 0;
    for (std::size_t k = 0; k < V; ++k) diff = std::max(diff, std::abs(changed[3 * V + k] - base[3 * V + k]));
    CHECK(diff > 0);
}

TEST_CASE("a leading BT tag does not shift source positions") {
    const TokenBatch b = TokenBatch::from({{special::kBtTag, 7, 8}, {7, 8}, {9, special::kBtTag}});
    CHECK(source_positions(b) == std::vector<std::size_t>{0, 0, 1, 0, 1, 2, 0, 1, 2});
}

TEST_CASE("source padding does not change logits") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        const Model m = build_model(tiny_config(), seed);
        const TokenSeq src = random_seq(rng, 2 + seed % 5, 12);
        TokenSeq tgt = random_seq(rng, 1 + seed % 4, 12);
        tgt.insert(tgt.begin(), special::kBos);
        const Tensor a = forward_nmt(m, TokenBatch::from({src}), TokenBatch::from({tgt}));
        const Tensor b = forward_nmt(m, TokenBatch::from({src}, src.size() + 3), TokenBatch::from({tgt}));
        CHECK(max_abs_diff(a, b) < 1e-6);
    }
}

TEST_CASE("batched rows match single-row forwards") {
    std::mt19937_64 rng(11);
    const Model m = build_model(tiny_config(), 11);
    const TokenSeq s1 = random_seq(rng, 5, 12), s2 = random_seq(rng, 2, 12);
    const TokenSeq t1 = {1, 6, 7}, t2 = {1, 9, 9};
    const Tensor both = forward_nmt(m, TokenBatch::from({s1, s2}), TokenBatch::from({t1, t2}));
    const Tensor one = forward_nmt(m, TokenBatch::from({s2}), TokenBatch::from({t2}));
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(std::abs(both[one.size() + i] - one[i]) < 1e-10);
}

TEST_CASE("full encoder-decoder loss passes the gradient check") {
    for (auto tying : {EmbeddingTying::Untied, EmbeddingTying::TiedAll}) {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            std::mt19937_64 rng(seed);
            const Model m = build_model(tiny_config(tying), seed);
            const TokenBatch src = TokenBatch::from({random_seq(rng, 4, 12), random_seq(rng, 2, 12)});
            TokenSeq y1 = random_seq(rng, 3, 12), y2 = random_seq(rng, 2, 12);
            TokenSeq in1 = y1, in2 = y2;
            in1.insert(in1.begin(), special::kBos);
            in2.insert(in2.begin(), special::kBos);
            y1.push_back(special::kEos);
            y2.push_back(special::kEos);
            const TokenBatch tgt_in = TokenBatch::from({in1, in2});
            const TokenBatch tgt_out = TokenBatch::from({y1, y2});
            Graph g;
            const NodeId logits = build_nmt_graph(g, m, src, tgt_in);
            g.set_output(g.cross_entropy(logits, tgt_out.ids, {0.1, special::kPad}));
            const auto r = finite_difference_check(g, m.bindings());
            INFO("seed " << seed << " worst " << r.worst_param);
            CHECK(r.max_relative_error < 1e-4);
            CHECK(r.probed > 1000);
        }
    }
}

TEST_CASE("selective_init") {
    const ModelConfig c = tiny_config();
    const Model pretrained = build_model(c, 100);
    const Checkpoint ck = to_checkpoint(pretrained, {"pretrained", 100, 0});
    const Model target = build_model(c, 7);
    for (const char* label : {"NN", "NY", "YN", "YY"}) {
        const InitMask mask = InitMask::parse(label);
        const Model m = selective_init(target, ck, mask, 7);
        CAPTURE(label);
        for (ParamGroup g : kAllGroups) {
            const bool from_ckpt = is_encoder_side(g) ? mask.encoder : mask.decoder;
            for (const auto& name : m.group_params(g)) {
                if (from_ckpt)
                    CHECK(m.param(name) == pretrained.param(name));
                else if (name.find("bias") == std::string::npos && name.find("gain") == std::string::npos)
                    CHECK_FALSE(m.param(name) == pretrained.param(name));
            }
        }
        CHECK(selective_init(m, ck, mask, 7) == m);
    }
    SUBCASE("config mismatch rejected") {
        ModelConfig other = c;
        other.d_ff = 32;
        CHECK_THROWS_AS(selective_init(build_model(other, 1), ck, {true, true}, 1), ModelError);
    }
    SUBCASE("mixed masks rejected when tying crosses sides") {
        const ModelConfig tied = tiny_config(EmbeddingTying::TiedAll);
        const Checkpoint tck = to_checkpoint(build_model(tied, 1), {});
        const Model t = build_model(tied, 2);
        CHECK_THROWS_AS(selective_init(t, tck, InitMask::parse("NY"), 2), ModelError);
        CHECK_THROWS_AS(selective_init(t, tck, InitMask::parse("YN"), 2), ModelError);
        CHECK_NOTHROW(selective_init(t, tck, InitMask::parse("YY"), 2));
        const ModelConfig half = tiny_config(EmbeddingTying::TiedTgtOut);
        CHECK_NOTHROW(selective_init(build_model(half, 2), to_checkpoint(build_model(half, 1), {}),
                                     InitMask::parse("YN"), 2));
    }
}

TEST_CASE("checkpoint round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "ptbt_test_ckpt";
    const Model m = build_model(tiny_config(EmbeddingTying::TiedTgtOut), 9);
    const Checkpoint ck = to_checkpoint(m, {"trained", 9, 123});
    save_checkpoint(dir / "model.ckpt", ck);
    const Checkpoint back = load_checkpoint(dir / "model.ckpt");
    CHECK(back.provenance == ck.provenance);
    CHECK(model_from_checkpoint(back) == m);
    CHECK(checkpoint_digest(back) == checkpoint_digest(ck));
    ModelConfig other = m.config();
    other.num_heads = 4;
    CHECK_THROWS_AS(model_from_checkpoint(back, other), ModelError);
    CHECK_THROWS_AS(deserialize_checkpoint("not a checkpoint at all"), ModelError);
    std::string bytes = serialize_checkpoint(ck);
    bytes.resize(bytes.size() - 8);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes), ModelError);
    std::filesystem::remove_all(dir);
}
