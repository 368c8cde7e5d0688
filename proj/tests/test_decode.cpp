#include <doctest.h>

#include <cmath>
#include <random>

#include "ptbt/decode.hpp"

using namespace ptbt;

namespace {

ModelConfig small_config(EmbeddingTying tying = EmbeddingTying::Untied) {
    ModelConfig c;
    c.num_layers = 2;
    c.d_model = 8;
    c.num_heads = 2;
    c.d_ff = 16;
    c.src_vocab_size = 14;
    c.tgt_vocab_size = 14;
    c.dropout_rate = 0.0;
    c.max_positions = 64;
    c.tying = tying;
    return c;
}

TokenSeq random_seq(std::mt19937_64& rng, std::size_t len) {
    std::uniform_int_distribution<TokenId> tok(special::kNumReserved, 13);
    TokenSeq s(len);
    for (auto& t : s) t = tok(rng);
    return s;
}

// Greedy search written against the full graph forward.
TokenSeq reference_greedy(const Model& m, const TokenSeq& src, std::size_t max_len) {
    TokenSeq out;
    const std::size_t V = m.config().tgt_vocab_size;
    for (std::size_t step = 0;; ++step) {
        TokenSeq in{special::kBos};
        in.insert(in.end(), out.begin(), out.end());
        const Tensor logits = forward_nmt(m, TokenBatch::from({src}), TokenBatch::from({in}));
        const double* row = logits.data() + step * V;
        if (step == max_len) return out;
        TokenId best = -1;
        for (std::size_t t = 0; t < V; ++t) {
            if (is_banned_output(static_cast<TokenId>(t), step)) continue;
            if (best < 0 || row[t] > row[best]) best = static_cast<TokenId>(t);
        }
        if (best == special::kEos) return out;
        out.push_back(best);
    }
}

}  // namespace

TEST_CASE("incremental decoding matches the graph forward") {
    for (auto tying : {EmbeddingTying::Untied, EmbeddingTying::TiedTgtOut}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            std::mt19937_64 rng(seed);
            const Model m = build_model(small_config(tying), seed);
            const TokenSeq src = random_seq(rng, 3 + seed);
            TokenSeq tgt = random_seq(rng, 6);
            tgt.insert(tgt.begin(), special::kBos);
            const Tensor inc = incremental_logprobs(m, src, tgt);
            const Tensor logits = forward_nmt(m, TokenBatch::from({src}), TokenBatch::from({tgt}));
            const std::size_t V = 14;
            double worst = 0.0;
            for (std::size_t t = 0; t < tgt.size(); ++t) {
                const double* row = logits.data() + t * V;
                double mx = row[0];
                for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
                double z = 0.0;
                for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
                for (std::size_t j = 0; j < V; ++j)
                    worst = std::max(worst, std::abs(inc[t * V + j] - (row[j] - mx - std::log(z))));
            }
            CHECK(worst < 1e-10);
        }
    }
}

TEST_CASE("beam size 1 is greedy decoding") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        std::mt19937_64 rng(seed);
        const Model m = build_model(small_config(), seed);
        const TokenSeq src = random_seq(rng, 4);
        BeamConfig cfg;
        cfg.beam_size = 1;
        const Hypothesis h = beam_search(m, src, cfg);
        CHECK(h.output() == reference_greedy(m, src, cfg.max_len_for(src.size())));
        CHECK(h.tokens.back() == special::kEos);
        CHECK(h.score == doctest::Approx(h.logprob / static_cast<double>(h.tokens.size())));
    }
}

TEST_CASE("rigged one-hot models force their sequence") {
    Model m = build_model(small_config(), 3);
    m.param("out_proj.weight").fill(0.0);
    Tensor& bias = m.param("out_proj.bias");
    bias.fill(0.0);
    SUBCASE("always token 9: runs to max_len and is truncated") {
        bias[9] = 60.0;
        BeamConfig cfg;
        cfg.max_len = 7;
        const Hypothesis h = beam_search(m, TokenSeq{6, 7}, cfg);
        CHECK(h.output() == TokenSeq(7, 9));
        CHECK(h.truncated);
    }
    SUBCASE("EOS preferred but banned first") {
        bias[special::kEos] = 60.0;
        bias[11] = 40.0;
        const Hypothesis h = beam_search(m, TokenSeq{6, 7, 8}, BeamConfig{});
        CHECK(h.tokens == TokenSeq{11, special::kEos});
        CHECK_FALSE(h.truncated);
    }
    SUBCASE("BT tag, PAD, BOS and MASK are never produced") {
        bias[special::kBtTag] = 80.0;
        bias[special::kPad] = 80.0;
        bias[special::kBos] = 80.0;
        bias[special::kMask] = 80.0;
        bias[special::kEos] = 10.0;
        const Hypothesis h = beam_search(m, TokenSeq{6}, BeamConfig{});
        for (TokenId t : h.output()) {
            CHECK(t != special::kBtTag);
            CHECK(t != special::kPad);
            CHECK(t != special::kBos);
            CHECK(t != special::kMask);
        }
    }
}

TEST_CASE("beam 5 never scores below beam 1") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        std::mt19937_64 rng(seed);
        const Model m = build_model(small_config(), 1000 + seed);
        const TokenSeq src = random_seq(rng, 2 + seed % 5);
        BeamConfig one;
        one.beam_size = 1;
        const Hypothesis g = beam_search(m, src, one);
        const Hypothesis b = beam_search(m, src, BeamConfig{});
        CHECK(b.score >= g.score);
    }
}

TEST_CASE("decoding is independent of batch composition") {
    const Model m = build_model(small_config(), 21);
    std::mt19937_64 rng(21);
    std::vector<TokenSeq> sources;
    for (int i = 0; i < 12; ++i) sources.push_back(random_seq(rng, 1 + i % 6));
    const auto together = beam_search(m, sources, BeamConfig{}, 5);
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const Hypothesis alone = beam_search(m, sources[i], BeamConfig{});
        CHECK(alone.tokens == together[i].tokens);
        CHECK(alone.score == together[i].score);
    }
}

TEST_CASE("back_translate") {
    const Model reverse = build_model(small_config(), 5);
    std::mt19937_64 rng(5);
    std::vector<TokenSeq> mono;
    for (int i = 0; i < 20; ++i) mono.push_back(random_seq(rng, 2 + i % 4));
    for (bool tagged : {false, true}) {
        const BackTranslation bt = back_translate(reverse, mono, BeamConfig{}, tagged);
        REQUIRE(bt.pairs.size() == mono.size());
        REQUIRE(bt.hypotheses.size() == mono.size());
        for (std::size_t i = 0; i < mono.size(); ++i) {
            CHECK(bt.pairs[i].tgt == mono[i]);
            CHECK(bt.pairs[i].origin() == Origin::Synthetic);
            CHECK((bt.pairs[i].src.front() == special::kBtTag) == tagged);
            for (std::size_t j = 1; j < bt.pairs[i].src.size(); ++j) CHECK(bt.pairs[i].src[j] != special::kBtTag);
        }
    }
}

TEST_CASE("beam config validation") {
    BeamConfig c;
    c.beam_size = 0;
    CHECK_THROWS_AS(c.validate(), DecodeError);
    c.beam_size = 2;
    c.length_penalty = -1;
    CHECK_THROWS_AS(c.validate(), DecodeError);
    CHECK(BeamConfig{}.max_len_for(5) == 18);
}
