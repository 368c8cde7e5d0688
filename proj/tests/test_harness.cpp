#include <doctest.h>

#include <set>

#include "ptbt/config_io.hpp"
#include "ptbt/harness.hpp"
#include "ptbt/util.hpp"
#include "test_util.hpp"

using namespace ptbt;
using ptbt::testing::TempDir;
using nlohmann::json;

namespace {

ExperimentConfig tiny_config() {
    ExperimentConfig c = ExperimentConfig::desk_default();
    c.task.vocab_size = 12;
    c.task.min_len = 2;
    c.task.max_len = 6;
    c.data = {40, 10, 6, 6, 60, 30, 1};
    c.model.num_layers = 1;
    c.model.d_model = 8;
    c.model.num_heads = 2;
    c.model.d_ff = 16;
    c.model.max_positions = 16;
    for (TrainConfig* t : {&c.pretrain, &c.train, &c.finetune}) {
        t->total_steps = 20;
        t->warmup_steps = 5;
        t->batch_tokens = 64;
        t->validation_interval = 10;
    }
    c.finetune.total_steps = 10;
    c.beam.beam_size = 2;
    c.seeds = {1};
    return c;
}

}  // namespace

TEST_CASE("experiment config: JSON round trip and hash") {
    const ExperimentConfig c = ExperimentConfig::desk_default();
    const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(ExperimentConfig::from_json(json::object()).hash() == c.hash());

    ExperimentConfig other = c;
    other.seeds = {7};
    other.references = false;
    CHECK(other.hash() == c.hash());
    other.train.learning_rate *= 2;
    CHECK(other.hash() != c.hash());
}

TEST_CASE("experiment config: partial sections override defaults key by key") {
    const auto c = ExperimentConfig::from_json(json::parse(R"({"train": {"total_steps": 7}, "seeds": [4, 5]})"));
    CHECK(c.train.total_steps == 7);
    CHECK(c.train.learning_rate == ExperimentConfig::desk_default().train.learning_rate);
    CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
}

TEST_CASE("experiment config: unknown keys are rejected by name") {
    auto message = [](const char* text) -> std::string {
        try {
            ExperimentConfig::from_json(json::parse(text));
        } catch (const ConfigError& e) {
            return e.what();
        }
        return "";
    };
    CHECK(message(R"({"seedz": [1]})").find("seedz") != std::string::npos);
    CHECK(message(R"({"train": {"learnig_rate": 0.1}})").find("learnig_rate") != std::string::npos);
    CHECK(message(R"({"model": {"layers": 2}})").find("layers") != std::string::npos);
    CHECK(message(R"({"beam": {"beam": 2}})").find("beam") != std::string::npos);
    CHECK(message(R"({"data": {"bitxt": 10}})").find("bitxt") != std::string::npos);
    CHECK(message(R"({"model": {"src_vocab_size": 10}})").find("src_vocab_size") != std::string::npos);
    CHECK(message(R"({"seeds": []})") != "");
    CHECK(message(R"({"seeds": [1, 1]})") != "");
    CHECK(message(R"({"train": {"total_steps": "many"}})") != "");
}

TEST_CASE("synthetic data is deterministic and shaped by the config") {
    const ExperimentConfig c = tiny_config();
    const DataBundle a = generate_data(c);
    const DataBundle b = generate_data(c);
    CHECK(a.digests == b.digests);
    CHECK(a.bitext.size() == 40);
    CHECK(a.valid.size() == 10);
    CHECK(a.test.size() == 12);
    CHECK(a.mono_src.size() == 60);
    CHECK(a.mono_tgt.size() == 60);
    CHECK(a.mono_bt.size() == 30);

    std::size_t src_orig = 0;
    for (const auto& p : a.bitext) {
        CHECK(p.origin() != Origin::Synthetic);
        src_orig += p.origin() == Origin::SrcOriginal;
    }
    CHECK(src_orig == 20);
    std::size_t test_src = 0;
    for (const auto& p : a.test) test_src += p.origin() == Origin::SrcOriginal;
    CHECK(test_src == 6);

    // frequencies count genuine bitext targets only
    std::uint64_t total = 0;
    for (const auto& [_, n] : a.freqs) total += n;
    std::uint64_t expected = 0;
    for (const auto& p : a.bitext) expected += p.tgt.size();
    CHECK(total == expected);

    ExperimentConfig other = c;
    other.task.seed = 2;
    CHECK(generate_data(other).digests.at("bitext") != a.digests.at("bitext"));
}

TEST_CASE("synthetic data survives a save/load round trip") {
    TempDir tmp("ptbt-data");
    const DataBundle a = generate_data(tiny_config());
    save_data(tmp.path(), a);
    const DataBundle b = load_data(tmp.path());
    CHECK(b.digests == a.digests);
    CHECK(b.freqs == a.freqs);
    CHECK(b.vocab.size() == a.vocab.size());
}

TEST_CASE("job specs") {
    CHECK(pt_probe_job(InitMask::parse("NN")).name == "vanilla");
    CHECK(bt_probe_job("NN").name == "vanilla");
    CHECK(pt_probe_job(InitMask::parse("YN")).name == "pt-YN");
    CHECK(pt_probe_job(InitMask::parse("YN")).init.mask == InitMask{true, false});

    const JobSpec ny = bt_probe_job("NY");
    CHECK(ny.init.kind == InitSpec::Kind::Vanilla);
    CHECK(ny.finetune);
    CHECK(ny.data == TrainData::BitextBt);
    CHECK(ny.freeze == FreezeMask::from_update_label("NY"));
    CHECK_THROWS_AS(bt_probe_job("XY"), TrainError);

    std::set<std::string> names;
    for (const auto& s : matrix_systems()) names.insert(matrix_job(s).name);
    CHECK(names.size() == 6);
    CHECK(matrix_job("+PT").name == "pt-YY");
    CHECK(matrix_job("+BT").init.kind == InitSpec::Kind::Scratch);
    CHECK(matrix_job("+Tagged BT+PT").data == TrainData::BitextTaggedBt);
    CHECK(matrix_job("+Tagged BT+PT").init.mask == InitMask{true, true});
    CHECK_THROWS_AS(matrix_job("+Nope"), HarnessError);
}

TEST_CASE("analysis tables: the identity system is maximal everywhere") {
    const DataBundle d = generate_data(tiny_config());
    std::vector<Words> refs;
    std::vector<Origin> origins;
    for (const auto& p : d.test) {
        refs.push_back(d.vocab.decode(p.tgt));
        origins.push_back(p.origin());
    }
    const EvalReport r = evaluate(refs, refs, origins, d.freqs);
    std::map<std::string, std::map<std::uint64_t, EvalReport>> reports;
    for (const auto& s : matrix_systems()) reports[s][1] = r;
    const auto [origin, freq] = analysis_tables(matrix_systems(), reports, true);
    for (const auto& s : matrix_systems()) {
        for (const char* c : {"All", "Src", "Tgt"}) CHECK(origin.cell(s, c) == doctest::Approx(100.0));
        CHECK(freq.cell(s, "All") == doctest::Approx(100.0));
        for (const char* c : {"Low", "High"}) {
            const Cell v = freq.cell(s, c);
            // a bucket can be empty on a tiny test set
            if (v) CHECK(*v == doctest::Approx(100.0));
        }
    }
    CHECK(origin.row("+Tagged BT+PT").reference.size() == 3);
    CHECK(origin.row("Vanilla").reference.empty());
    CHECK(origin.baseline.empty());
    const auto off = analysis_tables(matrix_systems(), reports, false);
    CHECK_FALSE(off.first.has_reference());
}

TEST_CASE("workspace: tiny end-to-end run is cached and reproducible") {
    set_log_level(LogLevel::Quiet);
    TempDir tmp("ptbt-ws");
    const ExperimentConfig cfg = tiny_config();
    ReportTable pt, bt, matrix;
    {
        Workspace ws(tmp.path(), cfg);
        CHECK(ws.dir().filename().string() == "run-" + cfg.hash().substr(0, 16));
        pt = run_pt_probe(ws);
        bt = run_bt_probe(ws);
        matrix = run_main_matrix(ws);

        // probe cells share data order and hyperparameters; only the init differs
        std::set<std::string> corpora, trains, inits;
        for (const char* m : {"NN", "NY", "YN", "YY"}) {
            const auto man = ws.job(pt_probe_job(InitMask::parse(m)), 1).manifest;
            corpora.insert(man.inputs.at("train_corpus"));
            trains.insert(man.config.at("train").dump());
            inits.insert(man.inputs.at("init_params"));
        }
        CHECK(corpora.size() == 1);
        CHECK(trains.size() == 1);
        CHECK(inits.size() == 4);

        // BT fine-tunes start from the vanilla checkpoint and keep frozen groups
        const TrainedModel vanilla = ws.job(vanilla_job(), 1);
        std::vector<std::string> all;
        for (const auto& [k, _] : vanilla.model.params()) all.push_back(k);
        const std::string vanilla_params = params_digest(vanilla.model, all);
        for (const char* m : {"NY", "YN", "YY"}) {
            const auto man = ws.job(bt_probe_job(m), 1).manifest;
            CHECK(man.inputs.at("init_params") == vanilla_params);
            if (std::string(m) != "YY") CHECK(man.metrics.at("frozen_params_unchanged").get<bool>());
        }
    }
    CHECK(pt.cell("NN", "BLEU") == matrix.cell("Vanilla", "BLEU"));
    CHECK(bt.cell("NN", "BLEU") == matrix.cell("Vanilla", "BLEU"));
    CHECK(pt.cell("YY", "BLEU") == matrix.cell("+PT", "BLEU"));
    for (const auto& row : matrix.rows)
        for (const auto& c : row.cells(2)) CHECK(c.has_value());

    // a second workspace over the same directory reads everything back
    Workspace again(tmp.path(), cfg);
    CHECK(run_main_matrix(again).to_json() == matrix.to_json());
    CHECK(run_pt_probe(again).to_json() == pt.to_json());

    // and a fresh directory recomputes the same numbers
    TempDir tmp2("ptbt-ws");
    Workspace fresh(tmp2.path(), cfg);
    CHECK(run_pt_probe(fresh).to_json() == pt.to_json());

    // manifests hold nothing run-dependent, wall time included
    const JobSpec yy = pt_probe_job(InitMask::parse("YY"));
    CHECK(fresh.job(yy, 1).manifest.to_json() == again.job(yy, 1).manifest.to_json());
}
