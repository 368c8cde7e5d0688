#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <json.hpp>

#include "ptbt/config_io.hpp"
#include "ptbt/harness.hpp"
#include "ptbt/util.hpp"

#ifndef PTBT_VERSION
#define PTBT_VERSION "dev"
#endif

using namespace ptbt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Args {
    std::string command;
    std::string config;
    std::string out = "runs";
    std::vector<std::uint64_t> seeds;
    std::string job = "vanilla";
    std::string input;
    std::string output;
    std::string table;
    bool tsv = false;
    bool quiet = false;
    std::string manifest;  // rerun only
};

json args_json(const Args& a) {
    return {{"seeds", a.seeds}, {"job", a.job}, {"input", a.input}, {"output", a.output}, {"table", a.table}};
}

// Every name the harness knows how to train.
JobSpec job_by_name(const std::string& name) {
    if (name == "vanilla") return vanilla_job();
    for (const char* m : {"NY", "YN", "YY"}) {
        if (name == std::string("pt-") + m) return pt_probe_job(InitMask::parse(m));
        if (name == std::string("bt-probe-") + m) return bt_probe_job(m);
    }
    for (const auto& s : matrix_systems())
        if (matrix_job(s).name == name) return matrix_job(s);
    if (name == "reverse") return {"reverse", {}, TrainData::Reverse, {}, false};
    throw HarnessError("unknown job '" + name +
                       "' (vanilla, pt-NY|YN|YY, bt-probe-NY|YN|YY, bt, bt-pt, tagged-bt, tagged-bt-pt, reverse)");
}

struct Outcome {
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;  // artifact path -> digest
    json metrics = json::object();
};

void add_output(Outcome& o, const fs::path& p) { o.outputs[p.string()] = file_digest(p); }

fs::path save_table(Workspace& ws, Outcome& o, const ReportTable& t, const std::string& stem) {
    const fs::path dir = ws.dir() / "reports";
    t.save(dir, stem);
    for (const char* ext : {".json", ".tsv", ".txt"}) add_output(o, dir / (stem + ext));
    o.metrics[stem] = t.to_json();
    std::cout << t.to_text() << '\n';
    return dir / (stem + ".json");
}

void job_outputs(Workspace& ws, Outcome& o, const std::string& name, std::uint64_t seed) {
    const fs::path d = ws.job_dir(name, seed);
    add_output(o, d / "model.ckpt");
    o.metrics[name + "/seed" + std::to_string(seed)] = RunManifest::load(d / "manifest.json").metrics;
}

Outcome run(const Args& a, const ExperimentConfig& cfg, const fs::path& out) {
    Outcome o;
    if (a.command == "report") {
        const ReportTable t = ReportTable::load(a.table);
        std::cout << (a.tsv ? t.to_tsv() : t.to_text());
        o.inputs["table"] = file_digest(a.table);
        return o;
    }
    Workspace ws(out, cfg);
    const DataBundle& d = ws.data();
    for (const auto& [k, v] : d.digests) o.inputs[k] = v;
    const auto& seeds = ws.config().seeds;

    if (a.command == "gen-data") {
        for (const auto& e : fs::directory_iterator(ws.dir() / "data"))
            if (e.is_regular_file()) add_output(o, e.path());
        o.metrics["vocab_size"] = d.vocab.size();
        o.metrics["bitext_pairs"] = d.bitext.size();
        std::cout << "data in " << (ws.dir() / "data").string() << " (vocab " << d.vocab.size() << ")\n";
    } else if (a.command == "pretrain") {
        for (auto s : seeds) {
            const PretrainResult r = run_pretrain(ws, s);
            add_output(o, ws.job_dir("pretrain", s) / "model.ckpt");
            o.metrics["seed" + std::to_string(s)] = r.manifest.metrics;
        }
    } else if (a.command == "train") {
        const JobSpec spec = job_by_name(a.job);
        for (auto s : seeds) {
            ws.job(spec, s);
            job_outputs(ws, o, spec.name, s);
        }
    } else if (a.command == "backtranslate") {
        for (auto s : seeds) {
            const Corpus& bt = ws.back_translations(s);
            const fs::path dir = ws.job_dir("backtranslate", s);
            for (const char* f : {"bt.src", "bt.tgt", "bt.meta"}) add_output(o, dir / f);
            o.metrics["seed" + std::to_string(s)] = {{"pairs", bt.size()}, {"digest", corpus_digest(bt)}};
        }
    } else if (a.command == "translate") {
        if (a.input.empty() || a.output.empty()) throw HarnessError("translate needs --input and --output");
        if (seeds.size() != 1) throw HarnessError("translate needs exactly one --seed");
        const TrainedModel m = ws.job(job_by_name(a.job), seeds[0]);
        std::vector<TokenSeq> src;
        for (const auto& l : read_lines(a.input)) src.push_back(d.vocab.encode(split_words(l)));
        std::vector<std::string> lines;
        for (const auto& t : translate(m.model, src, ws.config().beam)) lines.push_back(join_words(d.vocab.decode(t)));
        write_lines(a.output, lines);
        o.inputs["input"] = file_digest(a.input);
        add_output(o, a.output);
        o.metrics["sentences"] = lines.size();
    } else if (a.command == "evaluate") {
        const JobSpec spec = job_by_name(a.job);
        for (auto s : seeds) {
            const EvalReport r = ws.evaluate_job(spec, s);
            add_output(o, ws.job_dir(spec.name, s) / "eval" / "report.json");
            add_output(o, ws.job_dir(spec.name, s) / "eval" / "hyps.txt");
            o.metrics["seed" + std::to_string(s)] = r.to_json();
            std::cout << spec.name << " seed " << s << ": BLEU " << format_score(r.bleu) << " TER " << format_score(r.ter)
                      << '\n';
        }
    } else if (a.command == "probe-pt") {
        save_table(ws, o, run_pt_probe(ws), "pt_probe");
    } else if (a.command == "probe-bt") {
        save_table(ws, o, run_bt_probe(ws), "bt_probe");
    } else if (a.command == "matrix") {
        save_table(ws, o, run_main_matrix(ws), "matrix");
    } else if (a.command == "analyze") {
        const auto [origin, freq] = run_analysis(ws);
        save_table(ws, o, origin, "analysis_origin");
        save_table(ws, o, freq, "analysis_fmeasure");
    } else {
        throw HarnessError("unknown command '" + a.command + "'");
    }
    return o;
}

std::string manifest_stem(const Args& a, const ExperimentConfig& cfg) {
    std::string s = a.command;
    if (a.command == "train" || a.command == "evaluate" || a.command == "translate") s += "-" + a.job;
    // the seed subset is part of the name; the full config is in the body
    s += "-" + json_hash({{"args", args_json(a)}, {"config", cfg.to_json()}}).substr(0, 12);
    return s;
}

fs::path write_manifest(const Args& a, const ExperimentConfig& cfg, const fs::path& out, const Outcome& o) {
    RunManifest m;
    m.kind = "cli:" + a.command;
    m.seed = cfg.seeds.front();
    m.config_hash = cfg.hash();
    m.config = {{"command", a.command}, {"args", args_json(a)}, {"experiment", cfg.to_json()}, {"tool_version", PTBT_VERSION}};
    m.inputs = o.inputs;
    m.outputs = o.outputs;
    m.metrics = o.metrics;
    const fs::path dir = a.command == "report" ? out / "manifests" : out / ("run-" + cfg.hash().substr(0, 16)) / "manifests";
    fs::create_directories(dir);
    const fs::path p = dir / (manifest_stem(a, cfg) + ".json");
    m.save(p);
    return p;
}

ExperimentConfig load_config(const Args& a) {
    ExperimentConfig cfg = a.config.empty() ? ExperimentConfig::desk_default() : ExperimentConfig::load(a.config);
    if (!a.seeds.empty()) cfg.seeds = a.seeds;
    cfg.validate();
    return cfg;
}

// Runs a recorded command again under `out` and compares every metric.
int rerun(const std::string& manifest_path, const fs::path& out) {
    const RunManifest old = RunManifest::load(manifest_path);
    Args a;
    a.command = old.config.at("command").get<std::string>();
    const json& args = old.config.at("args");
    a.seeds = args.at("seeds").get<std::vector<std::uint64_t>>();
    a.job = args.at("job").get<std::string>();
    a.input = args.at("input").get<std::string>();
    a.output = args.at("output").get<std::string>();
    a.table = args.at("table").get<std::string>();
    ExperimentConfig cfg = ExperimentConfig::from_json(old.config.at("experiment"));
    if (cfg.hash() != old.config_hash) throw HarnessError("manifest config does not hash to its recorded value");
    const Outcome o = run(a, cfg, out);
    const fs::path p = write_manifest(a, cfg, out, o);
    const bool same_metrics = o.metrics.dump() == old.metrics.dump();
    const bool same_inputs = o.inputs == old.inputs;
    std::cout << "rerun manifest: " << p.string() << '\n'
              << "inputs " << (same_inputs ? "identical" : "DIFFER") << ", metrics "
              << (same_metrics ? "bit-identical" : "DIFFER") << '\n';
    if (!same_metrics) {
        std::cerr << "old: " << old.metrics.dump() << "\nnew: " << o.metrics.dump() << '\n';
    }
    return same_metrics && same_inputs ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pre-training and back-translation probing workbench"};
    app.set_version_flag("--version", PTBT_VERSION);
    app.require_subcommand(1);
    Args a;
    bool verbose = false;
    app.add_flag("-q,--quiet", a.quiet, "only errors and results");
    app.add_flag("-v,--verbose", verbose, "debug logging");

    auto common = [&](CLI::App* c, bool with_job) {
        c->add_option("-c,--config", a.config, "experiment config (JSON); desk defaults when absent")->check(CLI::ExistingFile);
        c->add_option("-o,--out", a.out, "root for run directories")->capture_default_str();
        c->add_option("-s,--seed", a.seeds, "restrict to these seeds");
        if (with_job) c->add_option("-j,--job", a.job, "job name")->capture_default_str();
    };
    struct Cmd {
        const char* name;
        const char* help;
        bool job;
    };
    const Cmd cmds[] = {{"gen-data", "generate the synthetic corpora", false},
                        {"pretrain", "train the denoising model", false},
                        {"train", "train one job", true},
                        {"backtranslate", "train the reverse model and back-translate the target monolingual data", false},
                        {"translate", "translate a file of whitespace-tokenised sentences", true},
                        {"evaluate", "decode and score the test set", true},
                        {"probe-pt", "initialisation probe (NN/NY/YN/YY)", false},
                        {"probe-bt", "freezing probe on bitext+BT (NN/NY/YN/YY)", false},
                        {"matrix", "six-system matrix", false},
                        {"analyze", "origin split and frequency-bucket f-measure for the six systems", false}};
    for (const auto& c : cmds) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        common(sub, c.job);
        if (std::string(c.name) == "translate") {
            sub->add_option("-i,--input", a.input, "input file")->required()->check(CLI::ExistingFile);
            sub->add_option("--output", a.output, "output file")->required();
        }
        sub->callback([&a, sub] { a.command = sub->get_name(); });
    }
    CLI::App* report = app.add_subcommand("report", "render a stored table");
    report->add_option("table", a.table, "table JSON")->required()->check(CLI::ExistingFile);
    report->add_option("-o,--out", a.out, "root for run directories")->capture_default_str();
    report->add_flag("--tsv", a.tsv, "TSV instead of aligned text");
    report->callback([&a] { a.command = "report"; });
    CLI::App* re = app.add_subcommand("rerun", "repeat a recorded command and compare its metrics");
    re->add_option("manifest", a.manifest, "manifest JSON")->required()->check(CLI::ExistingFile);
    re->add_option("-o,--out", a.out, "root for run directories")->required();
    re->callback([&a] { a.command = "rerun"; });

    CLI11_PARSE(app, argc, argv);
    set_log_level(a.quiet ? LogLevel::Quiet : verbose ? LogLevel::Debug : LogLevel::Info);

    try {
        if (a.command == "rerun") return rerun(a.manifest, a.out);
        const ExperimentConfig cfg = a.command == "report" ? ExperimentConfig::desk_default() : load_config(a);
        const Outcome o = run(a, cfg, a.out);
        const fs::path p = write_manifest(a, cfg, a.out, o);
        std::cerr << "manifest: " << p.string() << '\n';
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
