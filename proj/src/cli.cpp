#include "fluxattn/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fluxattn/io_util.hpp"
#include "fluxattn/pipeline.hpp"

namespace fluxattn::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string git_describe() {
    FILE* p = ::popen("git describe --always --dirty 2>/dev/null", "r");
    if (!p) return "unknown";
    char buf[128] = {0};
    std::string out;
    while (fgets(buf, sizeof(buf), p)) out += buf;
    ::pclose(p);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void require_artifact(const std::string& path, const char* what) {
    if (!fs::exists(path))
        throw std::runtime_error(std::string("missing artifact: ") + what + " " + path);
}

/// Every command drops a manifest next to its outputs: resolved config,
/// seed, input hashes, and the repo revision. No timestamps, so reruns are
/// byte-identical.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& config, const std::map<std::string, std::uint64_t>& inputs) {
    json m;
    m["command"] = command;
    m["config"] = config;
    m["git"] = git_describe();
    json ins = json::object();
    for (const auto& [path, hash] : inputs) ins[path] = hex64(hash);
    m["inputs"] = ins;
    write_text_file(out_dir + "/manifest.json", m.dump(2) + "\n");
}

std::string ensure_out_dir(const std::string& out) {
    fs::create_directories(out);
    return out;
}

json decode_report_json(const DecodeReport& rep, const DecodeConfig& cfg, double tau) {
    json j;
    j["tau"] = tau;
    j["policy"] = policy_name(cfg.policy);
    j["mode"] = cfg.mode == RunMode::Simulated ? "sim" : "exec";
    j["mean_makespan"] = rep.mean_makespan();
    j["mean_allocated_budget"] = rep.mean_allocated_budget();
    j["frac_heads_within_tau"] = rep.deviation_quantile_at_tau(tau);
    json steps = json::array();
    for (const auto& s : rep.steps) {
        json js;
        js["step"] = s.step;
        js["makespan"] = s.makespan;
        js["accel_idle_ratio"] = s.accel_idle_ratio;
        js["scheduled_tasks"] = s.scheduled_tasks;
        js["streaming_groups"] = s.streaming_groups;
        js["mean_allocated_budget"] = s.mean_allocated_budget;
        js["total_volume"] = s.total_volume;
        js["head_deviations"] = s.head_deviations;
        steps.push_back(std::move(js));
    }
    j["steps"] = std::move(steps);
    return j;
}

void write_plan_dump(const DecodeReport& rep, const std::string& path) {
    std::ofstream out(path);
    for (const auto& p : rep.plans) out << p.to_json() << "\n";
}

struct CompareRow {
    std::string config;
    std::string policy = "priority";
    double tau = 0.0;
    int blk = 0;
    double budget = 0.0;
    double mean_makespan = 0.0;
    double mean_allocated = 0.0;
    double frac_within_tau = 0.0;
    double mean_deviation = 0.0;
    double p95_deviation = 0.0;
    double tasks_per_step = 0.0;
    double streaming_groups_per_step = 0.0;
    double accel_idle_ratio = 0.0;
};

CompareRow summarize(const std::string& name, const DecodeReport& rep, double eval_tau) {
    CompareRow r;
    r.config = name;
    r.tau = eval_tau;
    r.mean_makespan = rep.mean_makespan();
    r.mean_allocated = rep.mean_allocated_budget();
    r.frac_within_tau = rep.deviation_quantile_at_tau(eval_tau);
    std::vector<double> devs;
    double tasks = 0.0, streaming = 0.0, idle = 0.0;
    for (const auto& s : rep.steps) {
        devs.insert(devs.end(), s.head_deviations.begin(), s.head_deviations.end());
        tasks += double(s.scheduled_tasks);
        streaming += double(s.streaming_groups);
        idle += s.accel_idle_ratio;
    }
    if (!devs.empty()) {
        double sum = 0.0;
        for (double d : devs) sum += d;
        r.mean_deviation = sum / double(devs.size());
        std::sort(devs.begin(), devs.end());
        r.p95_deviation = devs[std::size_t(0.95 * double(devs.size() - 1))];
    }
    const double n = rep.steps.empty() ? 1.0 : double(rep.steps.size());
    r.tasks_per_step = tasks / n;
    r.streaming_groups_per_step = streaming / n;
    r.accel_idle_ratio = idle / n;
    return r;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "config,policy,tau,blk,budget,mean_makespan,mean_allocated_budget,"
          "frac_heads_within_tau,mean_deviation,p95_deviation,tasks_per_step,"
          "streaming_groups_per_step,accel_idle_ratio\n";
    for (const auto& r : rows)
        os << r.config << "," << r.policy << "," << r.tau << "," << r.blk << "," << r.budget
           << "," << r.mean_makespan << "," << r.mean_allocated << "," << r.frac_within_tau
           << "," << r.mean_deviation << "," << r.p95_deviation << "," << r.tasks_per_step
           << "," << r.streaming_groups_per_step << "," << r.accel_idle_ratio << "\n";
    return os.str();
}

// ---------------------------------------------------------------- commands

int cmd_gen(const std::string& spec_path, std::uint64_t seed_override, bool has_seed,
            const std::string& out) {
    WorkloadSpec spec;
    std::uint64_t spec_hash = 0;
    if (!spec_path.empty()) {
        require_artifact(spec_path, "workload spec");
        const std::string text = read_text_file(spec_path);
        spec = WorkloadSpec::from_json(text);
        spec_hash = fnv1a_bytes(text.data(), text.size());
    }
    if (has_seed) spec.seed = seed_override;

    ensure_out_dir(out);
    const Workload w = generate(spec);
    export_trace(w, out + "/trace.fxt", spec_hash);
    write_text_file(out + "/spec.json", spec.to_json() + "\n");

    std::map<std::string, std::uint64_t> inputs;
    if (!spec_path.empty()) inputs[spec_path] = spec_hash;
    write_manifest(out, "gen", json::parse(spec.to_json()), inputs);
    std::cout << "wrote " << out << "/trace.fxt (" << w.layers.size() << " layers)\n";
    return 0;
}

int cmd_label(const std::string& trace_path, double tau, std::uint32_t sample, int threads,
              const std::string& out) {
    require_artifact(trace_path, "trace file");
    const Workload w = import_trace(trace_path);
    LabelRunConfig cfg;
    cfg.budget.tau = tau;
    cfg.budget.sink_tokens = w.spec.sink_tokens;
    cfg.budget.local_tokens = w.spec.local_tokens;
    cfg.sample = sample;
    cfg.threads = threads;

    ensure_out_dir(out);
    const std::uint64_t trace_hash = fnv1a_file(trace_path);
    const ScanDataset ds = build_scan_dataset(w, cfg);
    write_scan(ds, out + "/scan.fxs", trace_hash);

    json config;
    config["tau"] = tau;
    config["sample"] = sample;
    config["trace"] = trace_path;
    write_manifest(out, "label", config, {{trace_path, trace_hash}});
    std::cout << "wrote " << out << "/scan.fxs (" << ds.rows.size() << " rows)\n";
    return 0;
}

int cmd_fit(const std::string& scan_path, const std::string& out) {
    require_artifact(scan_path, "scan file");
    const ScanDataset ds = read_scan(scan_path);
    const std::uint64_t scan_hash = fnv1a_file(scan_path);

    ensure_out_dir(out);
    FitDiagnostics diag;
    const LabelDataset labels = fit_labels(ds, &diag);
    write_labels(labels, out + "/labels.fxl", scan_hash);

    std::ostringstream os;
    os.precision(17);
    os << "row,free_intercept,max_abs_residual,anchor_gap\n";
    for (std::size_t i = 0; i < diag.free_intercept.size(); ++i)
        os << i << "," << diag.free_intercept[i] << "," << diag.max_abs_residual[i] << ","
           << diag.anchor_gap[i] << "\n";
    write_text_file(out + "/fit_diagnostics.csv", os.str());

    json config;
    config["scan"] = scan_path;
    write_manifest(out, "fit", config, {{scan_path, scan_hash}});
    std::cout << "wrote " << out << "/labels.fxl (" << labels.rows.size() << " rows)\n";
    return 0;
}

int cmd_train(const std::string& labels_path, const TrainConfig& tc, const std::string& out) {
    require_artifact(labels_path, "label file");
    const LabelDataset ds = read_labels(labels_path);
    const std::uint64_t labels_hash = fnv1a_file(labels_path);

    ensure_out_dir(out);
    const TrainResult res = train(ds, tc);
    save_model(res.model, out + "/model.fxp", labels_hash);

    std::ostringstream curve;
    curve.precision(17);
    curve << "step,loss\n";
    for (std::size_t i = 0; i < res.loss_curve.size(); ++i)
        curve << (i + 1) << "," << res.loss_curve[i] << "\n";
    write_text_file(out + "/loss_curve.csv", curve.str());

    const EvalMetrics metrics = evaluate(res.model, ds);
    json mj;
    mj["val_loss_initial"] = res.val_loss_initial;
    mj["val_loss_final"] = res.val_loss_final;
    mj["train_rows"] = res.train_rows;
    mj["val_rows"] = res.val_rows;
    mj["param_count"] = res.model.param_count();
    mj["mse_bgt0"] = metrics.mse_bgt0;
    mj["mse_k"] = metrics.mse_k;
    mj["s_accuracy"] = metrics.s_accuracy;
    mj["s_auc"] = metrics.s_auc;
    mj["input_hash"] = hex64(labels_hash);
    write_text_file(out + "/metrics.json", mj.dump(2) + "\n");

    json config;
    config["labels"] = labels_path;
    config["w_bgt"] = tc.w_bgt;
    config["w_k"] = tc.w_k;
    config["w_s"] = tc.w_s;
    config["batch"] = tc.batch;
    config["steps"] = tc.steps;
    config["lr"] = tc.lr;
    config["lr_decay"] = tc.lr_decay;
    config["seed"] = tc.seed;
    config["val_fraction"] = tc.val_fraction;
    write_manifest(out, "train", config, {{labels_path, labels_hash}});
    std::cout << "trained model (" << res.model.param_count() << " params), val loss "
              << res.val_loss_initial << " -> " << res.val_loss_final << "\n";
    return 0;
}

int cmd_decode(const std::string& trace_path, const std::string& model_path, bool oracle,
               double tau, const std::string& policy, const std::string& mode, int fixed_blk,
               double fixed_budget, const std::string& out) {
    require_artifact(trace_path, "trace file");
    const Workload w = import_trace(trace_path);
    std::map<std::string, std::uint64_t> inputs;
    inputs[trace_path] = fnv1a_file(trace_path);

    DecodeConfig cfg;
    cfg.tau = tau;
    cfg.policy = parse_policy(policy);
    cfg.mode = mode == "exec" ? RunMode::Executed : RunMode::Simulated;
    cfg.profile = WorkerProfile::standard(std::size_t(w.spec.head_dim));

    PredictorModel model;
    if (!model_path.empty()) {
        require_artifact(model_path, "model file");
        model = load_model(model_path);
        inputs[model_path] = fnv1a_file(model_path);
        cfg.source = PropertySource::Predictor;
        cfg.model = &model;
    } else if (!oracle) {
        throw std::runtime_error("missing artifact: model file (pass --model or --oracle)");
    }
    if (fixed_blk > 0) cfg.fixed = {fixed_blk, fixed_budget};

    ensure_out_dir(out);
    const DecodeReport rep = run_decode(w, cfg);
    json j = decode_report_json(rep, cfg, tau);
    j["trace"] = trace_path;
    j["inputs"] = json::object();
    for (const auto& [p, h] : inputs) j["inputs"][p] = hex64(h);
    write_text_file(out + "/decode_report.json", j.dump(2) + "\n");
    write_plan_dump(rep, out + "/plans.jsonl");

    json config;
    config["tau"] = tau;
    config["policy"] = policy;
    config["mode"] = mode;
    config["oracle"] = oracle;
    config["model"] = model_path;
    config["fixed_blk"] = fixed_blk;
    config["fixed_budget"] = fixed_budget;
    write_manifest(out, "decode", config, inputs);
    std::cout << "decode: mean makespan " << rep.mean_makespan() << " s, budget "
              << rep.mean_allocated_budget() << ", within-tau "
              << rep.deviation_quantile_at_tau(tau) << "\n";
    return 0;
}

int cmd_compare(const std::string& trace_path, const std::string& model_path, double tau,
                const std::string& out) {
    require_artifact(trace_path, "trace file");
    const Workload w = import_trace(trace_path);
    std::map<std::string, std::uint64_t> inputs;
    inputs[trace_path] = fnv1a_file(trace_path);

    const WorkerProfile profile = WorkerProfile::standard(std::size_t(w.spec.head_dim));
    std::vector<CompareRow> rows;

    auto run_cfg = [&](DecodeConfig cfg, const std::string& name, double eval_tau) {
        cfg.profile = profile;
        const DecodeReport rep = run_decode(w, cfg);
        CompareRow r = summarize(name, rep, eval_tau);
        r.policy = policy_name(cfg.policy);
        if (cfg.fixed) {
            r.blk = cfg.fixed->first;
            r.budget = cfg.fixed->second;
        }
        rows.push_back(r);
        return rep;
    };

    { // FULL reference
        DecodeConfig cfg;
        cfg.full = true;
        cfg.tau = tau;
        run_cfg(cfg, "full", tau);
    }
    for (const auto& [blk, bgt] : std::vector<std::pair<int, double>>{
             {16, 0.05}, {16, 0.02}, {32, 0.05}, {32, 0.02}}) {
        DecodeConfig cfg;
        cfg.tau = tau;
        cfg.fixed = {blk, bgt};
        std::ostringstream name;
        name << "fixed_" << blk << "_" << bgt;
        run_cfg(cfg, name.str(), tau);
    }
    { // adaptive with oracle properties
        DecodeConfig cfg;
        cfg.tau = tau;
        run_cfg(cfg, "adaptive_oracle", tau);
    }
    PredictorModel model;
    if (!model_path.empty()) {
        require_artifact(model_path, "model file");
        model = load_model(model_path);
        inputs[model_path] = fnv1a_file(model_path);
        DecodeConfig cfg;
        cfg.tau = tau;
        cfg.source = PropertySource::Predictor;
        cfg.model = &model;
        run_cfg(cfg, "adaptive_predictor", tau);
    }
    { // score-coverage budgeting ablation
        DecodeConfig cfg;
        cfg.tau = tau;
        cfg.criterion = BudgetCriterion::ScoreCoverage;
        cfg.coverage = 0.95;
        run_cfg(cfg, "score95", tau);
    }
    { // own-norm output deviation ablation
        DecodeConfig cfg;
        cfg.tau = tau;
        cfg.criterion = BudgetCriterion::OutputOnly;
        run_cfg(cfg, "output_only", tau);
    }
    for (Policy p : {Policy::NoParallel, Policy::Uniform, Policy::LengthBased}) {
        DecodeConfig cfg;
        cfg.tau = tau;
        cfg.policy = p;
        run_cfg(cfg, std::string("adaptive_oracle_") + policy_name(p), tau);
    }
    for (double t : {0.02, 0.05, 0.10, 0.15, 0.20}) {
        DecodeConfig cfg;
        cfg.tau = t;
        std::ostringstream name;
        name << "tau_sweep_" << t;
        run_cfg(cfg, name.str(), t);
    }

    ensure_out_dir(out);
    write_text_file(out + "/compare.csv", compare_csv(rows));
    json config;
    config["tau"] = tau;
    config["trace"] = trace_path;
    config["model"] = model_path;
    write_manifest(out, "compare", config, inputs);
    std::cout << "wrote " << out << "/compare.csv (" << rows.size() << " configurations)\n";
    return 0;
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"fluxattn: hybrid sparse-attention testbed"};
    app.require_subcommand(1);

    // gen
    std::string spec_path, out_dir = "out";
    std::uint64_t seed = 1;
    auto* gen = app.add_subcommand("gen", "generate a synthetic workload trace");
    gen->add_option("--spec", spec_path, "workload spec JSON");
    auto* seed_opt = gen->add_option("--seed", seed, "seed override");
    gen->add_option("--out", out_dir, "output directory");

    // label
    std::string trace_path;
    double tau = 0.10;
    std::uint32_t sample = 0;
    int threads = 0;
    auto* label = app.add_subcommand("label", "oracle-scan budgets and features");
    label->add_option("--trace", trace_path, "trace file")->required();
    label->add_option("--tau", tau, "deviation threshold");
    label->add_option("--sample", sample, "sample id for the emitted rows");
    label->add_option("--threads", threads, "worker threads (0 = auto)");
    label->add_option("--out", out_dir, "output directory");

    // fit
    std::string scan_path;
    auto* fit = app.add_subcommand("fit", "fit budget curves into labels");
    fit->add_option("--scan", scan_path, "scan file")->required();
    fit->add_option("--out", out_dir, "output directory");

    // train
    std::string labels_path;
    TrainConfig tc;
    auto* tr = app.add_subcommand("train", "train the head-property predictor");
    tr->add_option("--labels", labels_path, "label file")->required();
    tr->add_option("--w-bgt", tc.w_bgt, "bgt0 loss weight");
    tr->add_option("--w-k", tc.w_k, "k loss weight");
    tr->add_option("--w-s", tc.w_s, "streaming loss weight");
    tr->add_option("--batch", tc.batch, "minibatch size");
    tr->add_option("--steps", tc.steps, "training steps");
    tr->add_option("--lr", tc.lr, "learning rate");
    tr->add_option("--lr-decay", tc.lr_decay, "per-step lr decay");
    tr->add_option("--seed", tc.seed, "training seed");
    tr->add_option("--val-frac", tc.val_fraction, "validation sample fraction");
    tr->add_option("--out", out_dir, "output directory");

    // decode
    std::string model_path, policy = "priority", mode = "sim";
    bool oracle = false;
    int fixed_blk = 0;
    double fixed_budget = 0.05;
    auto* dec = app.add_subcommand("decode", "run the online decode pipeline");
    dec->add_option("--trace", trace_path, "trace file")->required();
    dec->add_option("--model", model_path, "predictor model file");
    dec->add_flag("--oracle", oracle, "use oracle head properties");
    dec->add_option("--tau", tau, "deviation threshold");
    dec->add_option("--policy", policy, "priority|no_parallel|uniform|length");
    dec->add_option("--mode", mode, "sim|exec");
    dec->add_option("--blk", fixed_blk, "fixed granularity (with --budget)");
    dec->add_option("--budget", fixed_budget, "fixed per-head budget");
    dec->add_option("--out", out_dir, "output directory");

    // compare
    auto* cmp = app.add_subcommand("compare", "run the configuration grid");
    cmp->add_option("--trace", trace_path, "trace file")->required();
    cmp->add_option("--model", model_path, "predictor model file");
    cmp->add_option("--tau", tau, "deviation threshold");
    cmp->add_option("--out", out_dir, "output directory");

    std::vector<const char*> argv;
    argv.push_back("fluxattn");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return cmd_gen(spec_path, seed, seed_opt->count() > 0, out_dir);
        if (label->parsed()) return cmd_label(trace_path, tau, sample, threads, out_dir);
        if (fit->parsed()) return cmd_fit(scan_path, out_dir);
        if (tr->parsed()) return cmd_train(labels_path, tc, out_dir);
        if (dec->parsed())
            return cmd_decode(trace_path, model_path, oracle, tau, policy, mode, fixed_blk,
                              fixed_budget, out_dir);
        if (cmp->parsed()) return cmd_compare(trace_path, model_path, tau, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        const std::string what = e.what();
        return what.rfind("missing artifact", 0) == 0 ? 2 : 1;
    }
    return 0;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

} // namespace fluxattn::cli
