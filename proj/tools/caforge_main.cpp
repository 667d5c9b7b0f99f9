// caforge: dataset generation, training, evaluation, and report tables for
// learned and classic combinatorial-auction mechanisms.
//
// Exit codes: 0 success, 2 config error, 3 numerical abort, 4 IO failure.
// Every flag can also be set via environment variables prefixed CAFORGE_
// (e.g. CAFORGE_SEED=7).

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ca/checkpoint.hpp"
#include "ca/classic.hpp"
#include "ca/networks.hpp"
#include "ca/report.hpp"
#include "ca/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ca;

namespace {

std::string env_name(const std::string& flag) {
    std::string s = "CAFORGE_";
    for (char c : flag) s += c == '-' ? '_' : static_cast<char>(std::toupper(c));
    return s;
}

struct CommonSpec {
    std::string setting = "A";
    int bidders = 2;
    int items = 2;
    uint64_t seed = 0;
    std::string out_dir = ".";
    std::string noise = "multi";  // multi | all

    BundleNoise bundle_noise() const {
        if (noise == "multi") return BundleNoise::MultiOnly;
        if (noise == "all") return BundleNoise::AllBundles;
        throw std::invalid_argument("unknown noise mode '" + noise + "' (multi|all)");
    }
    Setting parsed_setting() const { return setting_from_string(setting); }
    AuctionConfig auction() const {
        auto cfg = AuctionConfig::make(bidders, items);
        if (parsed_setting() == Setting::C && bidders != 2)
            throw std::invalid_argument("setting C requires exactly 2 bidders");
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonSpec& spec) {
    cmd->add_option("--setting", spec.setting, "valuation setting A|B|C")->envname(env_name("setting"));
    cmd->add_option("--n", spec.bidders, "bidder count")->envname(env_name("n"));
    cmd->add_option("--m", spec.items, "item count")->envname(env_name("m"));
    cmd->add_option("--seed", spec.seed, "root seed; all streams derive from it")
        ->envname(env_name("seed"));
    cmd->add_option("--out-dir", spec.out_dir, "output directory")->envname(env_name("out-dir"));
    cmd->add_option("--noise", spec.noise, "bundle noise on multi-item bundles only, or all bundles")
        ->envname(env_name("noise"));
}

void from_json_train(const json& j, TrainConfig& c) {
    if (j.contains("iterations")) c.iterations = j["iterations"];
    if (j.contains("batch")) c.batch = j["batch"];
    if (j.contains("inner_steps_train")) c.inner_steps_train = j["inner_steps_train"];
    if (j.contains("inner_steps_eval")) c.inner_steps_eval = j["inner_steps_eval"];
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"];
    if (j.contains("misreport_lr")) c.misreport_lr = j["misreport_lr"];
    if (j.contains("misreport_init_noise")) c.misreport_init_noise = j["misreport_init_noise"];
    if (j.contains("misreport_domain"))
        c.misreport_domain = j["misreport_domain"] == "nonnegative" ? MisreportDomain::NonNegative
                                                                    : MisreportDomain::Support;
    if (j.contains("gamma_w")) c.gamma_w = j["gamma_w"];
    if (j.contains("rho")) c.rho = j["rho"];
    if (j.contains("alpha")) c.alpha = j["alpha"];
    if (j.contains("rgt_start")) c.rgt_start = j["rgt_start"];
    if (j.contains("rgt_end")) c.rgt_end = j["rgt_end"];
    if (j.contains("w_rgt_init")) c.w_rgt_init = j["w_rgt_init"];
    if (j.contains("beta1")) c.beta1 = j["beta1"];
    if (j.contains("beta2")) c.beta2 = j["beta2"];
    if (j.contains("eps")) c.eps = j["eps"];
    if (j.contains("scheduler_max_regret")) c.scheduler_max_regret = j["scheduler_max_regret"];
    if (j.contains("log_every")) c.log_every = j["log_every"];
    if (j.contains("val_every")) c.val_every = j["val_every"];
    if (j.contains("val_profiles")) c.val_profiles = j["val_profiles"];
    if (j.contains("checkpoint_every")) c.checkpoint_every = j["checkpoint_every"];
}

json to_json_train(const TrainConfig& c) {
    return {{"iterations", c.iterations},
            {"batch", c.batch},
            {"inner_steps_train", c.inner_steps_train},
            {"inner_steps_eval", c.inner_steps_eval},
            {"learning_rate", c.learning_rate},
            {"misreport_lr", c.misreport_lr},
            {"misreport_init_noise", c.misreport_init_noise},
            {"misreport_domain",
             c.misreport_domain == MisreportDomain::Support ? "support" : "nonnegative"},
            {"gamma_w", c.gamma_w},
            {"rho", c.rho},
            {"alpha", c.alpha},
            {"rgt_start", c.rgt_start},
            {"rgt_end", c.rgt_end},
            {"w_rgt_init", c.w_rgt_init},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"scheduler_max_regret", c.scheduler_max_regret},
            {"log_every", c.log_every},
            {"val_every", c.val_every},
            {"val_profiles", c.val_profiles},
            {"checkpoint_every", c.checkpoint_every},
            {"seed", c.seed}};
}

json metrics_json(const EvalMetrics& m) {
    return {{"revenue", m.revenue},
            {"regret_per_bidder", m.regret_per_bidder},
            {"regret_mean", m.regret_mean},
            {"regret_max", m.regret_max},
            {"ir_violations", m.ir_violations},
            {"feasibility_max_violation", m.feasibility_max_violation},
            {"samples", m.samples}};
}

void write_json(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << j.dump(2) << '\n';
}

// ---- gen ----------------------------------------------------------------------

struct GenSpec {
    CommonSpec common;
    int64_t count = 640000;
    int preview = 16;
};

int run_gen(const GenSpec& spec) {
    if (spec.count <= 0) throw std::invalid_argument("gen: --count must be positive");
    const auto cfg = spec.common.auction();
    const auto setting = spec.common.parsed_setting();
    fs::create_directories(spec.common.out_dir);
    SeedSplitter split(spec.common.seed);
    Rng rng = split.stream("dataset");
    ValuationBatch batch =
        sample_profiles(setting, cfg, static_cast<int>(spec.count), rng, spec.common.bundle_noise());

    const std::string data_path = spec.common.out_dir + "/valuations.bin";
    const std::string preview_path = spec.common.out_dir + "/preview.csv";
    const std::string manifest_path = spec.common.out_dir + "/manifest.json";
    write_valuation_cache(data_path, batch);
    write_valuation_csv(preview_path, batch, cfg, spec.preview);
    const uint64_t checksum = fnv1a(batch.values.data(), batch.values.size() * sizeof(double));
    write_json(manifest_path, {{"setting", spec.common.setting},
                               {"n", cfg.bidders},
                               {"m", cfg.items},
                               {"k", cfg.k},
                               {"count", spec.count},
                               {"seed", spec.common.seed},
                               {"noise", spec.common.noise},
                               {"checksum", checksum},
                               {"data_file", "valuations.bin"},
                               {"preview_file", "preview.csv"}});
    std::printf("gen: wrote %lld profiles (%s %dx%d, k=%d) to %s, checksum %016llx\n",
                static_cast<long long>(spec.count), spec.common.setting.c_str(), cfg.bidders, cfg.items,
                cfg.k, data_path.c_str(), static_cast<unsigned long long>(checksum));
    return 0;
}

// ---- train --------------------------------------------------------------------

struct TrainSpec {
    CommonSpec common;
    std::string mech = "canet";
    std::string cache_path;
    std::string config_path;
    std::string positional = "auto";  // auto | none | agent_bundle
    TrainConfig train;
    int hidden = 100;
    int layers = 3;
    int channels = 64;
    int heads = 2;
    int attention_layers = 1;
    double theta = 15.0;
};

std::unique_ptr<Mechanism> build_mechanism(const TrainSpec& spec, const AuctionConfig& cfg) {
    SeedSplitter split(spec.common.seed);
    Rng init_rng = split.stream("init");
    AllocationLayerOptions alloc;
    alloc.temperature = spec.theta;
    if (spec.mech == "canet") {
        CANetOptions opt;
        opt.hidden = spec.hidden;
        opt.layers = spec.layers;
        opt.alloc = alloc;
        return std::make_unique<CANet>(cfg, opt, init_rng);
    }
    if (spec.mech == "caformer") {
        CAFormerOptions opt;
        opt.channels = spec.channels;
        opt.heads = spec.heads;
        opt.attention_layers = spec.attention_layers;
        opt.alloc = alloc;
        if (spec.positional == "auto")
            opt.positional = spec.common.parsed_setting() == Setting::C ? PositionalMode::AgentBundle
                                                                        : PositionalMode::None;
        else
            opt.positional = positional_mode_from_string(spec.positional);
        return std::make_unique<CAFormer>(cfg, opt, init_rng);
    }
    throw std::invalid_argument("train: unknown mechanism '" + spec.mech + "' (canet|caformer)");
}

json architecture_of(Mechanism& mech) {
    if (auto* canet = dynamic_cast<CANet*>(&mech)) return describe_architecture(*canet);
    if (auto* caformer = dynamic_cast<CAFormer*>(&mech)) return describe_architecture(*caformer);
    throw std::invalid_argument("no architecture descriptor for mechanism " + mech.kind());
}

int run_train(TrainSpec spec) {
    const auto cfg = spec.common.auction();
    const auto setting = spec.common.parsed_setting();
    if (!spec.config_path.empty()) {
        std::ifstream f(spec.config_path);
        if (!f) throw std::runtime_error("cannot open config: " + spec.config_path);
        from_json_train(json::parse(f), spec.train);
    }
    spec.train.seed = spec.common.seed;
    spec.train.noise = spec.common.bundle_noise();
    fs::create_directories(spec.common.out_dir);

    std::unique_ptr<Mechanism> mech = build_mechanism(spec, cfg);

    ValuationBatch cache;
    const ValuationBatch* cache_ptr = nullptr;
    if (!spec.cache_path.empty()) {
        cache = read_valuation_cache(spec.cache_path);
        cache_ptr = &cache;
    }

    const std::string log_path = spec.common.out_dir + "/train_log.csv";
    const std::string val_path = spec.common.out_dir + "/val_log.csv";
    std::ofstream log(log_path);
    if (!log) throw std::runtime_error("cannot open for write: " + log_path);
    log << "iter,revenue,rgt_mean,rgt_max,w_rgt,rgt_target,wall_time_s\n";
    std::ofstream val_log;

    const json arch = architecture_of(*mech);
    write_json(spec.common.out_dir + "/run_manifest.json",
               {{"command", "train"},
                {"mechanism", spec.mech},
                {"setting", spec.common.setting},
                {"n", cfg.bidders},
                {"m", cfg.items},
                {"noise", spec.common.noise},
                {"offline_cache", spec.cache_path},
                {"architecture", arch},
                {"train_config", to_json_train(spec.train)}});

    char buf[256];
    TrainHooks hooks;
    hooks.on_log = [&](int64_t iter, double rev, double rgt_mean, double rgt_max, double w_rgt,
                       double target, double wall) {
        std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f",
                      static_cast<long long>(iter), rev, rgt_mean, rgt_max, w_rgt, target, wall);
        log << buf << '\n';
        log.flush();
        if (iter % (std::max<int64_t>(1, spec.train.log_every) * 10) == 0)
            std::printf("iter %lld: rev=%.4f rgt=%.5f w_rgt=%.3f target=%.5f (%.0fs)\n",
                        static_cast<long long>(iter), rev, rgt_mean, w_rgt, target, wall);
    };
    hooks.on_validation = [&](int64_t iter, const EvalMetrics& m) {
        if (!val_log.is_open()) {
            val_log.open(val_path);
            val_log << "iter,revenue,rgt_mean,rgt_max,ir_violations,feasibility_max_violation\n";
        }
        std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%lld,%.3g",
                      static_cast<long long>(iter), m.revenue, m.regret_mean, m.regret_max,
                      static_cast<long long>(m.ir_violations), m.feasibility_max_violation);
        val_log << buf << '\n';
        val_log.flush();
    };
    hooks.on_checkpoint = [&](int64_t iter) {
        save_checkpoint(spec.common.out_dir + "/checkpoint_" + std::to_string(iter + 1),
                        *mech->params(), arch);
    };

    try {
        TrainResult result = train(*mech, setting, spec.train, cache_ptr, hooks);
        save_checkpoint(spec.common.out_dir + "/checkpoint_final", *mech->params(), arch);
        std::printf("train: done after %lld iterations; last train rev=%.4f rgt=%.5f\n",
                    static_cast<long long>(result.iterations), result.last_train_revenue,
                    result.last_train_regret);
    } catch (const NumericalError& e) {
        const std::string dump = spec.common.out_dir + "/nan_batch.bin";
        write_valuation_cache(dump, e.offending_batch);
        write_json(spec.common.out_dir + "/nan_diagnostics.json",
                   {{"error", e.what()}, {"offending_batch", dump}});
        std::fprintf(stderr, "train: %s (offending batch dumped to %s)\n", e.what(), dump.c_str());
        throw;
    }
    return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalSpec {
    CommonSpec common;
    std::string mech;  // vcg | ama | vvca | local_ama, or empty when a checkpoint is given
    std::string checkpoint;
    int64_t samples = 10000;
    int inner_steps = 1000;
    double inner_lr = 0.1;
    int64_t regret_samples = 1000;  // classic mechanisms: regret subsample
    int train_samples = 100;        // search baselines
    std::string results = "results.csv";
};

int run_eval(const EvalSpec& spec) {
    const auto setting = spec.common.parsed_setting();
    fs::create_directories(spec.common.out_dir);
    std::unique_ptr<Mechanism> mech;
    std::string label;
    const bool classic = spec.checkpoint.empty();
    if (!spec.checkpoint.empty()) {
        mech = load_mechanism(spec.checkpoint);
        label = mech->kind();
        if (mech->config().bidders != spec.common.bidders || mech->config().items != spec.common.items)
            throw std::invalid_argument(
                "eval: checkpoint was trained for " + std::to_string(mech->config().bidders) + "x" +
                std::to_string(mech->config().items) + ", requested " +
                std::to_string(spec.common.bidders) + "x" + std::to_string(spec.common.items));
    } else {
        const auto cfg = spec.common.auction();
        SeedSplitter split(spec.common.seed);
        Rng search_rng = split.stream("search");
        if (spec.mech == "vcg") {
            mech = make_vcg(cfg);
        } else if (spec.mech == "ama" || spec.mech == "vvca") {
            GridSearchSpec gs;
            gs.vvca = spec.mech == "vvca";
            if (setting != Setting::A) gs.boost_max = 4.0;  // values scale with U[1,2]+ items
            auto res = grid_search_ama(setting, cfg, gs, spec.train_samples, 100000, search_rng,
                                       spec.common.bundle_noise());
            std::printf("eval: %s grid search evaluated %lld points, train rev %.4f\n",
                        spec.mech.c_str(), static_cast<long long>(res.points_evaluated),
                        res.train_revenue);
            mech = std::make_unique<AffineMaximizer>(cfg, res.params, spec.mech);
        } else if (spec.mech == "local_ama") {
            LocalSearchSpec ls;
            auto res = local_search_ama(setting, cfg, ls, spec.train_samples, 100000, search_rng,
                                        spec.common.bundle_noise());
            std::printf("eval: local search train rev %.4f\n", res.train_revenue);
            mech = std::make_unique<AffineMaximizer>(cfg, res.params, "local_ama");
        } else {
            throw std::invalid_argument("eval: pass --checkpoint or --mech vcg|ama|vvca|local_ama");
        }
        label = spec.mech;
    }

    EvalMetrics metrics;
    if (classic) {
        // plenty of cheap exact outcomes for the revenue mean; the regret
        // machinery runs on a subsample since DSIC families make it flat
        auto* affine = dynamic_cast<AffineMaximizer*>(mech.get());
        SeedSplitter split(spec.common.seed);
        Rng mc = split.stream("eval-data");
        metrics = evaluate(*mech, setting, spec.regret_samples, spec.inner_steps, spec.inner_lr,
                           spec.common.seed, spec.common.bundle_noise(), 500);
        metrics.revenue = affine->monte_carlo_revenue(setting, spec.samples, mc,
                                                      spec.common.bundle_noise());
        metrics.samples = spec.samples;
    } else {
        metrics = evaluate(*mech, setting, spec.samples, spec.inner_steps, spec.inner_lr,
                           spec.common.seed, spec.common.bundle_noise(), 500);
    }

    write_json(spec.common.out_dir + "/eval_" + label + ".json", metrics_json(metrics));
    ResultRow row;
    row.mechanism = label;
    row.setting = spec.common.setting;
    row.bidders = spec.common.bidders;
    row.items = spec.common.items;
    row.revenue = metrics.revenue;
    row.regret = metrics.regret_mean;
    row.samples = metrics.samples;
    row.seed = spec.common.seed;
    append_result(spec.results, row);
    std::printf("eval %s %s %dx%d: revenue=%.4f regret=%.6f (max %.6f) ir_violations=%lld feas=%.2g\n",
                label.c_str(), spec.common.setting.c_str(), spec.common.bidders, spec.common.items,
                metrics.revenue, metrics.regret_mean, metrics.regret_max,
                static_cast<long long>(metrics.ir_violations), metrics.feasibility_max_violation);
    return 0;
}

// ---- report -------------------------------------------------------------------

struct ReportSpec {
    std::string results = "results.csv";
    std::string out_md;
    std::string out_csv;
};

int run_report(const ReportSpec& spec) {
    auto rows = read_results(spec.results);
    auto tables = render_report(rows);
    for (const auto& w : tables.warnings) std::fprintf(stderr, "report: %s\n", w.c_str());
    std::fputs(tables.markdown.c_str(), stdout);
    if (!spec.out_md.empty()) {
        std::ofstream f(spec.out_md);
        if (!f) throw std::runtime_error("cannot open for write: " + spec.out_md);
        f << tables.markdown;
    }
    if (!spec.out_csv.empty()) {
        std::ofstream f(spec.out_csv);
        if (!f) throw std::runtime_error("cannot open for write: " + spec.out_csv);
        f << tables.csv;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"caforge: learned and classic combinatorial auction mechanisms"};
    app.require_subcommand(1);

    GenSpec gen;
    auto* cmd_gen = app.add_subcommand("gen", "sample a valuation dataset to disk");
    add_common(cmd_gen, gen.common);
    cmd_gen->add_option("--count", gen.count, "profile count")->envname(env_name("count"));
    cmd_gen->add_option("--preview", gen.preview, "profiles to mirror into the CSV preview");

    TrainSpec tr;
    auto* cmd_train = app.add_subcommand("train", "adversarially train a mechanism");
    add_common(cmd_train, tr.common);
    cmd_train->add_option("--mech", tr.mech, "canet | caformer")->envname(env_name("mech"));
    cmd_train->add_option("--cache", tr.cache_path, "offline valuation cache (gen output)");
    cmd_train->add_option("--config", tr.config_path, "JSON file mirroring the train config fields");
    cmd_train->add_option("--iters", tr.train.iterations, "outer iterations")->envname(env_name("iters"));
    cmd_train->add_option("--batch", tr.train.batch, "batch size");
    cmd_train->add_option("--lr", tr.train.learning_rate, "network learning rate");
    cmd_train->add_option("--misreport-lr", tr.train.misreport_lr, "inner ascent rate");
    cmd_train->add_option("--inner-steps", tr.train.inner_steps_train, "inner steps per iteration");
    cmd_train->add_option("--inner-steps-eval", tr.train.inner_steps_eval, "inner steps at validation");
    cmd_train->add_option("--gamma-w", tr.train.gamma_w, "scheduler learning rate");
    cmd_train->add_option("--rho", tr.train.rho, "tanh scaler");
    cmd_train->add_option("--alpha", tr.train.alpha, "regret-target revenue coupling");
    cmd_train->add_option("--rgt-start", tr.train.rgt_start, "initial regret target");
    cmd_train->add_option("--rgt-end", tr.train.rgt_end, "final regret target");
    cmd_train->add_option("--theta", tr.theta, "softmax temperature");
    cmd_train->add_option("--hidden", tr.hidden, "canet hidden width");
    cmd_train->add_option("--layers", tr.layers, "canet hidden layers");
    cmd_train->add_option("--channels", tr.channels, "caformer feature channels");
    cmd_train->add_option("--heads", tr.heads, "caformer attention heads");
    cmd_train->add_option("--attention-layers", tr.attention_layers, "caformer attention layers");
    cmd_train->add_option("--positional", tr.positional, "auto | none | agent_bundle");
    cmd_train->add_option("--val-every", tr.train.val_every, "validation interval (0 off)");
    cmd_train->add_option("--val-profiles", tr.train.val_profiles, "validation profile count");
    cmd_train->add_option("--checkpoint-every", tr.train.checkpoint_every, "checkpoint interval (0 off)");
    cmd_train->add_option("--log-every", tr.train.log_every, "metric log interval");

    EvalSpec ev;
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint or baseline");
    add_common(cmd_eval, ev.common);
    cmd_eval->add_option("--mech", ev.mech, "vcg | ama | vvca | local_ama");
    cmd_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint prefix (from train)");
    cmd_eval->add_option("--samples", ev.samples, "evaluation profiles")->envname(env_name("samples"));
    cmd_eval->add_option("--inner-steps", ev.inner_steps, "misreport optimization steps");
    cmd_eval->add_option("--inner-lr", ev.inner_lr, "misreport ascent rate");
    cmd_eval->add_option("--regret-samples", ev.regret_samples,
                         "regret subsample for classic mechanisms");
    cmd_eval->add_option("--train-samples", ev.train_samples, "search training profiles");
    cmd_eval->add_option("--results", ev.results, "results CSV to append to");

    ReportSpec rep;
    auto* cmd_report = app.add_subcommand("report", "render result tables");
    cmd_report->add_option("--results", rep.results, "results CSV path");
    cmd_report->add_option("--out-md", rep.out_md, "write the markdown table here");
    cmd_report->add_option("--out-csv", rep.out_csv, "write the CSV table here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_gen->parsed()) return run_gen(gen);
        if (cmd_train->parsed()) return run_train(tr);
        if (cmd_eval->parsed()) return run_eval(ev);
        if (cmd_report->parsed()) return run_report(rep);
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 3;
    } catch (const TensorError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    }
    return 0;
}
