#include "daq/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "daq/audit.hpp"
#include "daq/baselines.hpp"
#include "daq/error.hpp"
#include "daq/train.hpp"

namespace daq {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string default_out_dir() {
    if (const char* env = std::getenv("DAQ_OUT_DIR")) return env;
    return ".";
}

// Shared --config/--seed/--out plumbing plus one override flag per config key.
struct ConfigArgs {
    std::string config_path;
    std::string out_flag;
    long seed_flag = -1;
    std::map<std::string, std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (key = value lines)");
        cmd->add_option("--out", out_flag, "output directory (overrides out.dir)");
        cmd->add_option("--seed", seed_flag, "seed override (train.seed)");
        for (const std::string& key : RunConfig::keys()) {
            if (key == "out.dir") continue;
            cmd->add_option_function<std::string>(
                "--" + key, [this, key](const std::string& v) { overrides[key] = v; },
                "override config key " + key);
        }
    }

    RunConfig resolve() const {
        RunConfig cfg;
        cfg.out_dir = default_out_dir();
        if (!config_path.empty()) {
            const std::string keep_out = cfg.out_dir;
            cfg = RunConfig::from_file(config_path);
            if (cfg.out_dir == ".") cfg.out_dir = keep_out;
        }
        for (const auto& [k, v] : overrides) cfg.set(k, v);
        if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
        if (!out_flag.empty()) cfg.out_dir = out_flag;
        return cfg;
    }
};

struct CurveColumn {
    QuantizerKind kind;
    std::string name;
};

int cmd_curves(int bits, const std::string& quantizers, const std::string& betas,
               long samples, bool derivatives, std::string out_path, std::ostream& out) {
    QuantizerSpec spec;
    spec.bits = bits;
    spec.validate();
    if (out_path.empty()) out_path = default_out_dir() + "/curves.csv";

    std::vector<double> beta_list;
    for (const std::string& b : split_list(betas)) beta_list.push_back(std::stod(b));
    if (beta_list.empty()) beta_list.push_back(4.0);

    std::vector<CurveColumn> cols;
    bool want_beta_star = false;
    for (const std::string& name : split_list(quantizers)) {
        const QuantizerKind base = QuantizerKind::parse(name);
        if (base.tag == QuantizerKindTag::kDaqAdaptive) want_beta_star = true;
        const bool expand = base.uses_fixed_beta() && name.find(':') == std::string::npos;
        if (expand) {
            for (double b : beta_list) {
                QuantizerKind k = base;
                k.beta = b;
                cols.push_back({k, k.to_string()});
            }
        } else {
            cols.push_back({base, base.to_string()});
        }
    }
    if (cols.empty()) throw ConfigError("curves: no quantizers requested");

    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write '" + out_path + "'");
    f << "x,rounding";
    for (const auto& c : cols) f << "," << c.name;
    if (want_beta_star) f << ",beta_star";
    if (derivatives)
        for (const auto& c : cols) f << ",d_" << c.name;
    f << "\n";

    const double top = static_cast<double>(spec.qmax());
    for (long i = 0; i < samples; ++i) {
        const double x = top * static_cast<double>(i) / static_cast<double>(samples - 1);
        f << fmt(x) << "," << fmt(rounding_output(x, spec));
        for (const auto& c : cols) f << "," << fmt(training_time_value(c.kind, x, spec));
        if (want_beta_star)
            f << "," << fmt(adaptive_temperature(x, cell_context(x, spec), spec));
        if (derivatives)
            for (const auto& c : cols) f << "," << fmt(training_time_grad_x(c.kind, x, spec));
        f << "\n";
    }
    out << "wrote " << out_path << " (" << samples << " rows, " << cols.size()
        << " quantizer columns)\n";
    return 0;
}

int cmd_gapcheck(int bits, const std::string& quantizer, long samples, bool expect_zero,
                 std::ostream& out) {
    QuantizerSpec spec;
    spec.bits = bits;
    spec.validate();
    const QuantizerKind kind = QuantizerKind::parse(quantizer);
    const GapReport rep = quantizer_gap_report(kind, spec, samples);
    out << "quantizer " << kind.to_string() << " bits " << bits << " samples " << samples
        << "\n";
    out << "gap " << fmt(rep.mean) << " max_deviation " << fmt(rep.max) << "\n";
    if (expect_zero && !(rep.mean <= 1e-9)) {
        out << "FAIL: gap exceeds 1e-9\n";
        return 1;
    }
    return 0;
}

int cmd_gradaudit(int bits, const std::string& betas, long samples, double h, long seed,
                  std::ostream& out) {
    bool ok = true;
    constexpr double kTol = 1e-5;
    for (const std::string& b : split_list(betas)) {
        const double beta = std::stod(b);
        const AuditReport rep = audit_soft_assignment(bits, beta, samples, h,
                                                      static_cast<std::uint64_t>(seed));
        out << "phi beta " << beta << ": worst_rel_err " << fmt(rep.worst_rel_err)
            << " audited " << rep.audited << " excluded " << rep.excluded << "\n";
        ok = ok && rep.worst_rel_err <= kTol && rep.audited > 0;
    }
    const AuditReport chain = audit_daq_chain(bits, samples, h,
                                              static_cast<std::uint64_t>(seed));
    out << "daq chain: worst_rel_err " << fmt(chain.worst_rel_err) << " audited "
        << chain.audited << " excluded " << chain.excluded << "\n";
    ok = ok && chain.worst_rel_err <= kTol && chain.audited > 0;
    out << (ok ? "PASS" : "FAIL") << " (threshold " << fmt(kTol) << ")\n";
    return ok ? 0 : 1;
}

int cmd_train(const ConfigArgs& cargs, bool quiet, std::ostream& out) {
    RunConfig cfg = cargs.resolve();
    cfg.quiet = quiet;
    const TrainOutput result = train(cfg, quiet ? nullptr : &out);
    const DataSplits data = load_dataset(cfg);
    const double acc_round = evaluate(result.net, data.val, EvalMode::kRounding);
    out << "final val accuracy (rounding) " << fmt(acc_round) << "\n";
    out << "checkpoint " << result.checkpoint_path << "\n";
    out << "metrics " << result.metrics_path << "\n";
    return 0;
}

int cmd_eval(const ConfigArgs& cargs, const std::string& checkpoint_path, std::ostream& out) {
    RunConfig cfg = cargs.resolve();
    const DataSplits data = load_dataset(cfg);
    const Checkpoint ck = Checkpoint::load(checkpoint_path);
    const Network net = network_from_checkpoint(cfg, ck, data.val);
    const double acc_round = evaluate(net, data.val, EvalMode::kRounding);
    const double acc_soft = evaluate(net, data.val, EvalMode::kTrainingTime);
    out << "accuracy rounding " << fmt(acc_round) << "\n";
    out << "accuracy training_time " << fmt(acc_soft) << "\n";
    return 0;
}

int cmd_ablate(const ConfigArgs& cargs, const std::string& variants_arg,
               const std::string& seeds_arg, bool quiet, std::ostream& out) {
    RunConfig cfg = cargs.resolve();
    std::vector<QuantizerKind> variants;
    for (const std::string& v : split_list(variants_arg))
        variants.push_back(QuantizerKind::parse(v));
    std::vector<std::uint64_t> seeds;
    for (const std::string& s : split_list(seeds_arg))
        seeds.push_back(static_cast<std::uint64_t>(std::stoul(s)));
    const std::vector<AblationRow> rows = ablate(cfg, variants, seeds,
                                                 quiet ? nullptr : &out);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string table_path = cfg.out_dir + "/ablation.csv";
    write_ablation_csv(table_path, rows);
    out << "variant           rounding          training-time     gap        ms/iter\n";
    for (const auto& r : rows) {
        char line[256];
        std::snprintf(line, sizeof(line), "%-17s %.4f +/- %.4f  %.4f +/- %.4f  %.6f  %.2f\n",
                      r.variant.c_str(), r.acc_round_mean, r.acc_round_std, r.acc_soft_mean,
                      r.acc_soft_std, r.gap_mean, r.ms_per_iter);
        out << line;
    }
    out << "wrote " << table_path << "\n";
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"distance-aware quantizer toolkit"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("--quiet", quiet, "suppress progress logging");

    // curves
    auto* curves = app.add_subcommand("curves", "sample quantizer forward curves to CSV");
    int cv_bits = 2;
    std::string cv_quantizers = "daq,kernel,sigmoid";
    std::string cv_betas = "4,24";
    long cv_samples = 2001;
    bool cv_derivatives = false;
    std::string cv_out;
    curves->add_option("--bits", cv_bits, "bit-width")->check(CLI::Range(1, 8));
    curves->add_option("--quantizers", cv_quantizers,
                       "comma list of quantizers (name or name:beta)");
    curves->add_option("--betas", cv_betas, "temperatures applied to fixed-beta quantizers");
    curves->add_option("--samples", cv_samples, "sample count (>= 2)")
        ->check(CLI::Range(2L, 100000000L));
    curves->add_flag("--derivatives", cv_derivatives, "emit analytic derivative columns");
    curves->add_option("--out", cv_out, "output CSV path");

    // gapcheck
    auto* gapcheck = app.add_subcommand("gapcheck", "measure the quantizer gap");
    int gc_bits = 1;
    std::string gc_quantizer = "daq";
    long gc_samples = 1000000;
    bool gc_expect_zero = false;
    gapcheck->add_option("--bits", gc_bits, "bit-width")->check(CLI::Range(1, 8));
    gapcheck->add_option("--quantizer", gc_quantizer, "quantizer (name or name:beta)");
    gapcheck->add_option("--samples", gc_samples, "sample count (>= 1)")
        ->check(CLI::Range(1L, 1000000000L));
    gapcheck->add_flag("--expect-zero", gc_expect_zero, "exit 0 only if gap <= 1e-9");

    // gradaudit ("--h" is the FD step, so help keeps only its long form here)
    auto* gradaudit = app.add_subcommand("gradaudit", "finite-difference gradient audit");
    gradaudit->set_help_flag("--help", "print help");
    int ga_bits = 2;
    std::string ga_betas = "4,8,12,24";
    long ga_samples = 1000;
    double ga_h = 1e-6;
    long ga_seed = 7;
    gradaudit->add_option("--bits", ga_bits, "bit-width")->check(CLI::Range(1, 8));
    gradaudit->add_option("--betas", ga_betas, "fixed temperatures to audit");
    gradaudit->add_option("--samples", ga_samples, "points per audit")
        ->check(CLI::Range(1L, 100000000L));
    gradaudit->add_option("--h", ga_h, "finite-difference step")
        ->check(CLI::PositiveNumber);
    gradaudit->add_option("--seed", ga_seed, "sampling seed");

    // train / eval / ablate
    auto* train_cmd = app.add_subcommand("train", "train a run configuration");
    ConfigArgs train_args;
    train_args.attach(train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint in both modes");
    ConfigArgs eval_args;
    eval_args.attach(eval_cmd);
    std::string eval_checkpoint;
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "train and compare quantizer variants");
    ConfigArgs ablate_args;
    ablate_args.attach(ablate_cmd);
    std::string ab_variants =
        "daq,kernel:4,kernel:8,kernel:12,kernel:24,plain:10,plain:20,plain:60,sigmoid:4,"
        "ste,ste_dasr,annealed:2:48";
    std::string ab_seeds = "1,2,3";
    ablate_cmd->add_option("--variants", ab_variants, "comma list of quantizer variants");
    ablate_cmd->add_option("--seeds", ab_seeds, "comma list of seeds");

    std::vector<const char*> argv;
    argv.push_back("daq");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        std::ostringstream help;
        const int code = app.exit(e, out, err);
        return code;
    }

    try {
        if (curves->parsed())
            return cmd_curves(cv_bits, cv_quantizers, cv_betas, cv_samples, cv_derivatives,
                              cv_out, out);
        if (gapcheck->parsed())
            return cmd_gapcheck(gc_bits, gc_quantizer, gc_samples, gc_expect_zero, out);
        if (gradaudit->parsed())
            return cmd_gradaudit(ga_bits, ga_betas, ga_samples, ga_h, ga_seed, out);
        if (train_cmd->parsed()) return cmd_train(train_args, quiet, out);
        if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_checkpoint, out);
        if (ablate_cmd->parsed())
            return cmd_ablate(ablate_args, ab_variants, ab_seeds, quiet, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << "error: no subcommand\n";
    return 1;
}

} // namespace daq
