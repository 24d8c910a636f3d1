#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cotune/checkpoint.hpp"
#include "cotune/harness.hpp"

namespace fs = std::filesystem;
using namespace cotune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

TaskSpec load_task_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open task spec '" + path + "'");
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_task_spec(buf.str());
}

// Optional key=value overrides for the bound inputs.
void apply_constant_overrides(const std::string& path, BoundInputs& b, bool& have_fstar) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open constants file '" + path + "'");
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("constants: bad line '" + line + "'");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto z = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string{} : s.substr(a, z - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "R") b.R = std::stod(value);
        else if (key == "L") b.L = std::stod(value);
        else if (key == "f_star") { b.f_star = std::stod(value); have_fstar = true; }
        else if (key == "F0") b.F0 = std::stod(value);
        else if (key == "n") b.n = std::stol(value);
        else throw ConfigError("constants: unknown key '" + key + "'");
    }
}

int run_cli(int argc, char** argv) {
    CLI::App app{"coordinated two-component instruction tuning testbed"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a dataset file from a task spec");
    std::string gen_spec, gen_out;
    bool gen_dump = false;
    gen->add_option("--spec", gen_spec, "task spec file (key = value)")->required();
    gen->add_option("--out", gen_out, "output dataset file")->required();
    gen->add_flag("--dump", gen_dump, "also print a human-readable dump to stdout");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "train and freeze a backbone checkpoint");
    std::string pre_config, pre_out;
    pre->add_option("--config", pre_config, "experiment config file")->required();
    pre->add_option("--out", pre_out, "output checkpoint file")->required();

    // train
    auto* train = app.add_subcommand("train", "run one experiment");
    std::string train_config;
    train->add_option("--config", train_config, "experiment config file")->required();

    // report
    auto* report = app.add_subcommand("report", "render curves and comparison tables");
    std::vector<std::string> report_runs;
    std::string report_out;
    long report_window = 100;
    report->add_option("--runs", report_runs, "run directories")->required()->expected(-1);
    report->add_option("--out", report_out, "output directory")->required();
    report->add_option("--kappa-window", report_window, "first step of the kappa-std window");

    // verify-bound
    auto* verify = app.add_subcommand("verify-bound", "check the convergence bound on a run");
    std::string verify_run, verify_constants;
    bool verify_estimate = false;
    verify->add_option("--run", verify_run, "run directory with trajectory.json")->required();
    verify->add_option("--constants", verify_constants, "key=value overrides for R/L/f_star/F0/n");
    verify->add_flag("--estimate", verify_estimate,
                     "estimate constants from the trajectory (f* becomes a flagged proxy)");

    // preset
    auto* pres = app.add_subcommand("preset", "write a named batch of experiment configs");
    std::string preset_name, preset_dir;
    pres->add_option("--name", preset_name, "study-4.1 | study-4.2 | bench-6 | bound-check")
        ->required();
    pres->add_option("--out-dir", preset_dir, "directory for config files and run outputs")
        ->required();

    CLI11_PARSE(app, argc, argv);

    if (*gen) {
        const TaskSpec spec = load_task_spec(gen_spec);
        const Dataset ds = generate_dataset(spec);
        save_dataset(gen_out, ds);
        if (gen_dump) dump_dataset(ds, std::cout);
        std::cout << "wrote " << ds.train.size() << "+" << ds.eval.size() << " examples to "
                  << gen_out << " (spec hash " << ds.spec_hash << ")\n";
        return kExitOk;
    }
    if (*pre) {
        const ExperimentConfig cfg = load_config(pre_config);
        validate_config(cfg);
        const PretrainResult res = pretrain_backbone(cfg.task_spec(), cfg.model,
                                                     cfg.pretrain_steps, cfg.pretrain_lr, cfg.seed);
        save_checkpoint(pre_out, res.backbone);
        std::cout << "pretrain loss " << format_double(res.initial_loss) << " -> "
                  << format_double(res.final_loss) << ", checkpoint " << pre_out << "\n";
        return kExitOk;
    }
    if (*train) {
        const ExperimentConfig cfg = load_config(train_config);
        const RunResult res = run_experiment(cfg);
        if (res.aborted) {
            std::cerr << "numeric abort: " << res.abort_reason << " (last checkpoint retained)\n";
            return kExitNumeric;
        }
        std::cout << "run complete: " << res.run_dir << ", " << res.records.size()
                  << " records, final eval " << format_double(res.final_eval) << "\n";
        return kExitOk;
    }
    if (*report) {
        ReportOptions opt;
        opt.kappa_window_start = report_window;
        emit_report(report_runs, report_out, opt);
        std::cout << "report written to " << report_out << "\n";
        return kExitOk;
    }
    if (*verify) {
        const Trajectory traj =
            load_trajectory((fs::path(verify_run) / "trajectory.json").string());
        BoundInputs b;
        bool proxy = false;
        if (verify_estimate) {
            const EstimatedConstants est = estimate_constants(traj);
            b = est.inputs;
            proxy = est.f_star_is_proxy;
        } else {
            if (!traj.has_analytic && verify_constants.empty())
                throw ConfigError(
                    "verify-bound: trajectory has no analytic constants; pass --constants or "
                    "--estimate");
            b.K = static_cast<long>(traj.points.size());
            b.n = b.K;
            b.alpha = traj.alpha;
            b.beta2 = traj.beta2;
            b.lambda = traj.lambda;
            b.eps = traj.eps;
            b.R = traj.analytic_R;
            b.L = traj.analytic_L;
            b.f_star = traj.analytic_f_star;
            b.F0 = traj.points.empty() ? 0.0 : traj.points.front().objective;
        }
        bool have_fstar = !proxy;
        if (!verify_constants.empty()) apply_constant_overrides(verify_constants, b, have_fstar);
        const VerifyReport rep = verify_trajectory(traj, b, !have_fstar);
        const std::string out = (fs::path(verify_run) / "verify_report.json").string();
        save_verify_report(out, rep);
        std::cout << (rep.satisfied ? "satisfied" : "VIOLATED")
                  << ": min |grad F|^2 = " << format_double(rep.min_grad_norm_sq)
                  << ", bound = " << format_double(rep.bound) << ", report " << out << "\n";
        return kExitOk;
    }
    if (*pres) {
        const auto configs = preset(preset_name, preset_dir);
        fs::create_directories(preset_dir);
        for (const auto& cfg : configs)
            save_config((fs::path(preset_dir) / (cfg.name + ".cfg")).string(), cfg);
        std::cout << "wrote " << configs.size() << " configs to " << preset_dir << "\n";
        return kExitOk;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
