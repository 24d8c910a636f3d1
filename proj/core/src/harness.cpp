#include "cotune/harness.hpp"

#include <filesystem>
#include <sstream>

#include "cotune/checkpoint.hpp"

namespace cotune {

namespace fs = std::filesystem;

std::vector<std::size_t> sample_batch_indices(std::uint64_t seed, long step,
                                              std::size_t batch_size, std::size_t train_size) {
    Prng rng(seed, fnv1a64("batch") + static_cast<std::uint64_t>(step));
    std::vector<std::size_t> out(batch_size);
    for (auto& i : out)
        i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(train_size) - 1));
    return out;
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
    Batch batch;
    batch.reserve(indices.size());
    for (std::size_t i : indices) batch.push_back(&ds.train[i]);
    return batch;
}

double evaluate(Model& model, const Dataset& ds) {
    if (ds.eval.empty()) throw ContractError("evaluate: empty eval split");
    const VocabLayout layout(ds.spec.attr_values);
    if (ds.spec.kind == TaskSpec::Kind::qa) {
        std::size_t hits = 0;
        for (const auto& ex : ds.eval) {
            const auto decoded = model.greedy_decode(ex.feature, ex.instruction,
                                                     ds.spec.answer_max + 2, layout.end);
            if (decoded == ex.answer) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(ds.eval.size());
    }
    // caption: argmax accuracy at answer positions under teacher forcing
    Batch batch;
    batch.reserve(ds.eval.size());
    for (const auto& ex : ds.eval) batch.push_back(&ex);
    const GenerationDistribution dists = model.forward_distributions(batch);
    std::size_t hits = 0, total = 0;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const auto& pe = dists.examples[e];
        for (std::size_t i = 0; i < pe.positions; ++i) {
            const double* row = pe.probs.data() + i * dists.vocab;
            int best = 0;
            for (std::size_t j = 1; j < dists.vocab; ++j)
                if (row[j] > row[best]) best = static_cast<int>(j);
            if (best == batch[e]->answer[i]) ++hits;
            ++total;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

RunResult run_synthetic(const ExperimentConfig& cfg) {
    RunResult result;
    result.run_dir = cfg.out_dir;
    fs::create_directories(cfg.out_dir);
    save_config((fs::path(cfg.out_dir) / "config.cfg").string(), cfg);
    const Trajectory traj = run_synthetic_adam(cfg.synthetic_config());
    save_trajectory((fs::path(cfg.out_dir) / "trajectory.json").string(), traj);
    return result;
}

std::string rate_detail(double kappa_ma, RatePair rates) {
    std::ostringstream o;
    o << "kappa_ma=" << format_double(kappa_ma) << ";lrS=" << format_double(rates.lr_s)
      << ";lrT=" << format_double(rates.lr_t);
    return o.str();
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg);
    if (cfg.task == "synthetic") return run_synthetic(cfg);

    RunResult result;
    result.run_dir = cfg.out_dir;
    fs::create_directories(cfg.out_dir);
    save_config((fs::path(cfg.out_dir) / "config.cfg").string(), cfg);

    const TaskSpec spec = cfg.task_spec();
    const Dataset ds = cfg.dataset_path.empty() ? generate_dataset(spec)
                                                : load_dataset(cfg.dataset_path, spec);

    std::map<std::string, Tensor> backbone;
    if (cfg.backbone_path.empty()) {
        const PretrainResult pre =
            pretrain_backbone(spec, cfg.model, cfg.pretrain_steps, cfg.pretrain_lr, cfg.seed);
        backbone = pre.backbone;
        save_checkpoint((fs::path(cfg.out_dir) / "backbone.ckpt").string(), backbone);
    } else {
        backbone = load_checkpoint(cfg.backbone_path);
    }

    Model model = Model::with_backbone(cfg.model, backbone, cfg.seed);
    const std::uint64_t frozen_sum = model.backbone_checksum();

    SchedulerConfig sched_cfg = cfg.sched;
    sched_cfg.kappa_min = cfg.kappa.min;
    sched_cfg.kappa_max = cfg.kappa.max;
    Scheduler scheduler(sched_cfg);

    CommitConfig commit_cfg;
    commit_cfg.reg = cfg.reg;
    commit_cfg.backend = cfg.backend;
    commit_cfg.metric_kind = cfg.metric_kind;
    commit_cfg.gamma = cfg.sched.gamma;
    commit_cfg.kappa = cfg.kappa;
    commit_cfg.kappa_raw_step = cfg.kappa_raw_step;
    commit_cfg.measure_joint = cfg.measure_joint;

    AdamState adam_s(model.component_size(Component::encoder), cfg.adam_beta2, cfg.adam_eps);
    AdamState adam_t(model.component_size(Component::adapter), cfg.adam_beta2, cfg.adam_eps);

    RunLogWriter log((fs::path(cfg.out_dir) / "log.csv").string());
    EventLogWriter events((fs::path(cfg.out_dir) / "events.csv").string());
    const std::string last_ckpt = (fs::path(cfg.out_dir) / "last.ckpt").string();
    save_checkpoint(last_ckpt, model.checkpoint());

    std::size_t refresh_seen = 0;
    bool switch_logged = false;

    // Steps 0..steps-1 measure and update; the final row at step == steps is
    // measurement-only, so steps == 0 still yields one record.
    for (long t = 0; t <= cfg.steps; ++t) {
        const bool final_row = t == cfg.steps;
        const RatePair rates = scheduler.rates_for_step(t);
        for (; refresh_seen < scheduler.refresh_events().size(); ++refresh_seen) {
            const RefreshEvent& ev = scheduler.refresh_events()[refresh_seen];
            events.append(ev.step, "refresh", rate_detail(ev.kappa_ma, RatePair{ev.lr_s, ev.lr_t}));
        }
        const Batch batch = make_batch(ds, sample_batch_indices(cfg.seed, t, cfg.batch_size,
                                                                ds.train.size()));
        CommitConfig step_cfg = commit_cfg;
        step_cfg.apply_update = !final_row;
        CommitStepResult step;
        try {
            step = commit_step(model, batch, rates, step_cfg, &adam_s, &adam_t);
        } catch (const NumericError& e) {
            result.aborted = true;
            result.abort_reason = e.what();
            events.append(t, "abort", e.what());
            break;
        }
        BalanceRecord rec = step.record;
        rec.step = t;
        if (!final_row) {
            scheduler.observe(t, rec.kappa, step.update_norm_s, step.update_norm_t);
            if (!switch_logged && scheduler.cd_switched()) {
                switch_logged = true;
                events.append(scheduler.cd_switch_step(), "cd-switch",
                              std::string("strategy=") + strategy_name(cfg.sched.strategy));
            }
        }
        rec.kappa_ma = scheduler.kappa_ma();
        if (rec.kappa_degenerate) events.append(t, "kappa-degenerate", "floor engaged");

        if (t % cfg.eval_cadence == 0 || final_row) {
            rec.has_eval = true;
            rec.eval_acc = evaluate(model, ds);
            result.final_eval = rec.eval_acc;
            save_checkpoint(last_ckpt, model.checkpoint());
        }
        if (t % cfg.log_cadence == 0 || final_row) log.append(rec);
        result.records.push_back(rec);

        if (model.backbone_checksum() != frozen_sum)
            throw ContractError("run_experiment: frozen backbone changed at step " +
                                std::to_string(t));
    }

    if (!result.aborted)
        save_checkpoint((fs::path(cfg.out_dir) / "final.ckpt").string(), model.checkpoint());
    {
        std::ostringstream o;
        o << "forwards=" << model.counters().forwards << ";backwards=" << model.counters().backwards;
        events.append(cfg.steps, "summary", o.str());
    }
    result.refreshes = scheduler.refresh_events();
    result.cd_switch_step = scheduler.cd_switch_step();
    return result;
}

std::vector<ExperimentConfig> preset(const std::string& name, const std::string& out_root) {
    std::vector<ExperimentConfig> configs;
    auto base = [&](const std::string& task, Strategy strategy, bool reg, std::uint64_t seed) {
        ExperimentConfig c;
        c.task = task;
        c.sched.strategy = strategy;
        c.reg.enabled = reg;
        c.seed = seed;
        c.data_seed = seed;
        std::ostringstream n;
        n << (task == "toy-qa" ? "qa" : "caption") << "-"
          << (strategy == Strategy::coordinated ? (reg ? "commit" : "commit-clr")
                                                : strategy_name(strategy))
          << "-s" << seed;
        c.name = n.str();
        c.out_dir = out_root + "/" + c.name;
        return c;
    };

    if (name == "study-4.1" || name == "study-4.2") {
        // Fixed-rate probes on toy-qa; the second battery is the same runs
        // rendered with gradient-norm emphasis.
        const char* tag = name == "study-4.1" ? "balance" : "gnorm";
        for (Strategy s : {Strategy::constant, Strategy::language_up, Strategy::vision_up}) {
            ExperimentConfig c = base("toy-qa", s, false, 1);
            c.name = std::string(tag) + "-" + (s == Strategy::constant ? "synced" : strategy_name(s));
            c.out_dir = out_root + "/" + c.name;
            configs.push_back(c);
        }
        return configs;
    }
    if (name == "bench-6") {
        const std::pair<Strategy, bool> methods[] = {
            {Strategy::constant, false},    {Strategy::feature_cd, false},
            {Strategy::language_cd, false}, {Strategy::coordinated, false},
            {Strategy::coordinated, true},
        };
        for (const char* task : {"toy-qa", "toy-caption"})
            for (const auto& [strategy, reg] : methods)
                for (std::uint64_t seed = 1; seed <= 5; ++seed)
                    configs.push_back(base(task, strategy, reg, seed));
        return configs;
    }
    if (name == "bound-check") {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            ExperimentConfig c;
            c.task = "synthetic";
            c.backend = Backend::adam;
            c.adam_beta2 = 0.99;
            c.steps = 200;
            c.seed = seed;
            c.reg.lambda = 1.0;
            std::ostringstream n;
            n << "bound-s" << seed;
            c.name = n.str();
            c.out_dir = out_root + "/" + c.name;
            configs.push_back(c);
        }
        return configs;
    }
    throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace cotune
