#pragma once

#include "cotune/config.hpp"
#include "cotune/report.hpp"

namespace cotune {

// Deterministic batch of train-split indices for one step.
std::vector<std::size_t> sample_batch_indices(std::uint64_t seed, long step,
                                              std::size_t batch_size, std::size_t train_size);

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices);

// Exact-match accuracy of greedy decodes for qa; teacher-forced token-level
// accuracy for captions.
double evaluate(Model& model, const Dataset& ds);

struct RunResult {
    std::vector<BalanceRecord> records;
    std::string run_dir;
    bool aborted = false;
    std::string abort_reason;
    double final_eval = 0.0;
    std::vector<RefreshEvent> refreshes;
    long cd_switch_step = -1;
};

// Full deterministic training run; writes config.cfg, log.csv, events.csv,
// and checkpoints under cfg.out_dir. task == "synthetic" instead runs the
// adam rule on the bundled smooth objective and writes trajectory.json.
RunResult run_experiment(const ExperimentConfig& cfg);

// Named experiment batteries. toy-qa oscillation probes, the same with
// gradient-norm emphasis, the 5-method x 2-task x 5-seed benchmark, and the
// convergence-bound runs.
std::vector<ExperimentConfig> preset(const std::string& name, const std::string& out_root);

}  // namespace cotune
