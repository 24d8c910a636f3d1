#pragma once

#include <string>

#include "cotune/metrics.hpp"
#include "cotune/optimizer.hpp"
#include "cotune/schedulers.hpp"
#include "cotune/tasks.hpp"
#include "cotune/theory.hpp"

namespace cotune {

// Fully declarative description of one run. Serializes to a flat
// `key = value` text file; parse(serialize(c)) == c.
struct ExperimentConfig {
    std::string name = "run";
    std::string task = "toy-qa";  // toy-qa | toy-caption | synthetic
    std::uint64_t seed = 1;
    long steps = 2000;
    std::size_t batch_size = 16;
    long log_cadence = 1;
    long eval_cadence = 50;
    std::string out_dir = "runs/run";

    ModelShape model;

    double task_noise = 0.1;
    std::size_t train_size = 512;
    std::size_t eval_size = 128;
    std::uint64_t data_seed = 1;

    SchedulerConfig sched;
    RegularizerConfig reg;

    Backend backend = Backend::sgd;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    DistanceKind metric_kind = DistanceKind::total_variation;
    KappaLimits kappa;
    bool kappa_raw_step = false;
    bool measure_joint = true;

    long pretrain_steps = 400;
    double pretrain_lr = 0.1;
    std::string backbone_path;  // when set, loaded instead of pretraining
    std::string dataset_path;   // when set, loaded (spec-hash checked)

    // synthetic-task fields; steps/seed/adam_beta2/reg.lambda are shared
    std::size_t syn_dim = 8;
    std::size_t syn_samples = 64;
    double syn_alpha = 0.1;
    long syn_snapshot_cadence = 10;

    bool operator==(const ExperimentConfig&) const;

    TaskSpec task_spec() const;
    SyntheticRunConfig synthetic_config() const;
    // "commit" (coordinated + regularizer), "commit-clr" (coordinated alone),
    // else the strategy name.
    std::string method_label() const;
};

std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& cfg);

void validate_config(const ExperimentConfig& cfg);

}  // namespace cotune
