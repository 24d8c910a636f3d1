#include "cotune/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace cotune {

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
    return name == o.name && task == o.task && seed == o.seed && steps == o.steps &&
           batch_size == o.batch_size && log_cadence == o.log_cadence &&
           eval_cadence == o.eval_cadence && out_dir == o.out_dir && model == o.model &&
           task_noise == o.task_noise && train_size == o.train_size && eval_size == o.eval_size &&
           data_seed == o.data_seed && sched == o.sched && reg == o.reg && backend == o.backend &&
           adam_beta2 == o.adam_beta2 && adam_eps == o.adam_eps && metric_kind == o.metric_kind &&
           kappa == o.kappa && kappa_raw_step == o.kappa_raw_step &&
           measure_joint == o.measure_joint && pretrain_steps == o.pretrain_steps &&
           pretrain_lr == o.pretrain_lr && backbone_path == o.backbone_path &&
           dataset_path == o.dataset_path && syn_dim == o.syn_dim &&
           syn_samples == o.syn_samples && syn_alpha == o.syn_alpha &&
           syn_snapshot_cadence == o.syn_snapshot_cadence;
}

TaskSpec ExperimentConfig::task_spec() const {
    TaskSpec spec = task == "toy-caption" ? caption_task_spec() : qa_task_spec();
    spec.noise = task_noise;
    spec.train_size = train_size;
    spec.eval_size = eval_size;
    spec.seed = data_seed;
    spec.vocab = model.vocab;
    spec.feat_dim = model.feat_dim;
    return spec;
}

SyntheticRunConfig ExperimentConfig::synthetic_config() const {
    SyntheticRunConfig syn;
    syn.dim = syn_dim;
    syn.samples = syn_samples;
    syn.alpha = syn_alpha;
    syn.beta2 = adam_beta2;
    syn.lambda = reg.lambda;
    syn.eps = adam_eps;
    syn.steps = steps;
    syn.snapshot_cadence = syn_snapshot_cadence;
    syn.seed = seed;
    return syn;
}

std::string ExperimentConfig::method_label() const {
    if (sched.strategy == Strategy::coordinated) return reg.enabled ? "commit" : "commit-clr";
    return strategy_name(sched.strategy);
}

std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream o;
    o << "name = " << c.name << "\n";
    o << "task = " << c.task << "\n";
    o << "seed = " << c.seed << "\n";
    o << "steps = " << c.steps << "\n";
    o << "batch_size = " << c.batch_size << "\n";
    o << "log_cadence = " << c.log_cadence << "\n";
    o << "eval_cadence = " << c.eval_cadence << "\n";
    o << "out_dir = " << c.out_dir << "\n";
    o << "model.vocab = " << c.model.vocab << "\n";
    o << "model.dim = " << c.model.dim << "\n";
    o << "model.blocks = " << c.model.blocks << "\n";
    o << "model.mlp_hidden = " << c.model.mlp_hidden << "\n";
    o << "model.soft_tokens = " << c.model.soft_tokens << "\n";
    o << "model.feat_dim = " << c.model.feat_dim << "\n";
    o << "model.enc_hidden = " << c.model.enc_hidden << "\n";
    o << "model.adapter_rank = " << c.model.adapter_rank << "\n";
    o << "model.max_seq = " << c.model.max_seq << "\n";
    o << "task.noise = " << format_double(c.task_noise) << "\n";
    o << "task.train_size = " << c.train_size << "\n";
    o << "task.eval_size = " << c.eval_size << "\n";
    o << "task.seed = " << c.data_seed << "\n";
    o << "strategy = " << strategy_name(c.sched.strategy) << "\n";
    o << "lr_s = " << format_double(c.sched.lr_s) << "\n";
    o << "lr_t = " << format_double(c.sched.lr_t) << "\n";
    o << "boost_lr = " << format_double(c.sched.boost) << "\n";
    o << "alpha = " << format_double(c.sched.alpha) << "\n";
    o << "gamma = " << format_double(c.sched.gamma) << "\n";
    o << "n_kappa = " << c.sched.n_kappa << "\n";
    o << "l_lr = " << c.sched.l_lr << "\n";
    o << "kappa_feed = " << (c.sched.feed_every_step ? "every-step" : "refresh-only") << "\n";
    o << "cd_switch_threshold = " << format_double(c.sched.cd_switch_threshold) << "\n";
    o << "cd_patience = " << c.sched.cd_patience << "\n";
    o << "reg.enabled = " << (c.reg.enabled ? 1 : 0) << "\n";
    o << "reg.lambda = " << format_double(c.reg.lambda) << "\n";
    o << "reg.distance = " << distance_kind_name(c.reg.kind) << "\n";
    o << "backend = " << backend_name(c.backend) << "\n";
    o << "adam_beta2 = " << format_double(c.adam_beta2) << "\n";
    o << "adam_eps = " << format_double(c.adam_eps) << "\n";
    o << "metric.distance = " << distance_kind_name(c.metric_kind) << "\n";
    o << "kappa.floor = " << format_double(c.kappa.floor) << "\n";
    o << "kappa.min = " << format_double(c.kappa.min) << "\n";
    o << "kappa.max = " << format_double(c.kappa.max) << "\n";
    o << "kappa.step_mode = " << (c.kappa_raw_step ? "raw" : "lr-scaled") << "\n";
    o << "measure_joint = " << (c.measure_joint ? 1 : 0) << "\n";
    o << "pretrain.steps = " << c.pretrain_steps << "\n";
    o << "pretrain.lr = " << format_double(c.pretrain_lr) << "\n";
    o << "backbone_path = " << c.backbone_path << "\n";
    o << "dataset_path = " << c.dataset_path << "\n";
    o << "syn.dim = " << c.syn_dim << "\n";
    o << "syn.samples = " << c.syn_samples << "\n";
    o << "syn.alpha = " << format_double(c.syn_alpha) << "\n";
    o << "syn.snapshot_cadence = " << c.syn_snapshot_cadence << "\n";
    return o.str();
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
}

bool parse_bool01(const std::string& key, const std::string& v) {
    if (v == "0") return false;
    if (v == "1") return true;
    throw ConfigError("config: '" + key + "' must be 0 or 1, got '" + v + "'");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " has no '='");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string v = trim(stripped.substr(eq + 1));
        try {
            if (key == "name") c.name = v;
            else if (key == "task") c.task = v;
            else if (key == "seed") c.seed = std::stoull(v);
            else if (key == "steps") c.steps = std::stol(v);
            else if (key == "batch_size") c.batch_size = std::stoull(v);
            else if (key == "log_cadence") c.log_cadence = std::stol(v);
            else if (key == "eval_cadence") c.eval_cadence = std::stol(v);
            else if (key == "out_dir") c.out_dir = v;
            else if (key == "model.vocab") c.model.vocab = std::stoull(v);
            else if (key == "model.dim") c.model.dim = std::stoull(v);
            else if (key == "model.blocks") c.model.blocks = std::stoull(v);
            else if (key == "model.mlp_hidden") c.model.mlp_hidden = std::stoull(v);
            else if (key == "model.soft_tokens") c.model.soft_tokens = std::stoull(v);
            else if (key == "model.feat_dim") c.model.feat_dim = std::stoull(v);
            else if (key == "model.enc_hidden") c.model.enc_hidden = std::stoull(v);
            else if (key == "model.adapter_rank") c.model.adapter_rank = std::stoull(v);
            else if (key == "model.max_seq") c.model.max_seq = std::stoull(v);
            else if (key == "task.noise") c.task_noise = std::stod(v);
            else if (key == "task.train_size") c.train_size = std::stoull(v);
            else if (key == "task.eval_size") c.eval_size = std::stoull(v);
            else if (key == "task.seed") c.data_seed = std::stoull(v);
            else if (key == "strategy") c.sched.strategy = parse_strategy(v);
            else if (key == "lr_s") c.sched.lr_s = std::stod(v);
            else if (key == "lr_t") c.sched.lr_t = std::stod(v);
            else if (key == "boost_lr") c.sched.boost = std::stod(v);
            else if (key == "alpha") c.sched.alpha = std::stod(v);
            else if (key == "gamma") c.sched.gamma = std::stod(v);
            else if (key == "n_kappa") c.sched.n_kappa = std::stoull(v);
            else if (key == "l_lr") c.sched.l_lr = std::stol(v);
            else if (key == "kappa_feed") {
                if (v == "every-step") c.sched.feed_every_step = true;
                else if (v == "refresh-only") c.sched.feed_every_step = false;
                else throw ConfigError("config: kappa_feed must be every-step or refresh-only");
            }
            else if (key == "cd_switch_threshold") c.sched.cd_switch_threshold = std::stod(v);
            else if (key == "cd_patience") c.sched.cd_patience = std::stoi(v);
            else if (key == "reg.enabled") c.reg.enabled = parse_bool01(key, v);
            else if (key == "reg.lambda") c.reg.lambda = std::stod(v);
            else if (key == "reg.distance") c.reg.kind = parse_distance_kind(v);
            else if (key == "backend") c.backend = parse_backend(v);
            else if (key == "adam_beta2") c.adam_beta2 = std::stod(v);
            else if (key == "adam_eps") c.adam_eps = std::stod(v);
            else if (key == "metric.distance") c.metric_kind = parse_distance_kind(v);
            else if (key == "kappa.floor") c.kappa.floor = std::stod(v);
            else if (key == "kappa.min") c.kappa.min = std::stod(v);
            else if (key == "kappa.max") c.kappa.max = std::stod(v);
            else if (key == "kappa.step_mode") {
                if (v == "raw") c.kappa_raw_step = true;
                else if (v == "lr-scaled") c.kappa_raw_step = false;
                else throw ConfigError("config: kappa.step_mode must be raw or lr-scaled");
            }
            else if (key == "measure_joint") c.measure_joint = parse_bool01(key, v);
            else if (key == "pretrain.steps") c.pretrain_steps = std::stol(v);
            else if (key == "pretrain.lr") c.pretrain_lr = std::stod(v);
            else if (key == "backbone_path") c.backbone_path = v;
            else if (key == "dataset_path") c.dataset_path = v;
            else if (key == "syn.dim") c.syn_dim = std::stoull(v);
            else if (key == "syn.samples") c.syn_samples = std::stoull(v);
            else if (key == "syn.alpha") c.syn_alpha = std::stod(v);
            else if (key == "syn.snapshot_cadence") c.syn_snapshot_cadence = std::stol(v);
            else throw ConfigError("config: unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("config: bad value for '" + key + "': '" + v + "'");
        } catch (const std::out_of_range&) {
            throw ConfigError("config: value out of range for '" + key + "': '" + v + "'");
        }
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open '" + path + "'");
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("config: cannot open '" + path + "' for writing");
    f << serialize_config(cfg);
}

void validate_config(const ExperimentConfig& c) {
    if (c.task != "toy-qa" && c.task != "toy-caption" && c.task != "synthetic")
        throw ConfigError("config: unknown task '" + c.task + "'");
    if (c.steps < 0) throw ConfigError("config: steps must be >= 0");
    if (c.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (c.log_cadence < 1 || c.eval_cadence < 1)
        throw ConfigError("config: cadences must be >= 1");
    if (!(c.sched.gamma > 0.0) || !(c.sched.gamma < 1.0))
        throw ConfigError("config: gamma must lie in (0,1)");
    if (!(c.sched.alpha > 0.0)) throw ConfigError("config: alpha must be positive");
    if (!(c.reg.lambda >= 0.0) || !std::isfinite(c.reg.lambda))
        throw ConfigError("config: reg.lambda must be finite and >= 0");
    if (c.kappa.min > c.kappa.max) throw ConfigError("config: kappa.min exceeds kappa.max");
    if (c.task != "synthetic") {
        const TaskSpec spec = c.task_spec();
        if (spec.vocab != c.model.vocab || spec.feat_dim != c.model.feat_dim)
            throw ConfigError("config: task/model vocab or feature dims disagree");
        validate_task_spec(spec);
        const std::size_t longest =
            c.model.soft_tokens + (spec.kind == TaskSpec::Kind::qa ? 3u : 2u) + spec.answer_max + 1;
        if (longest > c.model.max_seq)
            throw ConfigError("config: max_seq " + std::to_string(c.model.max_seq) +
                              " too small for task sequences up to " + std::to_string(longest));
    }
    if (c.backend == Backend::adam) {
        if (!(c.adam_beta2 > 0.0) || c.adam_beta2 > 1.0)
            throw ConfigError("config: adam_beta2 must lie in (0,1]");
    }
}

}  // namespace cotune
