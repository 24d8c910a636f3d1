#include "cotune/schedulers.hpp"

#include <cmath>

namespace cotune {

Strategy parse_strategy(const std::string& s) {
    if (s == "constant") return Strategy::constant;
    if (s == "language-up") return Strategy::language_up;
    if (s == "vision-up") return Strategy::vision_up;
    if (s == "feature-cd") return Strategy::feature_cd;
    if (s == "language-cd") return Strategy::language_cd;
    if (s == "coordinated") return Strategy::coordinated;
    throw ConfigError("unknown strategy '" + s + "'");
}

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::constant: return "constant";
        case Strategy::language_up: return "language-up";
        case Strategy::vision_up: return "vision-up";
        case Strategy::feature_cd: return "feature-cd";
        case Strategy::language_cd: return "language-cd";
        case Strategy::coordinated: return "coordinated";
    }
    throw ContractError("bad strategy enum");
}

RatePair coordinated_rates(double kappa_ma, double alpha, double gamma, double kappa_min,
                           double kappa_max) {
    if (!(alpha > 0.0)) throw ConfigError("coordinated_rates: alpha must be positive");
    if (!(gamma > 0.0) || !(gamma < 1.0))
        throw ConfigError("coordinated_rates: gamma must lie in (0,1)");
    if (!(kappa_ma >= kappa_min) || !(kappa_ma <= kappa_max))
        throw ConfigError("coordinated_rates: kappa_ma " + format_double(kappa_ma) +
                          " outside [" + format_double(kappa_min) + ", " +
                          format_double(kappa_max) + "]");
    RatePair r;
    r.lr_t = alpha / (gamma * (kappa_ma + 1.0));
    r.lr_s = alpha / (gamma * (1.0 / kappa_ma + 1.0));
    return r;
}

Scheduler::Scheduler(SchedulerConfig cfg) : cfg_(cfg) {
    if (!(cfg_.lr_s > 0.0) || !(cfg_.lr_t > 0.0) || !(cfg_.boost > 0.0))
        throw ConfigError("scheduler: base rates must be positive");
    if (cfg_.n_kappa < 1) throw ConfigError("scheduler: n_kappa must be >= 1");
    if (cfg_.l_lr < 1) throw ConfigError("scheduler: l_lr must be >= 1");
    held_ = RatePair{cfg_.lr_s, cfg_.lr_t};
}

double Scheduler::push_kappa(double kappa) {
    if (!std::isfinite(kappa) || !(kappa > 0.0))
        throw ContractError("push_kappa: kappa must be finite and positive");
    buf_.push_back(kappa);
    if (buf_.size() > cfg_.n_kappa) buf_.pop_front();
    return kappa_ma();
}

double Scheduler::kappa_ma() const {
    if (buf_.empty()) return 1.0;  // balance point until any measurement arrives
    double s = 0.0;
    for (double k : buf_) s += k;
    return s / static_cast<double>(buf_.size());
}

bool Scheduler::warmed_up(long step) const {
    return buf_.size() >= cfg_.n_kappa && step >= cfg_.l_lr;
}

RatePair Scheduler::rates_for_step(long step) {
    switch (cfg_.strategy) {
        case Strategy::constant:
            return RatePair{cfg_.lr_s, cfg_.lr_t};
        case Strategy::language_up:
            return RatePair{cfg_.lr_s, cfg_.boost};
        case Strategy::vision_up:
            return RatePair{cfg_.boost, cfg_.lr_t};
        case Strategy::feature_cd:
            return cd_switched_ ? RatePair{0.0, cfg_.lr_t} : RatePair{cfg_.lr_s, 0.0};
        case Strategy::language_cd:
            return cd_switched_ ? RatePair{cfg_.lr_s, 0.0} : RatePair{0.0, cfg_.lr_t};
        case Strategy::coordinated:
            break;
    }
    if (!warmed_up(step)) return held_;
    if (step % cfg_.l_lr == 0 && step != last_refresh_step_) {
        const double kma = kappa_ma();
        held_ = coordinated_rates(kma, cfg_.alpha, cfg_.gamma, cfg_.kappa_min, cfg_.kappa_max);
        last_refresh_step_ = step;
        refreshes_.push_back(RefreshEvent{step, kma, held_.lr_s, held_.lr_t});
    }
    return held_;
}

void Scheduler::observe(long step, double kappa, double update_norm_s, double update_norm_t) {
    if (cfg_.strategy == Strategy::coordinated) {
        if (cfg_.feed_every_step || step % cfg_.l_lr == 0) push_kappa(kappa);
        return;
    }
    if (!is_cd() || cd_switched_) return;
    const double training_norm =
        cfg_.strategy == Strategy::feature_cd ? update_norm_s : update_norm_t;
    if (training_norm < cfg_.cd_switch_threshold)
        ++cd_calm_streak_;
    else
        cd_calm_streak_ = 0;
    if (cd_calm_streak_ >= cfg_.cd_patience) {
        cd_switched_ = true;
        cd_switch_step_ = step;
    }
}

}  // namespace cotune
