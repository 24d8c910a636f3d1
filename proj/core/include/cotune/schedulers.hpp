#pragma once

#include <deque>
#include <string>
#include <vector>

#include "cotune/common.hpp"

namespace cotune {

enum class Strategy {
    constant,
    language_up,
    vision_up,
    feature_cd,
    language_cd,
    coordinated,
};

Strategy parse_strategy(const std::string& s);
const char* strategy_name(Strategy s);

struct RatePair {
    double lr_s = 0.0;
    double lr_t = 0.0;
};

// beta_t = (alpha / (gamma (kappa_ma + 1)), alpha / (gamma (1/kappa_ma + 1)))
// for the adapter and encoder respectively; lr_s + lr_t == alpha/gamma and
// lr_s == kappa_ma * lr_t by construction.
RatePair coordinated_rates(double kappa_ma, double alpha, double gamma, double kappa_min = 1e-3,
                           double kappa_max = 1e3);

struct SchedulerConfig {
    Strategy strategy = Strategy::constant;
    double lr_s = 1e-4;       // base rates; warm-up and fixed strategies use these
    double lr_t = 1e-4;
    double boost = 1e-3;      // raised rate for the language-up/vision-up probes
    double alpha = 1e-4;      // learning advantage
    double gamma = 0.5;
    std::size_t n_kappa = 8;  // moving-average window
    long l_lr = 10;           // steps between rate refreshes
    double kappa_min = 1e-3;
    double kappa_max = 1e3;
    double cd_switch_threshold = 1e-6;  // parameter-update l2 norm
    int cd_patience = 20;               // consecutive calm steps before the CD swap
    bool feed_every_step = true;        // false: only refresh steps feed the buffer

    bool operator==(const SchedulerConfig&) const = default;
};

struct RefreshEvent {
    long step = 0;
    double kappa_ma = 0.0;
    double lr_s = 0.0;
    double lr_t = 0.0;
};

// Learning-rate strategy state for one run. Call order per step t:
// rates_for_step(t), train with the returned rates, then observe(t, ...).
class Scheduler {
  public:
    explicit Scheduler(SchedulerConfig cfg);

    const SchedulerConfig& config() const { return cfg_; }

    RatePair rates_for_step(long step);

    // Feeds step t's measured kappa and the applied per-component update
    // norms (the CD stabilization signal).
    void observe(long step, double kappa, double update_norm_s, double update_norm_t);

    // Push one kappa and return the refreshed moving average; mean over the
    // buffer contents during warm-up (fewer than n_kappa entries).
    double push_kappa(double kappa);

    double kappa_ma() const;
    std::size_t buffer_size() const { return buf_.size(); }
    bool warmed_up(long step) const;

    bool cd_switched() const { return cd_switched_; }
    long cd_switch_step() const { return cd_switch_step_; }

    const std::vector<RefreshEvent>& refresh_events() const { return refreshes_; }

  private:
    bool is_cd() const {
        return cfg_.strategy == Strategy::feature_cd || cfg_.strategy == Strategy::language_cd;
    }

    SchedulerConfig cfg_;
    std::deque<double> buf_;
    RatePair held_;
    long last_refresh_step_ = -1;
    bool cd_switched_ = false;
    long cd_switch_step_ = -1;
    int cd_calm_streak_ = 0;
    std::vector<RefreshEvent> refreshes_;
};

}  // namespace cotune
