#pragma once

#include <optional>
#include <span>

#include "cotune/metrics.hpp"
#include "cotune/schedulers.hpp"

namespace cotune {

enum class Backend { sgd, adam };

Backend parse_backend(const std::string& s);
const char* backend_name(Backend b);

// theta <- theta - lr * g, elementwise over a flat view.
void sgd_step(std::span<double> params, std::span<const double> grads, double lr);
void sgd_step(Model& model, Component c, std::span<const double> grads, double lr);

// Bias-corrected step size alpha_k = alpha * sqrt((1 - beta2^k)/(1 - beta2));
// beta2 == 1 takes the continuous limit alpha * sqrt(k).
double adam_alpha_k(double alpha, double beta2, long k);

// Momentum-free second-moment rule fed with the combined gradient:
//   v_k = beta2 v_{k-1} + g^2
//   x_k = x_{k-1} - alpha_k * g / sqrt(v_k + eps)
class AdamState {
  public:
    AdamState(std::size_t dim, double beta2, double eps = 1e-8);

    // Advances (v, k) and returns the step vector u to subtract from x.
    std::vector<double> update(std::span<const double> grad, double alpha);

    long step_count() const { return k_; }
    double beta2() const { return beta2_; }
    const std::vector<double>& second_moment() const { return v_; }

  private:
    std::vector<double> v_;
    long k_ = 0;
    double beta2_;
    double eps_;
};

struct RegularizerConfig {
    bool enabled = false;
    double lambda = 1.0;
    DistanceKind kind = DistanceKind::sqrt_jensen_shannon;

    bool operator==(const RegularizerConfig&) const = default;
};

struct LookaheadResult {
    std::vector<double> reg_grad;  // gradient of the mean distance at the candidate point
    double dbar = 0.0;             // the mean distance itself
    GenerationDistribution stepped;  // distributions at the candidate point
};

// Candidate step theta' = theta - lr * base_grad for one component, then the
// gradient of the mean distance between the detached reference distributions
// and the distributions at theta', taken at theta'. Parameters are restored
// bit-exactly. Overwrites the model's grad buffers.
LookaheadResult lookahead_regularizer_grad(Model& model, const Batch& batch, Component c,
                                           std::span<const double> base_grad, double lr,
                                           DistanceKind kind, const GenerationDistribution& yhat);

struct CommitConfig {
    RegularizerConfig reg;
    Backend backend = Backend::sgd;
    DistanceKind metric_kind = DistanceKind::total_variation;
    double gamma = 0.5;
    KappaLimits kappa;
    bool kappa_raw_step = false;  // probe with unit steps instead of lr-scaled ones
    bool measure_joint = true;    // extra no-grad forward for dJoint
    bool apply_update = true;     // false: measure only, leave parameters untouched
};

// Optional capture of a step's raw vectors for offline replay checks.
struct StepTrace {
    std::vector<double> loss_grad_s, loss_grad_t;
    std::vector<double> reg_grad_s, reg_grad_t;
    std::vector<double> update_s, update_t;  // the applied deltas (subtracted)
};

struct CommitStepResult {
    BalanceRecord record;  // kappa_ma and eval fields left for the harness
    double update_norm_s = 0.0;
    double update_norm_t = 0.0;
    double d_s_at_t_next = 0.0;  // only when measure_joint
};

// One coordinated training step: a single loss backward for both components,
// per-component look-ahead probes (distances reused for kappa/H/bounds), the
// regularized combined gradient g - lambda*r fed to the chosen backend.
CommitStepResult commit_step(Model& model, const Batch& batch, RatePair rates,
                             const CommitConfig& cfg, AdamState* adam_s = nullptr,
                             AdamState* adam_t = nullptr, StepTrace* trace = nullptr);

}  // namespace cotune
