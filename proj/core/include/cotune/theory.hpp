#pragma once

#include <span>
#include <string>
#include <vector>

#include "cotune/common.hpp"

namespace cotune {

// Inputs of the convergence bound. n is the window length entering
// (1 - beta2^n); it defaults to K when estimated from a trajectory.
struct BoundInputs {
    long K = 1;
    double alpha = 0.0;
    double beta2 = 0.0;
    double lambda = 0.0;
    double R = 0.0;       // combined-gradient norm bound (includes sqrt(eps))
    double L = 0.0;       // gradient smoothness constant
    double F0 = 0.0;      // initial objective value
    double f_star = 0.0;  // objective lower bound
    double eps = 1e-8;
    long n = 1;
};

// 2R(F0 - f*)/(alpha (1+lambda) K)
//   + C [ (1/K) ln((1-beta2^n) R^2 / ((1-beta2) eps)) - ln beta2 ],
// C = 2 alpha R / sqrt(1-beta2) + alpha^2 L / (2 (1-beta2)).
// beta2 == 1 is rejected here: the C and log terms diverge.
double convergence_bound(const BoundInputs& b);

// First additive term alone; strictly decreasing in lambda.
double convergence_bound_first_term(const BoundInputs& b);

struct TrajectoryPoint {
    long k = 0;
    double objective = 0.0;           // F(x_k), the main objective
    double grad_norm = 0.0;           // |grad F(x_k)|
    double combined_grad_norm = 0.0;  // |grad f + lambda grad h| at x_k
};

struct TrajectorySnapshot {
    long k = 0;
    std::vector<double> x;
    std::vector<double> grad;  // grad F(x)
};

struct Trajectory {
    std::string backend;  // verification requires "adam"
    double alpha = 0.0;
    double beta2 = 0.0;
    double lambda = 0.0;
    double eps = 1e-8;
    std::vector<TrajectoryPoint> points;
    std::vector<TrajectorySnapshot> snapshots;
    bool has_analytic = false;
    double analytic_R = 0.0;
    double analytic_L = 0.0;
    double analytic_f_star = 0.0;
};

void save_trajectory(const std::string& path, const Trajectory& t);
Trajectory load_trajectory(const std::string& path);

struct EstimatedConstants {
    BoundInputs inputs;
    bool l_is_lower_estimate = true;  // pairwise ratios under-estimate the true L
    bool f_star_is_proxy = true;      // best observed loss minus slack
    double f_star_slack = 0.0;
};

// R = max_k |grad f + lambda grad h| + sqrt(eps); L = max over snapshot pairs
// of |grad F(x) - grad F(y)| / |x - y| (an empirical lower estimate);
// F0 from step 0; f* = best observed objective minus `f_star_slack`.
EstimatedConstants estimate_constants(const Trajectory& t, double f_star_slack = 0.1);

struct VerifyReport {
    double min_grad_norm_sq = 0.0;
    double mean_grad_norm_sq = 0.0;  // second reading, informational
    double bound = 0.0;
    bool satisfied = false;
    double margin = 0.0;  // bound - min_grad_norm_sq
    bool f_star_is_proxy = false;
    BoundInputs inputs;
};

// Checks min_k |grad F(x_k)|^2 <= bound. Refuses (ContractError) when the
// trajectory is not from the adam backend, when (alpha, beta2, lambda)
// disagree with the trajectory, or when R is below the observed maximum
// combined-gradient norm plus sqrt(eps).
VerifyReport verify_trajectory(const Trajectory& t, const BoundInputs& b,
                               bool f_star_is_proxy = false);

void save_verify_report(const std::string& path, const VerifyReport& r);

// Bundled smooth objective for bound verification: mean softplus losses of a
// synthetic linear problem; the regularization pool h is drawn from the same
// generator so its gradient promotes the same descent direction.
class LogisticPool {
  public:
    LogisticPool(std::size_t dim, std::size_t samples, std::uint64_t seed,
                 std::uint64_t stream);

    double value(std::span<const double> x) const;
    void add_grad(std::span<const double> x, double scale, std::span<double> out) const;

    // (1/M) sum_i |a_i|: a uniform bound on the gradient norm.
    double grad_norm_bound() const;
    // (1/(4M)) sum_i |a_i|^2 >= lambda_max of the mean Hessian.
    double smoothness_bound() const;

    std::size_t dim() const { return dim_; }

  private:
    std::size_t dim_;
    std::size_t samples_;
    std::vector<double> a_;  // samples x dim
    std::vector<int> y_;
};

struct SyntheticRunConfig {
    std::size_t dim = 8;
    std::size_t samples = 64;
    double alpha = 0.1;
    double beta2 = 0.99;
    double lambda = 1.0;
    double eps = 1e-8;
    long steps = 200;
    long snapshot_cadence = 10;
    std::uint64_t seed = 1;

    bool operator==(const SyntheticRunConfig&) const = default;
};

// Runs the momentum-free adam rule on f + lambda h and records the
// trajectory with analytic R/L/f* attached.
Trajectory run_synthetic_adam(const SyntheticRunConfig& cfg);

}  // namespace cotune
