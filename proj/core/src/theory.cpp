#include "cotune/theory.hpp"

#include <cmath>
#include <fstream>
#include <span>

#include <json.hpp>

#include "cotune/optimizer.hpp"

namespace cotune {

namespace {

void validate_bound_inputs(const BoundInputs& b) {
    if (b.K < 1) throw ConfigError("convergence_bound: K must be >= 1");
    if (b.n < 1) throw ConfigError("convergence_bound: n must be >= 1");
    if (!(b.alpha > 0.0)) throw ConfigError("convergence_bound: alpha must be positive");
    if (!(b.beta2 > 0.0) || b.beta2 > 1.0)
        throw ConfigError("convergence_bound: beta2 must lie in (0,1]");
    if (!(b.lambda >= 0.0)) throw ConfigError("convergence_bound: lambda must be >= 0");
    if (!(b.eps > 0.0)) throw ConfigError("convergence_bound: eps must be positive");
    if (!(b.R >= std::sqrt(b.eps)))
        throw ConfigError("convergence_bound: R must be >= sqrt(eps)");
}

}  // namespace

double convergence_bound_first_term(const BoundInputs& b) {
    validate_bound_inputs(b);
    return 2.0 * b.R * (b.F0 - b.f_star) / (b.alpha * (1.0 + b.lambda) * static_cast<double>(b.K));
}

double convergence_bound(const BoundInputs& b) {
    validate_bound_inputs(b);
    if (b.beta2 == 1.0)
        throw ConfigError("convergence_bound: beta2 == 1 diverges (log and C terms)");
    const double one_minus = 1.0 - b.beta2;
    const double log_arg =
        (1.0 - std::pow(b.beta2, static_cast<double>(b.n))) * b.R * b.R / (one_minus * b.eps);
    if (!(log_arg > 0.0)) throw ConfigError("convergence_bound: non-positive log argument");
    const double c = 2.0 * b.alpha * b.R / std::sqrt(one_minus) +
                     b.alpha * b.alpha * b.L / (2.0 * one_minus);
    return convergence_bound_first_term(b) +
           c * (std::log(log_arg) / static_cast<double>(b.K) - std::log(b.beta2));
}

// ---------------------------------------------------------------------------
// Trajectory (de)serialization
// ---------------------------------------------------------------------------

void save_trajectory(const std::string& path, const Trajectory& t) {
    nlohmann::json j;
    j["version"] = 1;
    j["backend"] = t.backend;
    j["alpha"] = t.alpha;
    j["beta2"] = t.beta2;
    j["lambda"] = t.lambda;
    j["eps"] = t.eps;
    auto& pts = j["points"] = nlohmann::json::array();
    for (const auto& p : t.points)
        pts.push_back({{"k", p.k},
                       {"objective", p.objective},
                       {"grad_norm", p.grad_norm},
                       {"combined_grad_norm", p.combined_grad_norm}});
    auto& snaps = j["snapshots"] = nlohmann::json::array();
    for (const auto& s : t.snapshots)
        snaps.push_back({{"k", s.k}, {"x", s.x}, {"grad", s.grad}});
    if (t.has_analytic) {
        j["analytic"] = {{"R", t.analytic_R}, {"L", t.analytic_L}, {"f_star", t.analytic_f_star}};
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("trajectory: cannot open '" + path + "' for writing");
    f << j.dump(2) << "\n";
}

Trajectory load_trajectory(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("trajectory: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("trajectory: parse error in '" + path + "': " + e.what());
    }
    if (j.value("version", 0) != 1) throw IoError("trajectory: unsupported version");
    Trajectory t;
    t.backend = j.at("backend").get<std::string>();
    t.alpha = j.at("alpha").get<double>();
    t.beta2 = j.at("beta2").get<double>();
    t.lambda = j.at("lambda").get<double>();
    t.eps = j.at("eps").get<double>();
    for (const auto& p : j.at("points"))
        t.points.push_back(TrajectoryPoint{p.at("k").get<long>(), p.at("objective").get<double>(),
                                           p.at("grad_norm").get<double>(),
                                           p.at("combined_grad_norm").get<double>()});
    for (const auto& s : j.at("snapshots"))
        t.snapshots.push_back(TrajectorySnapshot{s.at("k").get<long>(),
                                                 s.at("x").get<std::vector<double>>(),
                                                 s.at("grad").get<std::vector<double>>()});
    if (j.contains("analytic")) {
        t.has_analytic = true;
        t.analytic_R = j["analytic"].at("R").get<double>();
        t.analytic_L = j["analytic"].at("L").get<double>();
        t.analytic_f_star = j["analytic"].at("f_star").get<double>();
    }
    return t;
}

EstimatedConstants estimate_constants(const Trajectory& t, double f_star_slack) {
    if (t.points.empty()) throw ContractError("estimate_constants: empty trajectory");
    if (t.snapshots.size() < 2)
        throw ContractError("estimate_constants: need at least 2 parameter snapshots");

    EstimatedConstants est;
    est.f_star_slack = f_star_slack;
    BoundInputs& b = est.inputs;
    b.alpha = t.alpha;
    b.beta2 = t.beta2;
    b.lambda = t.lambda;
    b.eps = t.eps;
    b.K = static_cast<long>(t.points.size());
    b.n = b.K;

    double max_combined = 0.0, best = t.points.front().objective;
    for (const auto& p : t.points) {
        max_combined = std::max(max_combined, p.combined_grad_norm);
        best = std::min(best, p.objective);
    }
    b.R = max_combined + std::sqrt(t.eps);
    b.F0 = t.points.front().objective;
    b.f_star = best - f_star_slack;

    double l_est = 0.0;
    for (std::size_t i = 0; i < t.snapshots.size(); ++i) {
        for (std::size_t j = i + 1; j < t.snapshots.size(); ++j) {
            const auto& a = t.snapshots[i];
            const auto& c = t.snapshots[j];
            double dg = 0.0, dx = 0.0;
            for (std::size_t d = 0; d < a.x.size(); ++d) {
                dg += (a.grad[d] - c.grad[d]) * (a.grad[d] - c.grad[d]);
                dx += (a.x[d] - c.x[d]) * (a.x[d] - c.x[d]);
            }
            if (dx > 0.0) l_est = std::max(l_est, std::sqrt(dg / dx));
        }
    }
    b.L = l_est;
    return est;
}

VerifyReport verify_trajectory(const Trajectory& t, const BoundInputs& b, bool f_star_is_proxy) {
    if (t.backend != "adam")
        throw ContractError("verify_trajectory: trajectory backend is '" + t.backend +
                            "', the bound applies to adam");
    if (t.points.empty()) throw ContractError("verify_trajectory: empty trajectory");
    auto mismatch = [](double a, double c) { return std::abs(a - c) > 1e-12; };
    if (mismatch(t.alpha, b.alpha) || mismatch(t.beta2, b.beta2) || mismatch(t.lambda, b.lambda))
        throw ContractError("verify_trajectory: (alpha, beta2, lambda) disagree with trajectory");

    double max_combined = 0.0;
    for (const auto& p : t.points) max_combined = std::max(max_combined, p.combined_grad_norm);
    if (b.R < max_combined + std::sqrt(b.eps))
        throw ContractError("verify_trajectory: R " + format_double(b.R) +
                            " is below the observed combined-gradient bound " +
                            format_double(max_combined + std::sqrt(b.eps)));

    VerifyReport r;
    r.inputs = b;
    r.f_star_is_proxy = f_star_is_proxy;
    r.bound = convergence_bound(b);
    double min_sq = t.points.front().grad_norm * t.points.front().grad_norm;
    double mean_sq = 0.0;
    for (const auto& p : t.points) {
        const double sq = p.grad_norm * p.grad_norm;
        min_sq = std::min(min_sq, sq);
        mean_sq += sq;
    }
    r.min_grad_norm_sq = min_sq;
    r.mean_grad_norm_sq = mean_sq / static_cast<double>(t.points.size());
    r.satisfied = r.min_grad_norm_sq <= r.bound;
    r.margin = r.bound - r.min_grad_norm_sq;
    return r;
}

void save_verify_report(const std::string& path, const VerifyReport& r) {
    nlohmann::json j;
    j["version"] = 1;
    j["min_grad_norm_sq"] = r.min_grad_norm_sq;
    j["mean_grad_norm_sq"] = r.mean_grad_norm_sq;
    j["bound"] = r.bound;
    j["satisfied"] = r.satisfied;
    j["margin"] = r.margin;
    j["f_star_is_proxy"] = r.f_star_is_proxy;
    j["inputs"] = {{"K", r.inputs.K},         {"alpha", r.inputs.alpha},
                   {"beta2", r.inputs.beta2}, {"lambda", r.inputs.lambda},
                   {"R", r.inputs.R},         {"L", r.inputs.L},
                   {"F0", r.inputs.F0},       {"f_star", r.inputs.f_star},
                   {"eps", r.inputs.eps},     {"n", r.inputs.n}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("report: cannot open '" + path + "' for writing");
    f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic smooth objective
// ---------------------------------------------------------------------------

LogisticPool::LogisticPool(std::size_t dim, std::size_t samples, std::uint64_t seed,
                           std::uint64_t stream)
    : dim_(dim), samples_(samples), a_(dim * samples), y_(samples) {
    Prng rng(seed, stream);
    for (std::size_t i = 0; i < samples; ++i) {
        for (std::size_t d = 0; d < dim; ++d) a_[i * dim + d] = rng.normal() / std::sqrt(double(dim));
        y_[i] = rng.uniform() < 0.5 ? -1 : 1;
    }
}

double LogisticPool::value(std::span<const double> x) const {
    double total = 0.0;
    for (std::size_t i = 0; i < samples_; ++i) {
        double margin = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) margin += a_[i * dim_ + d] * x[d];
        margin *= y_[i];
        // softplus(-margin), stable on both tails
        total += margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
    }
    return total / static_cast<double>(samples_);
}

void LogisticPool::add_grad(std::span<const double> x, double scale, std::span<double> out) const {
    for (std::size_t i = 0; i < samples_; ++i) {
        double margin = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) margin += a_[i * dim_ + d] * x[d];
        margin *= y_[i];
        const double sigma = 1.0 / (1.0 + std::exp(margin));  // d softplus(-m)/dm = -sigma(-m)
        const double coef = -scale * sigma * y_[i] / static_cast<double>(samples_);
        for (std::size_t d = 0; d < dim_; ++d) out[d] += coef * a_[i * dim_ + d];
    }
}

double LogisticPool::grad_norm_bound() const {
    double total = 0.0;
    for (std::size_t i = 0; i < samples_; ++i) {
        double sq = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) sq += a_[i * dim_ + d] * a_[i * dim_ + d];
        total += std::sqrt(sq);
    }
    return total / static_cast<double>(samples_);
}

double LogisticPool::smoothness_bound() const {
    double total = 0.0;
    for (std::size_t i = 0; i < samples_; ++i)
        for (std::size_t d = 0; d < dim_; ++d) total += a_[i * dim_ + d] * a_[i * dim_ + d];
    return total / (4.0 * static_cast<double>(samples_));
}

Trajectory run_synthetic_adam(const SyntheticRunConfig& cfg) {
    if (cfg.steps < 1) throw ConfigError("synthetic run: steps must be >= 1");
    const LogisticPool f(cfg.dim, cfg.samples, cfg.seed, fnv1a64("syn-f"));
    const LogisticPool h(cfg.dim, cfg.samples, cfg.seed, fnv1a64("syn-h"));

    std::vector<double> x(cfg.dim);
    {
        Prng rng(cfg.seed, fnv1a64("syn-x0"));
        for (double& v : x) v = 0.5 * rng.normal();
    }

    Trajectory t;
    t.backend = "adam";
    t.alpha = cfg.alpha;
    t.beta2 = cfg.beta2;
    t.lambda = cfg.lambda;
    t.eps = cfg.eps;
    t.has_analytic = true;
    t.analytic_R = f.grad_norm_bound() + cfg.lambda * h.grad_norm_bound() + std::sqrt(cfg.eps);
    t.analytic_L = f.smoothness_bound() + cfg.lambda * h.smoothness_bound();
    t.analytic_f_star = 0.0;  // softplus losses are nonnegative

    AdamState adam(cfg.dim, cfg.beta2, cfg.eps);
    std::vector<double> grad_f(cfg.dim), combined(cfg.dim);
    for (long k = 0; k < cfg.steps; ++k) {
        std::fill(grad_f.begin(), grad_f.end(), 0.0);
        f.add_grad(x, 1.0, grad_f);
        combined = grad_f;
        h.add_grad(x, cfg.lambda, combined);

        double gf = 0.0, gc = 0.0;
        for (std::size_t d = 0; d < cfg.dim; ++d) {
            gf += grad_f[d] * grad_f[d];
            gc += combined[d] * combined[d];
        }
        t.points.push_back(TrajectoryPoint{k, f.value(x), std::sqrt(gf), std::sqrt(gc)});
        if (k % cfg.snapshot_cadence == 0)
            t.snapshots.push_back(TrajectorySnapshot{k, x, grad_f});

        const std::vector<double> u = adam.update(combined, cfg.alpha);
        for (std::size_t d = 0; d < cfg.dim; ++d) x[d] -= u[d];
    }
    return t;
}

}  // namespace cotune
