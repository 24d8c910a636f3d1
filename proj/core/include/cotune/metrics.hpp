#pragma once

#include <span>

#include "cotune/model.hpp"

namespace cotune {

using DistanceKind = ReduceDistance;

DistanceKind parse_distance_kind(const std::string& s);
const char* distance_kind_name(DistanceKind k);

// One logged training step's measurements. CSV column order is pinned in the
// harness; eval_acc is blank off-cadence.
struct BalanceRecord {
    long step = 0;
    double loss = 0.0;
    double kappa = 0.0;
    double kappa_ma = 0.0;
    double d_t = 0.0;      // adapter-only candidate-step distance (ratio numerator)
    double d_s = 0.0;      // encoder-only candidate-step distance (ratio denominator)
    double d_joint = 0.0;  // both components stepped
    double h_s = 0.0;
    double h_t = 0.0;
    double bound_t = 0.0;
    double bound_s = 0.0;
    double gnorm_s = 0.0;
    double gnorm_t = 0.0;
    double lr_s = 0.0;
    double lr_t = 0.0;
    double reg_ds = 0.0;  // look-ahead mean distance for the encoder step
    double reg_dt = 0.0;
    bool has_eval = false;
    double eval_acc = 0.0;
    bool kappa_degenerate = false;
};

// Metric between two categorical distributions, in [0,1]. Both inputs must
// sum to 1 within 1e-9. total_variation = (1/2) sum |p-q|; sqrt_jensen_shannon
// uses base-2 logs so the divergence under the root is itself in [0,1].
double distribution_distance(std::span<const double> p, std::span<const double> q,
                             DistanceKind kind);

// Mean over examples of mean over answer positions.
double sequence_distance(const GenerationDistribution& a, const GenerationDistribution& b,
                         DistanceKind kind);

// Applies the candidate step (-lr * delta) to one component, measures the
// sequence distance against `base` on the same batch, and restores the
// parameters bit-exactly (checksum-verified, ContractError on failure).
double component_step_distance(Model& model, const Batch& batch, Component c,
                               std::span<const double> delta, double lr, DistanceKind kind,
                               const GenerationDistribution& base);

struct KappaLimits {
    double floor = 1e-12;
    double min = 1e-3;
    double max = 1e3;

    bool operator==(const KappaLimits&) const = default;
};

// kappa = d_t / max(d_s, floor), clamped to [min, max]. `degenerate` reports
// whether the floor engaged.
double compute_kappa(double d_t, double d_s, const KappaLimits& limits,
                     bool* degenerate = nullptr);

struct HPair {
    double h_s = 0.0;
    double h_t = 0.0;
};

// h_s = d_s / (|I_T| + |theta_S(I_S)|), h_t = d_t / |I_S| with the batch
// norms reported by Model::batch_norms.
HPair compute_h(const BatchNorms& norms, double d_s, double d_t);

struct BoundPair {
    double bound_t = 0.0;
    double bound_s = 0.0;
};

// bound_t = gamma (kappa + 1) h_s, bound_s = gamma (1/kappa + 1) h_t;
// gamma must lie in (0,1).
BoundPair gradient_bounds(double kappa, double h_s, double h_t, double gamma);

// l2(grads) / l2(params); zero parameter norm is a contract error.
double normalized_grad_norm(std::span<const double> grads, std::span<const double> params);

// All four distances of one joint candidate step, measured with nested
// probes: the adapter step at the current encoder, the joint step, the
// encoder step at both the current and the stepped adapter. The literal
// triangle inequality is d_joint <= d_t_at_s + d_s_at_t_next.
struct JointProbe {
    double d_joint = 0.0;
    double d_t_at_s = 0.0;
    double d_s_at_t = 0.0;
    double d_s_at_t_next = 0.0;
};

JointProbe joint_step_probe(Model& model, const Batch& batch, std::span<const double> delta_s,
                            std::span<const double> delta_t, double lr_s, double lr_t,
                            DistanceKind kind);

}  // namespace cotune
