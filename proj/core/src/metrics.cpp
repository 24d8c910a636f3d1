#include "cotune/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace cotune {

DistanceKind parse_distance_kind(const std::string& s) {
    if (s == "tv" || s == "total-variation") return DistanceKind::total_variation;
    if (s == "sqrt-js") return DistanceKind::sqrt_jensen_shannon;
    throw ConfigError("unknown distance kind '" + s + "'");
}

const char* distance_kind_name(DistanceKind k) {
    return k == DistanceKind::total_variation ? "tv" : "sqrt-js";
}

namespace {

constexpr double kLog2 = 0.6931471805599453094;

void check_normalized(std::span<const double> p, const char* which) {
    double s = 0.0;
    for (double x : p) {
        if (x < 0.0) throw ContractError(std::string("distribution_distance: negative mass in ") + which);
        s += x;
    }
    if (std::abs(s - 1.0) > 1e-9)
        throw ContractError(std::string("distribution_distance: ") + which + " sums to " +
                            format_double(s) + ", not 1");
}

double row_distance(const double* p, const double* q, std::size_t n, DistanceKind kind) {
    if (kind == DistanceKind::total_variation) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::abs(p[j] - q[j]);
        return 0.5 * s;
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double m = 0.5 * (p[j] + q[j]);
        if (p[j] > 0.0) acc += 0.5 * p[j] * std::log(p[j] / m);
        if (q[j] > 0.0) acc += 0.5 * q[j] * std::log(q[j] / m);
    }
    return std::sqrt(std::max(acc / kLog2, 0.0));
}

}  // namespace

double distribution_distance(std::span<const double> p, std::span<const double> q,
                             DistanceKind kind) {
    if (p.size() != q.size())
        throw ContractError("distribution_distance: length mismatch " + std::to_string(p.size()) +
                            " vs " + std::to_string(q.size()));
    if (p.empty()) throw ContractError("distribution_distance: empty distributions");
    check_normalized(p, "p");
    check_normalized(q, "q");
    return row_distance(p.data(), q.data(), p.size(), kind);
}

double sequence_distance(const GenerationDistribution& a, const GenerationDistribution& b,
                         DistanceKind kind) {
    if (!a.same_layout(b)) throw ContractError("sequence_distance: mask mismatch");
    if (a.examples.empty()) throw ContractError("sequence_distance: empty batch");
    const std::size_t v = a.vocab;
    double total = 0.0;
    for (std::size_t e = 0; e < a.examples.size(); ++e) {
        const auto& pa = a.examples[e];
        const auto& pb = b.examples[e];
        double ex_total = 0.0;
        for (std::size_t i = 0; i < pa.positions; ++i)
            ex_total += row_distance(pa.probs.data() + i * v, pb.probs.data() + i * v, v, kind);
        total += ex_total / static_cast<double>(pa.positions);
    }
    return total / static_cast<double>(a.examples.size());
}

double component_step_distance(Model& model, const Batch& batch, Component c,
                               std::span<const double> delta, double lr, DistanceKind kind,
                               const GenerationDistribution& base) {
    const auto snap = model.snapshot(c);
    const std::uint64_t before = model.component_checksum(c);
    model.apply_delta(c, delta, -lr);
    const GenerationDistribution stepped = model.forward_distributions(batch);
    model.restore(c, snap);
    if (model.component_checksum(c) != before)
        throw ContractError("component_step_distance: parameter restoration failed for component " +
                            std::string(component_name(c)));
    return sequence_distance(base, stepped, kind);
}

double compute_kappa(double d_t, double d_s, const KappaLimits& limits, bool* degenerate) {
    if (d_t < 0.0 || d_s < 0.0) throw ContractError("compute_kappa: negative distance");
    const bool floored = d_s < limits.floor;
    if (degenerate) *degenerate = floored;
    const double kappa = d_t / std::max(d_s, limits.floor);
    return std::clamp(kappa, limits.min, limits.max);
}

HPair compute_h(const BatchNorms& norms, double d_s, double d_t) {
    const double denom_s = norms.instruction_embedding + norms.soft_tokens;
    if (!(denom_s > 0.0)) throw ContractError("compute_h: zero instruction/soft-token norm");
    if (!(norms.feature > 0.0)) throw ContractError("compute_h: zero feature norm");
    return HPair{d_s / denom_s, d_t / norms.feature};
}

BoundPair gradient_bounds(double kappa, double h_s, double h_t, double gamma) {
    if (!(gamma > 0.0) || !(gamma < 1.0))
        throw ConfigError("gradient_bounds: gamma must lie in (0,1), got " + format_double(gamma));
    if (!(kappa > 0.0)) throw ContractError("gradient_bounds: kappa must be positive");
    return BoundPair{gamma * (kappa + 1.0) * h_s, gamma * (1.0 / kappa + 1.0) * h_t};
}

double normalized_grad_norm(std::span<const double> grads, std::span<const double> params) {
    if (grads.size() != params.size())
        throw ContractError("normalized_grad_norm: size mismatch");
    double gs = 0.0, ps = 0.0;
    for (double g : grads) gs += g * g;
    for (double p : params) ps += p * p;
    if (!(ps > 0.0)) throw ContractError("normalized_grad_norm: zero parameter norm");
    return std::sqrt(gs) / std::sqrt(ps);
}

JointProbe joint_step_probe(Model& model, const Batch& batch, std::span<const double> delta_s,
                            std::span<const double> delta_t, double lr_s, double lr_t,
                            DistanceKind kind) {
    JointProbe probe;
    const GenerationDistribution base = model.forward_distributions(batch);

    const auto snap_t = model.snapshot(Component::adapter);
    const auto snap_s = model.snapshot(Component::encoder);
    const std::uint64_t sum_t = model.component_checksum(Component::adapter);
    const std::uint64_t sum_s = model.component_checksum(Component::encoder);

    model.apply_delta(Component::adapter, delta_t, -lr_t);
    const GenerationDistribution y_t = model.forward_distributions(batch);
    probe.d_t_at_s = sequence_distance(base, y_t, kind);

    model.apply_delta(Component::encoder, delta_s, -lr_s);
    const GenerationDistribution y_ts = model.forward_distributions(batch);
    probe.d_joint = sequence_distance(base, y_ts, kind);
    probe.d_s_at_t_next = sequence_distance(y_t, y_ts, kind);

    model.restore(Component::encoder, snap_s);
    model.restore(Component::adapter, snap_t);

    model.apply_delta(Component::encoder, delta_s, -lr_s);
    const GenerationDistribution y_s = model.forward_distributions(batch);
    probe.d_s_at_t = sequence_distance(base, y_s, kind);
    model.restore(Component::encoder, snap_s);

    if (model.component_checksum(Component::adapter) != sum_t ||
        model.component_checksum(Component::encoder) != sum_s)
        throw ContractError("joint_step_probe: parameter restoration failed");
    return probe;
}

}  // namespace cotune
