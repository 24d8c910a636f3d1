#include "cotune/optimizer.hpp"

#include <cmath>

namespace cotune {

Backend parse_backend(const std::string& s) {
    if (s == "sgd") return Backend::sgd;
    if (s == "adam") return Backend::adam;
    throw ConfigError("unknown backend '" + s + "'");
}

const char* backend_name(Backend b) { return b == Backend::sgd ? "sgd" : "adam"; }

void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
    if (params.size() != grads.size())
        throw ShapeError("sgd_step: params/grads size mismatch, " + std::to_string(params.size()) +
                         " vs " + std::to_string(grads.size()));
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

void sgd_step(Model& model, Component c, std::span<const double> grads, double lr) {
    model.apply_delta(c, grads, -lr);
}

double adam_alpha_k(double alpha, double beta2, long k) {
    if (k < 1) throw ContractError("adam_alpha_k: k must be >= 1");
    if (beta2 == 1.0) return alpha * std::sqrt(static_cast<double>(k));
    return alpha * std::sqrt((1.0 - std::pow(beta2, static_cast<double>(k))) / (1.0 - beta2));
}

AdamState::AdamState(std::size_t dim, double beta2, double eps)
    : v_(dim, 0.0), beta2_(beta2), eps_(eps) {
    if (!(beta2 > 0.0) || beta2 > 1.0)
        throw ConfigError("adam: beta2 must lie in (0,1], got " + format_double(beta2));
    if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
}

std::vector<double> AdamState::update(std::span<const double> grad, double alpha) {
    if (grad.size() != v_.size())
        throw ShapeError("adam: gradient size " + std::to_string(grad.size()) +
                         " vs state size " + std::to_string(v_.size()));
    ++k_;
    const double ak = adam_alpha_k(alpha, beta2_, k_);
    std::vector<double> u(v_.size());
    for (std::size_t i = 0; i < v_.size(); ++i) {
        v_[i] = beta2_ * v_[i] + grad[i] * grad[i];
        u[i] = ak * grad[i] / std::sqrt(v_[i] + eps_);
    }
    return u;
}

LookaheadResult lookahead_regularizer_grad(Model& model, const Batch& batch, Component c,
                                           std::span<const double> base_grad, double lr,
                                           DistanceKind kind, const GenerationDistribution& yhat) {
    LookaheadResult result;
    const auto snap = model.snapshot(c);
    const std::uint64_t before = model.component_checksum(c);

    model.apply_delta(c, base_grad, -lr);
    model.zero_grads();
    Graph g;
    Tensor dbar = model.distance_to_reference(g, batch, yhat, kind, &result.stepped);
    model.backward(g, dbar);
    result.dbar = dbar.item();
    result.reg_grad = model.collect_grads(c);

    model.restore(c, snap);
    if (model.component_checksum(c) != before)
        throw ContractError("lookahead_regularizer_grad: restoration failed for component " +
                            std::string(component_name(c)));
    return result;
}

namespace {

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void check_finite_grad(const std::vector<double>& g, const char* what) {
    for (double x : g)
        if (!std::isfinite(x))
            throw NumericError(std::string("commit_step: non-finite ") + what);
}

}  // namespace

CommitStepResult commit_step(Model& model, const Batch& batch, RatePair rates,
                             const CommitConfig& cfg, AdamState* adam_s, AdamState* adam_t,
                             StepTrace* trace) {
    if (batch.empty()) throw ContractError("commit_step: empty batch");
    if (cfg.backend == Backend::adam && (!adam_s || !adam_t))
        throw ContractError("commit_step: adam backend needs per-component states");

    CommitStepResult out;
    BalanceRecord& rec = out.record;
    rec.lr_s = rates.lr_s;
    rec.lr_t = rates.lr_t;

    model.zero_grads();
    Graph g;
    GenerationDistribution yhat;
    Tensor loss = model.batch_loss(g, batch, true, &yhat);
    model.backward(g, loss);
    rec.loss = loss.item();

    const std::vector<double> grad_s = model.collect_grads(Component::encoder);
    const std::vector<double> grad_t = model.collect_grads(Component::adapter);
    check_finite_grad(grad_s, "loss gradient (encoder)");
    check_finite_grad(grad_t, "loss gradient (adapter)");
    rec.gnorm_s = normalized_grad_norm(grad_s, model.collect_values(Component::encoder));
    rec.gnorm_t = normalized_grad_norm(grad_t, model.collect_values(Component::adapter));

    const double probe_lr_s = cfg.kappa_raw_step ? 1.0 : rates.lr_s;
    const double probe_lr_t = cfg.kappa_raw_step ? 1.0 : rates.lr_t;

    // Look-ahead probes; each restores the component bit-exactly.
    GenerationDistribution y_t, y_s;
    std::vector<double> reg_s, reg_t;
    if (cfg.reg.enabled) {
        auto la_t = lookahead_regularizer_grad(model, batch, Component::adapter, grad_t,
                                               probe_lr_t, cfg.reg.kind, yhat);
        rec.reg_dt = la_t.dbar;
        reg_t = std::move(la_t.reg_grad);
        y_t = std::move(la_t.stepped);
        auto la_s = lookahead_regularizer_grad(model, batch, Component::encoder, grad_s,
                                               probe_lr_s, cfg.reg.kind, yhat);
        rec.reg_ds = la_s.dbar;
        reg_s = std::move(la_s.reg_grad);
        y_s = std::move(la_s.stepped);
    } else {
        y_t = [&] {
            const auto snap = model.snapshot(Component::adapter);
            model.apply_delta(Component::adapter, grad_t, -probe_lr_t);
            GenerationDistribution d = model.forward_distributions(batch);
            model.restore(Component::adapter, snap);
            return d;
        }();
        y_s = [&] {
            const auto snap = model.snapshot(Component::encoder);
            model.apply_delta(Component::encoder, grad_s, -probe_lr_s);
            GenerationDistribution d = model.forward_distributions(batch);
            model.restore(Component::encoder, snap);
            return d;
        }();
    }

    rec.d_t = sequence_distance(yhat, y_t, cfg.metric_kind);
    rec.d_s = sequence_distance(yhat, y_s, cfg.metric_kind);

    if (cfg.measure_joint) {
        const auto snap_t = model.snapshot(Component::adapter);
        const auto snap_s = model.snapshot(Component::encoder);
        model.apply_delta(Component::adapter, grad_t, -probe_lr_t);
        model.apply_delta(Component::encoder, grad_s, -probe_lr_s);
        const GenerationDistribution y_ts = model.forward_distributions(batch);
        model.restore(Component::encoder, snap_s);
        model.restore(Component::adapter, snap_t);
        rec.d_joint = sequence_distance(yhat, y_ts, cfg.metric_kind);
        out.d_s_at_t_next = sequence_distance(y_t, y_ts, cfg.metric_kind);
    }

    rec.kappa = compute_kappa(rec.d_t, rec.d_s, cfg.kappa, &rec.kappa_degenerate);
    const HPair h = compute_h(model.batch_norms(batch), rec.d_s, rec.d_t);
    rec.h_s = h.h_s;
    rec.h_t = h.h_t;
    const BoundPair bounds = gradient_bounds(rec.kappa, rec.h_s, rec.h_t, cfg.gamma);
    rec.bound_t = bounds.bound_t;
    rec.bound_s = bounds.bound_s;

    // Combined gradient: g - lambda * r, so the applied update carries the
    // distribution-change term with positive sign.
    std::vector<double> comb_s = grad_s, comb_t = grad_t;
    if (cfg.reg.enabled && cfg.reg.lambda != 0.0) {
        for (std::size_t i = 0; i < comb_s.size(); ++i) comb_s[i] -= cfg.reg.lambda * reg_s[i];
        for (std::size_t i = 0; i < comb_t.size(); ++i) comb_t[i] -= cfg.reg.lambda * reg_t[i];
        check_finite_grad(comb_s, "combined gradient (encoder)");
        check_finite_grad(comb_t, "combined gradient (adapter)");
    }

    std::vector<double> update_s, update_t;
    if (!cfg.apply_update) {
        if (trace) {
            trace->loss_grad_s = grad_s;
            trace->loss_grad_t = grad_t;
            trace->reg_grad_s = std::move(reg_s);
            trace->reg_grad_t = std::move(reg_t);
        }
        return out;
    }
    if (cfg.backend == Backend::sgd) {
        model.apply_delta(Component::encoder, comb_s, -rates.lr_s);
        model.apply_delta(Component::adapter, comb_t, -rates.lr_t);
        out.update_norm_s = rates.lr_s * l2_norm(comb_s);
        out.update_norm_t = rates.lr_t * l2_norm(comb_t);
        if (trace) {
            update_s.resize(comb_s.size());
            update_t.resize(comb_t.size());
            for (std::size_t i = 0; i < comb_s.size(); ++i) update_s[i] = rates.lr_s * comb_s[i];
            for (std::size_t i = 0; i < comb_t.size(); ++i) update_t[i] = rates.lr_t * comb_t[i];
        }
    } else {
        update_s = adam_s->update(comb_s, rates.lr_s);
        update_t = adam_t->update(comb_t, rates.lr_t);
        model.apply_delta(Component::encoder, update_s, -1.0);
        model.apply_delta(Component::adapter, update_t, -1.0);
        out.update_norm_s = l2_norm(update_s);
        out.update_norm_t = l2_norm(update_t);
    }

    if (trace) {
        trace->loss_grad_s = grad_s;
        trace->loss_grad_t = grad_t;
        trace->reg_grad_s = std::move(reg_s);
        trace->reg_grad_t = std::move(reg_t);
        trace->update_s = std::move(update_s);
        trace->update_t = std::move(update_t);
    }
    return out;
}

}  // namespace cotune
