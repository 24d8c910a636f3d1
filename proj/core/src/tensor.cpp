#include "cotune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace cotune {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor Tensor::zeros(Shape shape) {
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->value.assign(shape_numel(shape), 0.0);
    t.p_->shape = std::move(shape);
    return t;
}

Tensor Tensor::full(Shape shape, double value) {
    if (!std::isfinite(value)) throw NumericError("Tensor::full: non-finite fill value");
    Tensor t = zeros(std::move(shape));
    std::fill(t.p_->value.begin(), t.p_->value.end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    if (!all_finite(data)) throw NumericError("Tensor::from: non-finite input value");
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = std::move(shape);
    t.p_->value = std::move(data);
    return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, Prng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.p_->value) x = rng.normal() * stddev;
    return t;
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor is not rank-2, shape " + shape_str(shape()));
    return shape()[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor is not rank-2, shape " + shape_str(shape()));
    return shape()[1];
}

double Tensor::item() const {
    if (!is_scalar()) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
    return payload().value[0];
}

std::vector<double>& Tensor::grad() {
    auto& p = payload();
    if (p.grad.empty()) p.grad.assign(p.value.size(), 0.0);
    return p.grad;
}

const std::vector<double>& Tensor::grad_or_throw() const {
    const auto& p = payload();
    if (p.grad.empty()) throw ContractError("gradient not populated; call backward first");
    return p.grad;
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

namespace {

void check_finite(const char* op, const std::vector<double>& v) {
    if (!all_finite(v)) throw NumericError(std::string("op '") + op + "' produced a non-finite value");
}

// Plain i-k-j product into pre-zeroed c.
void matmul_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c += a·bᵀ for a:[m,k], b:[n,k].
void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

// c += aᵀ·b for a:[m,k], b:[m,n] -> c:[k,n].
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            double* crow = c + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_bwd(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

}  // namespace

Tensor Graph::make_output(const char* op, Shape shape, std::vector<double> value,
                          bool requires_grad) {
    check_finite(op, value);
    Tensor t = Tensor::from(std::move(shape), std::move(value));
    t.set_requires_grad(requires_grad && recording_);
    return t;
}

void Graph::record(const char* op, std::function<void()> back) {
    nodes_.push_back(Node{op, std::move(back)});
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> c(m * n, 0.0);
    matmul_acc(a.values().data(), b.values().data(), c.data(), m, k, n);
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output("matmul", {m, n}, std::move(c), rg);
    if (recording_ && rg) {
        Tensor ac = a, bc = b, oc = out;
        record("matmul", [ac, bc, oc, m, k, n]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad())
                matmul_nt_acc(g.data(), bc.values().data(), ac.grad().data(), m, n, k);
            if (bc.requires_grad())
                matmul_tn_acc(ac.values().data(), g.data(), bc.grad().data(), m, k, n);
        });
    }
    return out;
}

Tensor Graph::transpose(const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> c(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[j * m + i] = a.values()[i * n + j];
    Tensor out = make_output("transpose", {n, m}, std::move(c), a.requires_grad());
    if (recording_ && a.requires_grad()) {
        Tensor ac = a, oc = out;
        record("transpose", [ac, oc, m, n]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
    }
    return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> c(a.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.values()[i] + b.values()[i];
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output("add", a.shape(), std::move(c), rg);
    if (recording_ && rg) {
        Tensor ac = a, bc = b, oc = out;
        record("add", [ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> c(a.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.values()[i] * b.values()[i];
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output("mul", a.shape(), std::move(c), rg);
    if (recording_ && rg) {
        Tensor ac = a, bc = b, oc = out;
        record("mul", [ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bc.values()[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ac.values()[i];
            }
        });
    }
    return out;
}

Tensor Graph::scale(const Tensor& a, double c) {
    if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * c;
    Tensor out = make_output("scale", a.shape(), std::move(v), a.requires_grad());
    if (recording_ && a.requires_grad()) {
        Tensor ac = a, oc = out;
        record("scale", [ac, oc, c]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

Tensor Graph::add_row_bias(const Tensor& m, const Tensor& bias) {
    const std::size_t r = m.rows(), n = m.cols();
    if (bias.size() != n)
        throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " vs cols " +
                         std::to_string(n));
    std::vector<double> c(m.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = m.values()[i * n + j] + bias.values()[j];
    const bool rg = m.requires_grad() || bias.requires_grad();
    Tensor out = make_output("add_row_bias", m.shape(), std::move(c), rg);
    if (recording_ && rg) {
        Tensor mc = m, bc = bias, oc = out;
        record("add_row_bias", [mc, bc, oc, r, n]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (mc.requires_grad()) {
                auto& gm = mc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    }
    return out;
}

Tensor Graph::gelu(const Tensor& a) {
    std::vector<double> c(a.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = gelu_fwd(a.values()[i]);
    Tensor out = make_output("gelu", a.shape(), std::move(c), a.requires_grad());
    if (recording_ && a.requires_grad()) {
        Tensor ac = a, oc = out;
        record("gelu", [ac, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_bwd(ac.values()[i]);
        });
    }
    return out;
}

Tensor Graph::reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    Tensor out = make_output("reshape", std::move(shape), a.values(), a.requires_grad());
    if (recording_ && a.requires_grad()) {
        Tensor ac = a, oc = out;
        record("reshape", [ac, oc]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

Tensor Graph::embedding_rows(const Tensor& table, std::span<const int> ids) {
    const std::size_t v = table.rows(), d = table.cols();
    std::vector<double> c(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
            throw IndexError("embedding_rows: id " + std::to_string(ids[i]) + " out of vocab " +
                             std::to_string(v));
        std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * d, d,
                    c.data() + i * d);
    }
    Tensor out = make_output("embedding_rows", {ids.size(), d}, std::move(c),
                             table.requires_grad());
    if (recording_ && table.requires_grad()) {
        Tensor tc = table, oc = out;
        std::vector<int> idv(ids.begin(), ids.end());
        record("embedding_rows", [tc, oc, idv, d]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& gt = tc.grad();
            for (std::size_t i = 0; i < idv.size(); ++i) {
                double* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
                const double* src = g.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor Graph::concat_rows(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.cols();
    if (b.cols() != n)
        throw ShapeError("concat_rows: column mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t ra = a.rows(), rb = b.rows();
    std::vector<double> c;
    c.reserve((ra + rb) * n);
    c.insert(c.end(), a.values().begin(), a.values().end());
    c.insert(c.end(), b.values().begin(), b.values().end());
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output("concat_rows", {ra + rb, n}, std::move(c), rg);
    if (recording_ && rg) {
        Tensor ac = a, bc = b, oc = out;
        record("concat_rows", [ac, bc, oc, ra, n]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            if (ac.requires_grad()) {
                auto& ga = ac.grad();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto& gb = bc.grad();
                const std::size_t off = ra * n;
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[off + i];
            }
        });
    }
    return out;
}

Tensor Graph::slice_rows(const Tensor& a, std::size_t start, std::size_t len) {
    const std::size_t r = a.rows(), n = a.cols();
    if (start + len > r)
        throw ShapeError("slice_rows: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + std::to_string(r) + " rows");
    std::vector<double> c(a.values().begin() + static_cast<std::ptrdiff_t>(start * n),
                          a.values().begin() + static_cast<std::ptrdiff_t>((start + len) * n));
    Tensor out = make_output("slice_rows", {len, n}, std::move(c), a.requires_grad());
    if (recording_ && a.requires_grad()) {
        Tensor ac = a, oc = out;
        record("slice_rows", [ac, oc, start, n]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            auto& ga = ac.grad();
            const std::size_t off = start * n;
            for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
        });
    }
    return out;
}

Tensor Graph::softmax_rows(const Tensor& a) {
    const std::size_t r = a.rows(), n = a.cols();
    if (n < 1) throw ShapeError("softmax_rows: empty rows");
    std::vector<double> c(a.size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = a.values().data() + i * n;
        double* y = c.data() + i * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    Tensor out = make_output("softmax_rows", a.shape(), std::move(c), a.requires_grad());
    if (recording_ && a.requires_grad()) {
        Tensor ac = a, oc = out;
        record("softmax_rows", [ac, oc, r, n]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            const auto& y = oc.values();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double* yr = y.data() + i * n;
                const double* gr = g.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                double* gar = ga.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) gar[j] += yr[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

Tensor Graph::causal_softmax(const Tensor& a) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw ShapeError("causal_softmax: scores not square, " + shape_str(a.shape()));
    std::vector<double> c(a.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = a.values().data() + i * n;
        double* y = c.data() + i * n;
        const double mx = *std::max_element(x, x + i + 1);
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j <= i; ++j) y[j] /= z;
    }
    Tensor out = make_output("causal_softmax", a.shape(), std::move(c), a.requires_grad());
    if (recording_ && a.requires_grad()) {
        Tensor ac = a, oc = out;
        record("causal_softmax", [ac, oc, n]() mutable {
            if (!oc.has_grad()) return;
            const auto& g = oc.grad();
            const auto& y = oc.values();
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double* yr = y.data() + i * n;
                const double* gr = g.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) dot += gr[j] * yr[j];
                double* gar = ga.data() + i * n;
                for (std::size_t j = 0; j <= i; ++j) gar[j] += yr[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

Tensor Graph::cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const std::uint8_t> mask) {
    const std::size_t r = logits.rows(), v = logits.cols();
    if (targets.size() != r || mask.size() != r)
        throw ShapeError("cross_entropy: targets/mask length " + std::to_string(targets.size()) +
                         "/" + std::to_string(mask.size()) + " vs " + std::to_string(r) + " rows");
    std::size_t active = 0;
    for (std::size_t i = 0; i < r; ++i)
        if (mask[i]) ++active;
    if (active == 0) throw ContractError("cross_entropy: mask selects no positions");

    // Softmax rows are saved for backward.
    std::vector<double> probs(logits.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = logits.values().data() + i * v;
        double* p = probs.data() + i * v;
        const double mx = *std::max_element(x, x + v);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            p[j] = std::exp(x[j] - mx);
            z += p[j];
        }
        for (std::size_t j = 0; j < v; ++j) p[j] /= z;
        if (mask[i]) {
            if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
                throw IndexError("cross_entropy: target id " + std::to_string(targets[i]) +
                                 " out of vocab " + std::to_string(v));
            loss += (std::log(z) + mx) - x[targets[i]];
        }
    }
    loss /= static_cast<double>(active);
    Tensor out = make_output("cross_entropy", {1}, {loss}, logits.requires_grad());
    if (recording_ && logits.requires_grad()) {
        Tensor lc = logits, oc = out;
        std::vector<int> tv(targets.begin(), targets.end());
        std::vector<std::uint8_t> mv(mask.begin(), mask.end());
        record("cross_entropy", [lc, oc, probs = std::move(probs), tv, mv, r, v,
                                 active]() mutable {
            if (!oc.has_grad()) return;
            const double g = oc.grad()[0] / static_cast<double>(active);
            auto& gl = lc.grad();
            for (std::size_t i = 0; i < r; ++i) {
                if (!mv[i]) continue;
                const double* p = probs.data() + i * v;
                double* gr = gl.data() + i * v;
                for (std::size_t j = 0; j < v; ++j) gr[j] += g * p[j];
                gr[tv[i]] -= g;
            }
        });
    }
    return out;
}

Tensor Graph::sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    Tensor out = make_output("sum", {1}, {s}, a.requires_grad());
    if (recording_ && a.requires_grad()) {
        Tensor ac = a, oc = out;
        record("sum", [ac, oc]() mutable {
            if (!oc.has_grad()) return;
            const double g = oc.grad()[0];
            auto& ga = ac.grad();
            for (double& x : ga) x += g;
        });
    }
    return out;
}

namespace {

constexpr double kLog2 = 0.6931471805599453094;

// jsd(p, q) with base-2 logs, in [0, 1]; both rows strictly positive.
double jsd_base2(const double* p, const double* q, std::size_t n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double m = 0.5 * (p[j] + q[j]);
        if (p[j] > 0.0) acc += 0.5 * p[j] * std::log(p[j] / m);
        if (q[j] > 0.0) acc += 0.5 * q[j] * std::log(q[j] / m);
    }
    return std::max(acc / kLog2, 0.0);
}

}  // namespace

Tensor Graph::distance_to_const_rows(const Tensor& probs, const std::vector<double>& ref,
                                     ReduceDistance kind) {
    const std::size_t r = probs.rows(), n = probs.cols();
    if (ref.size() != r * n)
        throw ShapeError("distance_to_const_rows: reference size " + std::to_string(ref.size()) +
                         " vs " + shape_str(probs.shape()));
    std::vector<double> row_d(r, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        const double* p = probs.values().data() + i * n;
        const double* q = ref.data() + i * n;
        double d = 0.0;
        if (kind == ReduceDistance::total_variation) {
            for (std::size_t j = 0; j < n; ++j) d += std::abs(p[j] - q[j]);
            d *= 0.5;
        } else {
            d = std::sqrt(jsd_base2(p, q, n));
        }
        row_d[i] = d;
        total += d;
    }
    total /= static_cast<double>(r);
    Tensor out = make_output("distance_to_const_rows", {1}, {total}, probs.requires_grad());
    if (recording_ && probs.requires_grad()) {
        Tensor pc = probs, oc = out;
        std::vector<double> refc = ref;
        record("distance_to_const_rows",
               [pc, oc, refc = std::move(refc), row_d = std::move(row_d), r, n, kind]() mutable {
                   if (!oc.has_grad()) return;
                   const double g = oc.grad()[0] / static_cast<double>(r);
                   auto& gp = pc.grad();
                   for (std::size_t i = 0; i < r; ++i) {
                       const double* p = pc.values().data() + i * n;
                       const double* q = refc.data() + i * n;
                       double* gr = gp.data() + i * n;
                       if (kind == ReduceDistance::total_variation) {
                           // Subgradient 0 at coincidence.
                           for (std::size_t j = 0; j < n; ++j) {
                               const double diff = p[j] - q[j];
                               if (diff > 0.0)
                                   gr[j] += 0.5 * g;
                               else if (diff < 0.0)
                                   gr[j] -= 0.5 * g;
                           }
                       } else {
                           // d/dp_j sqrt(jsd) = log2(p_j/m_j) / (4 sqrt(jsd));
                           // defined as 0 at coincident rows.
                           const double d = row_d[i];
                           if (d < 1e-15) continue;
                           const double inv = g / (4.0 * d * kLog2);
                           for (std::size_t j = 0; j < n; ++j) {
                               const double m = 0.5 * (p[j] + q[j]);
                               gr[j] += inv * std::log(p[j] / m);
                           }
                       }
                   }
               });
    }
    return out;
}

void Graph::backward(const Tensor& loss) {
    if (!loss.is_scalar())
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!recording_) throw ContractError("backward: graph was created non-recording");
    Tensor seed = loss;
    seed.grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
}

std::vector<double> finite_diff_grad(const std::function<double()>& f, Tensor& theta,
                                     double eps) {
    if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
    std::vector<double> g(theta.size());
    auto& v = theta.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double orig = v[i];
        v[i] = orig + eps;
        const double fp = f();
        v[i] = orig - eps;
        const double fm = f();
        v[i] = orig;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

}  // namespace cotune
