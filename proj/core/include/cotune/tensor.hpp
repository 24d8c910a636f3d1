#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cotune/common.hpp"

namespace cotune {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense 64-bit float tensor with an optional gradient buffer. Value-semantic
// handle over a shared payload: copies alias the same storage, so a parameter
// registry and the graph see one buffer.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    // Validates finiteness of the payload; leaves enter the graph here.
    static Tensor from(Shape shape, std::vector<double> data);
    static Tensor scalar(double value);
    static Tensor randn(Shape shape, Prng& rng, double stddev);

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return payload().shape; }
    std::size_t size() const { return payload().value.size(); }
    std::size_t rank() const { return payload().shape.size(); }
    // Rank-2 accessors; ShapeError otherwise.
    std::size_t rows() const;
    std::size_t cols() const;
    bool is_scalar() const { return size() == 1; }

    double item() const;
    double at(std::size_t i) const { return payload().value[i]; }
    std::vector<double>& values() { return payload().value; }
    const std::vector<double>& values() const { return payload().value; }

    bool requires_grad() const { return payload().requires_grad; }
    Tensor& set_requires_grad(bool b) {
        payload().requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !payload().grad.empty(); }
    // Lazily allocated, zero-filled, same length as value.
    std::vector<double>& grad();
    const std::vector<double>& grad_or_throw() const;
    void clear_grad() { payload().grad.clear(); }

    // Identity of the underlying payload (aliasing test / map key).
    const void* id() const { return p_.get(); }

    std::uint64_t value_checksum() const { return fnv1a64(payload().value); }

  private:
    struct Payload {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;  // empty until touched
        bool requires_grad = false;
    };

    Payload& payload() {
        if (!p_) throw ContractError("use of undefined Tensor");
        return *p_;
    }
    const Payload& payload() const {
        if (!p_) throw ContractError("use of undefined Tensor");
        return *p_;
    }

    std::shared_ptr<Payload> p_;
};

enum class ReduceDistance { total_variation, sqrt_jensen_shannon };

// Reverse-mode tape over a fixed op set. Nodes are recorded in execution
// order; backward() walks them in reverse insertion order exactly once.
// Every op checks its output for non-finite values and throws NumericError
// naming the op. Gradients accumulate (+=); callers zero grads between steps.
class Graph {
  public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    std::size_t node_count() const { return nodes_.size(); }

    // c = a·b for a:[m,k], b:[k,n].
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& a);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double c);
    // c(i,j) = m(i,j) + bias(j); bias shape [n] or [1,n].
    Tensor add_row_bias(const Tensor& m, const Tensor& bias);
    Tensor gelu(const Tensor& a);
    Tensor reshape(const Tensor& a, Shape shape);
    // Gathers table rows by id; table:[V,D] -> out:[ids.size(),D].
    Tensor embedding_rows(const Tensor& table, std::span<const int> ids);
    Tensor concat_rows(const Tensor& a, const Tensor& b);
    Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t len);
    Tensor softmax_rows(const Tensor& a);
    // Square scores [n,n]; row i is a softmax over columns j <= i, zeros above.
    Tensor causal_softmax(const Tensor& a);
    // Mean over mask-true positions of -log softmax(logits[pos])[target[pos]].
    Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                         std::span<const std::uint8_t> mask);
    Tensor sum(const Tensor& a);
    // Mean over rows of d(p_row, ref_row) against a constant reference;
    // the differentiable half of the look-ahead regularizer.
    Tensor distance_to_const_rows(const Tensor& probs, const std::vector<double>& ref,
                                  ReduceDistance kind);

    // Populates grads of every requires_grad tensor reachable from loss.
    void backward(const Tensor& loss);

  private:
    struct Node {
        const char* op;
        std::function<void()> back;
    };

    Tensor make_output(const char* op, Shape shape, std::vector<double> value,
                       bool requires_grad);
    void record(const char* op, std::function<void()> back);

    std::vector<Node> nodes_;
    bool recording_;
};

// Central finite differences (f(x+εe_i) − f(x−εe_i)) / 2ε per coordinate of
// theta; the independent oracle the gradient-check suites are built on.
// `f` is re-evaluated with theta's storage temporarily perturbed in place.
std::vector<double> finite_diff_grad(const std::function<double()>& f, Tensor& theta,
                                     double eps);

}  // namespace cotune
