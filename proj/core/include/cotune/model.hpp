#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "cotune/tensor.hpp"

namespace cotune {

// The two trainable parameter groups. The frozen backbone is not addressable
// as an update target.
enum class Component { encoder, adapter };

inline const char* component_name(Component c) {
    return c == Component::encoder ? "S" : "T";
}

struct ModelShape {
    std::size_t vocab = 64;
    std::size_t dim = 32;
    std::size_t blocks = 2;
    std::size_t mlp_hidden = 64;
    std::size_t soft_tokens = 4;
    std::size_t feat_dim = 16;
    std::size_t enc_hidden = 32;
    std::size_t adapter_rank = 4;
    std::size_t max_seq = 24;

    bool operator==(const ModelShape&) const = default;
};

// One training instance: raw feature vector, instruction tokens, and the
// answer tokens (content followed by the task's end marker).
struct Example {
    std::vector<double> feature;
    std::vector<int> instruction;
    std::vector<int> answer;
    int content_len = 0;  // answer tokens before the end marker
    // Generating attributes, kept for label-consistency checks.
    int color = 0;
    int shape_attr = 0;
    int count = 0;
    int queried = -1;  // 0 color, 1 shape, 2 count; -1 for captions
};

using Batch = std::vector<const Example*>;

// Teacher-forced next-token distributions at answer positions only.
struct GenerationDistribution {
    struct PerExample {
        std::size_t positions = 0;
        std::vector<double> probs;  // positions x vocab, row-major
    };
    std::vector<PerExample> examples;
    std::size_t vocab = 0;

    bool same_layout(const GenerationDistribution& other) const;
};

// Per-batch norms entering the per-component step normalizations: batch-mean
// Frobenius norm of instruction-token embedding matrices, batch-mean
// Frobenius norm of the encoder's soft-token outputs, batch-mean l2 norm of
// raw feature vectors.
struct BatchNorms {
    double instruction_embedding = 0.0;
    double soft_tokens = 0.0;
    double feature = 0.0;
};

struct OpCounters {
    long forwards = 0;
    long backwards = 0;
};

// Two-component generative model: trainable feature encoder producing soft
// tokens, frozen causal transformer backbone, trainable low-rank adapters on
// the attention query/value projections and the first MLP layer.
class Model {
  public:
    Model(ModelShape shape, std::uint64_t seed);

    // Fresh encoder/adapters (seeded) over a previously trained backbone.
    static Model with_backbone(const ModelShape& shape,
                               const std::map<std::string, Tensor>& backbone_ckpt,
                               std::uint64_t seed);

    const ModelShape& shape() const { return shape_; }

    const std::map<std::string, Tensor>& params() const { return params_; }
    std::map<std::string, Tensor> component_params(Component c) const;
    std::map<std::string, Tensor> backbone_params() const;
    std::size_t component_size(Component c) const;

    std::uint64_t component_checksum(Component c) const;
    std::uint64_t backbone_checksum() const;

    void zero_grads();

    // Mean over examples of mean over answer tokens of cross-entropy.
    // Differentiable w.r.t. encoder and adapter parameters only. When `dists`
    // is given it receives the answer-position distributions of the same
    // forward pass (detached).
    Tensor batch_loss(Graph& g, const Batch& batch, bool use_adapter = true,
                      GenerationDistribution* dists = nullptr);

    // Loss over a bare token stream with every backbone parameter trainable;
    // the pretraining objective. Soft tokens and adapters do not participate.
    Tensor text_loss(Graph& g, std::span<const int> tokens);

    GenerationDistribution forward_distributions(const Batch& batch, bool use_adapter = true);

    // Differentiable mean distance between the current distributions and a
    // detached reference; the look-ahead regularizer's objective. `current`
    // receives the (detached) distributions of this forward when given.
    Tensor distance_to_reference(Graph& g, const Batch& batch, const GenerationDistribution& ref,
                                 ReduceDistance kind, GenerationDistribution* current = nullptr);

    // Soft tokens for one feature vector, shape [soft_tokens, dim].
    Tensor encode_features(Graph& g, const std::vector<double>& feature);

    std::vector<int> greedy_decode(const std::vector<double>& feature,
                                   const std::vector<int>& instruction, std::size_t max_len,
                                   int end_token);

    BatchNorms batch_norms(const Batch& batch);

    // Flat views in lexicographic parameter-name order.
    std::vector<double> collect_values(Component c) const;
    std::vector<double> collect_grads(Component c) const;

    // theta += scale * delta over the component's flat view. Restoration of
    // probed steps goes through snapshot/restore, which is bit-exact.
    void apply_delta(Component c, std::span<const double> delta, double scale);

    std::vector<double> snapshot(Component c) const;
    void restore(Component c, const std::vector<double>& snap);

    void set_backbone_trainable(bool trainable);

    void backward(Graph& g, const Tensor& loss);

    const OpCounters& counters() const { return counters_; }
    void reset_counters() { counters_ = OpCounters{}; }

    // Checkpoint views: full parameter set, or backbone only.
    std::map<std::string, Tensor> checkpoint() const { return params_; }
    void load(const std::map<std::string, Tensor>& ckpt);

  private:
    Tensor param(const std::string& name) const;
    Tensor adapted_linear(Graph& g, const Tensor& x, const std::string& weight,
                          const std::string& lora, bool use_adapter);
    // Full teacher-forced logits [m+p+q, vocab] for one example.
    Tensor forward_logits(Graph& g, const Example& ex, bool use_adapter);
    Tensor logits_for_tokens(Graph& g, const Tensor& soft, std::span<const int> tokens,
                             bool use_adapter);

    ModelShape shape_;
    std::map<std::string, Tensor> params_;
    OpCounters counters_;
};

bool is_encoder_param(const std::string& name);
bool is_adapter_param(const std::string& name);
bool is_backbone_param(const std::string& name);

}  // namespace cotune
