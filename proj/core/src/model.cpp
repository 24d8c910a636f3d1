#include "cotune/model.hpp"

#include <algorithm>
#include <cmath>

namespace cotune {

bool is_encoder_param(const std::string& name) { return name.rfind("s.", 0) == 0; }
bool is_adapter_param(const std::string& name) { return name.rfind("t.", 0) == 0; }
bool is_backbone_param(const std::string& name) { return name.rfind("x.", 0) == 0; }

bool GenerationDistribution::same_layout(const GenerationDistribution& other) const {
    if (vocab != other.vocab || examples.size() != other.examples.size()) return false;
    for (std::size_t i = 0; i < examples.size(); ++i)
        if (examples[i].positions != other.examples[i].positions) return false;
    return true;
}

namespace {

Tensor init_param(const std::string& name, Shape shape, double stddev, std::uint64_t seed) {
    Prng rng(seed, fnv1a64(name));
    Tensor t = stddev == 0.0 ? Tensor::zeros(std::move(shape))
                             : Tensor::randn(std::move(shape), rng, stddev);
    return t;
}

double frobenius(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

Model::Model(ModelShape shape, std::uint64_t seed) : shape_(shape) {
    const auto V = shape.vocab, D = shape.dim, H = shape.mlp_hidden, F = shape.feat_dim,
               He = shape.enc_hidden, m = shape.soft_tokens, r = shape.adapter_rank;
    const double wscale = 1.0 / std::sqrt(static_cast<double>(D));

    auto add = [&](const std::string& name, Shape s, double stddev) {
        params_.emplace(name, init_param(name, std::move(s), stddev, seed));
    };

    add("x.tok_emb", {V, D}, 0.1);
    add("x.pos_emb", {shape.max_seq, D}, 0.05);
    for (std::size_t b = 0; b < shape.blocks; ++b) {
        const std::string p = "x.blk" + std::to_string(b) + ".";
        add(p + "wq", {D, D}, wscale);
        add(p + "wk", {D, D}, wscale);
        add(p + "wv", {D, D}, wscale);
        add(p + "wo", {D, D}, wscale);
        add(p + "w1", {D, H}, wscale);
        add(p + "b1", {H}, 0.0);
        add(p + "w2", {H, D}, 1.0 / std::sqrt(static_cast<double>(H)));
        add(p + "b2", {D}, 0.0);
    }
    add("x.out_w", {D, V}, wscale);
    add("x.out_b", {V}, 0.0);

    add("s.w1", {F, He}, 1.0 / std::sqrt(static_cast<double>(F)));
    add("s.b1", {He}, 0.0);
    // Final encoder layer deliberately small so initial soft tokens sit at
    // the scale of the token embeddings.
    add("s.w2", {He, m * D}, 0.1 / std::sqrt(static_cast<double>(He)));
    add("s.b2", {m * D}, 0.0);

    for (std::size_t b = 0; b < shape.blocks; ++b) {
        const std::string p = "t.blk" + std::to_string(b) + ".";
        add(p + "q.a", {D, r}, 0.02);
        add(p + "q.b", {r, D}, 0.0);  // zero start: adapted model == frozen backbone
        add(p + "v.a", {D, r}, 0.02);
        add(p + "v.b", {r, D}, 0.0);
        add(p + "m1.a", {D, r}, 0.02);
        add(p + "m1.b", {r, H}, 0.0);
    }

    for (auto& [name, t] : params_)
        t.set_requires_grad(!is_backbone_param(name));
}

Model Model::with_backbone(const ModelShape& shape,
                           const std::map<std::string, Tensor>& backbone_ckpt,
                           std::uint64_t seed) {
    Model m(shape, seed);
    for (auto& [name, t] : m.params_) {
        if (!is_backbone_param(name)) continue;
        auto it = backbone_ckpt.find(name);
        if (it == backbone_ckpt.end())
            throw ContractError("with_backbone: checkpoint missing '" + name + "'");
        if (it->second.shape() != t.shape())
            throw ShapeError("with_backbone: '" + name + "' has shape " +
                             shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
        t.values() = it->second.values();
    }
    return m;
}

Tensor Model::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
}

std::map<std::string, Tensor> Model::component_params(Component c) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : params_)
        if ((c == Component::encoder && is_encoder_param(name)) ||
            (c == Component::adapter && is_adapter_param(name)))
            out.emplace(name, t);
    return out;
}

std::map<std::string, Tensor> Model::backbone_params() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : params_)
        if (is_backbone_param(name)) out.emplace(name, t);
    return out;
}

std::size_t Model::component_size(Component c) const {
    std::size_t n = 0;
    for (const auto& [name, t] : component_params(c)) n += t.size();
    return n;
}

namespace {
std::uint64_t named_checksum(const std::map<std::string, Tensor>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : params) {
        h = fnv1a64(name, h);
        h = fnv1a64(t.values(), h);
    }
    return h;
}
}  // namespace

std::uint64_t Model::component_checksum(Component c) const {
    return named_checksum(component_params(c));
}

std::uint64_t Model::backbone_checksum() const { return named_checksum(backbone_params()); }

void Model::zero_grads() {
    for (auto& [name, t] : params_)
        if (t.requires_grad()) t.clear_grad();
}

Tensor Model::adapted_linear(Graph& g, const Tensor& x, const std::string& weight,
                             const std::string& lora, bool use_adapter) {
    Tensor base = g.matmul(x, param(weight));
    if (!use_adapter) return base;
    Tensor low = g.matmul(g.matmul(x, param(lora + ".a")), param(lora + ".b"));
    return g.add(base, low);
}

Tensor Model::encode_features(Graph& g, const std::vector<double>& feature) {
    if (feature.size() != shape_.feat_dim)
        throw ShapeError("encode_features: feature dim " + std::to_string(feature.size()) +
                         ", expected " + std::to_string(shape_.feat_dim));
    Tensor f = Tensor::from({1, shape_.feat_dim}, feature);
    Tensor h = g.gelu(g.add_row_bias(g.matmul(f, param("s.w1")), param("s.b1")));
    Tensor out = g.add_row_bias(g.matmul(h, param("s.w2")), param("s.b2"));
    return g.reshape(out, {shape_.soft_tokens, shape_.dim});
}

Tensor Model::logits_for_tokens(Graph& g, const Tensor& soft, std::span<const int> tokens,
                                bool use_adapter) {
    const std::size_t m = soft.defined() ? soft.rows() : 0;
    const std::size_t n = m + tokens.size();
    if (n > shape_.max_seq)
        throw ShapeError("sequence length " + std::to_string(n) + " exceeds max " +
                         std::to_string(shape_.max_seq));

    Tensor x;
    if (tokens.empty()) {
        x = soft;
    } else {
        Tensor emb = g.embedding_rows(param("x.tok_emb"), tokens);
        x = soft.defined() ? g.concat_rows(soft, emb) : emb;
    }
    x = g.add(x, g.slice_rows(param("x.pos_emb"), 0, n));

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(shape_.dim));
    for (std::size_t b = 0; b < shape_.blocks; ++b) {
        const std::string xb = "x.blk" + std::to_string(b) + ".";
        const std::string tb = "t.blk" + std::to_string(b) + ".";
        Tensor q = adapted_linear(g, x, xb + "wq", tb + "q", use_adapter);
        Tensor k = g.matmul(x, param(xb + "wk"));
        Tensor v = adapted_linear(g, x, xb + "wv", tb + "v", use_adapter);
        Tensor attn = g.causal_softmax(g.scale(g.matmul(q, g.transpose(k)), att_scale));
        x = g.add(x, g.matmul(g.matmul(attn, v), param(xb + "wo")));
        Tensor h1 = adapted_linear(g, x, xb + "w1", tb + "m1", use_adapter);
        Tensor h = g.gelu(g.add_row_bias(h1, param(xb + "b1")));
        x = g.add(x, g.add_row_bias(g.matmul(h, param(xb + "w2")), param(xb + "b2")));
    }
    return g.add_row_bias(g.matmul(x, param("x.out_w")), param("x.out_b"));
}

Tensor Model::forward_logits(Graph& g, const Example& ex, bool use_adapter) {
    if (ex.answer.empty()) throw ContractError("example has empty answer");
    Tensor soft = encode_features(g, ex.feature);
    std::vector<int> toks(ex.instruction);
    toks.insert(toks.end(), ex.answer.begin(), ex.answer.end());
    return logits_for_tokens(g, soft, toks, use_adapter);
}

namespace {

// Positions whose next-token target is an answer token: contiguous range
// [m+p-1, m+p+q-1) of the teacher-forced sequence.
struct AnswerSpan {
    std::size_t first;
    std::size_t count;
};

AnswerSpan answer_span(const ModelShape& shape, const Example& ex) {
    const std::size_t m = shape.soft_tokens, p = ex.instruction.size(), q = ex.answer.size();
    return {m + p - 1, q};
}

}  // namespace

namespace {

void softmax_rows_into(const Tensor& logits, std::size_t first, std::size_t count,
                       std::size_t vocab, std::vector<double>& out) {
    out.resize(count * vocab);
    for (std::size_t i = 0; i < count; ++i) {
        const double* x = logits.values().data() + (first + i) * vocab;
        double* p = out.data() + i * vocab;
        const double mx = *std::max_element(x, x + vocab);
        double z = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            p[j] = std::exp(x[j] - mx);
            z += p[j];
        }
        for (std::size_t j = 0; j < vocab; ++j) p[j] /= z;
    }
}

}  // namespace

Tensor Model::batch_loss(Graph& g, const Batch& batch, bool use_adapter,
                         GenerationDistribution* dists) {
    if (batch.empty()) throw ContractError("batch_loss: empty batch");
    ++counters_.forwards;
    if (dists) {
        dists->examples.clear();
        dists->vocab = shape_.vocab;
        dists->examples.reserve(batch.size());
    }
    Tensor total;
    for (const Example* ex : batch) {
        Tensor logits = forward_logits(g, *ex, use_adapter);
        const auto span = answer_span(shape_, *ex);
        const std::size_t n = logits.rows();
        std::vector<int> targets(n, 0);
        std::vector<std::uint8_t> mask(n, 0);
        for (std::size_t i = 0; i < span.count; ++i) {
            targets[span.first + i] = ex->answer[i];
            mask[span.first + i] = 1;
        }
        Tensor l = g.cross_entropy(logits, targets, mask);
        total = total.defined() ? g.add(total, l) : l;
        if (dists) {
            GenerationDistribution::PerExample pe;
            pe.positions = span.count;
            softmax_rows_into(logits, span.first, span.count, shape_.vocab, pe.probs);
            dists->examples.push_back(std::move(pe));
        }
    }
    return g.scale(total, 1.0 / static_cast<double>(batch.size()));
}

Tensor Model::text_loss(Graph& g, std::span<const int> tokens) {
    if (tokens.size() < 2) throw ContractError("text_loss: need at least 2 tokens");
    ++counters_.forwards;
    Tensor logits = logits_for_tokens(g, Tensor{}, tokens, false);
    const std::size_t n = tokens.size();
    std::vector<int> targets(n, 0);
    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        targets[i] = tokens[i + 1];
        mask[i] = 1;
    }
    return g.cross_entropy(logits, targets, mask);
}

GenerationDistribution Model::forward_distributions(const Batch& batch, bool use_adapter) {
    if (batch.empty()) throw ContractError("forward_distributions: empty batch");
    ++counters_.forwards;
    Graph g(false);
    GenerationDistribution out;
    out.vocab = shape_.vocab;
    out.examples.reserve(batch.size());
    for (const Example* ex : batch) {
        Tensor logits = forward_logits(g, *ex, use_adapter);
        const auto span = answer_span(shape_, *ex);
        GenerationDistribution::PerExample pe;
        pe.positions = span.count;
        softmax_rows_into(logits, span.first, span.count, shape_.vocab, pe.probs);
        out.examples.push_back(std::move(pe));
    }
    return out;
}

Tensor Model::distance_to_reference(Graph& g, const Batch& batch,
                                    const GenerationDistribution& ref, ReduceDistance kind,
                                    GenerationDistribution* current) {
    if (batch.size() != ref.examples.size())
        throw ContractError("distance_to_reference: batch/reference size mismatch");
    ++counters_.forwards;
    if (current) {
        current->examples.clear();
        current->vocab = shape_.vocab;
        current->examples.reserve(batch.size());
    }
    Tensor total;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const Example& ex = *batch[e];
        Tensor logits = forward_logits(g, ex, true);
        const auto span = answer_span(shape_, ex);
        if (span.count != ref.examples[e].positions)
            throw ContractError("distance_to_reference: answer-position mismatch at example " +
                                std::to_string(e));
        Tensor rows = g.softmax_rows(g.slice_rows(logits, span.first, span.count));
        Tensor d = g.distance_to_const_rows(rows, ref.examples[e].probs, kind);
        total = total.defined() ? g.add(total, d) : d;
        if (current) {
            GenerationDistribution::PerExample pe;
            pe.positions = span.count;
            pe.probs = rows.values();
            current->examples.push_back(std::move(pe));
        }
    }
    return g.scale(total, 1.0 / static_cast<double>(batch.size()));
}

std::vector<int> Model::greedy_decode(const std::vector<double>& feature,
                                      const std::vector<int>& instruction, std::size_t max_len,
                                      int end_token) {
    if (max_len < 1) throw ContractError("greedy_decode: max_len must be >= 1");
    std::vector<int> generated;
    std::vector<int> toks = instruction;
    const std::size_t v = shape_.vocab;
    while (generated.size() < max_len) {
        if (shape_.soft_tokens + toks.size() + 1 > shape_.max_seq) break;
        Graph g(false);
        Tensor soft = encode_features(g, feature);
        Tensor logits = logits_for_tokens(g, soft, toks, true);
        const double* row = logits.values().data() + (logits.rows() - 1) * v;
        // Ties break toward the lowest token id.
        int best = 0;
        for (std::size_t j = 1; j < v; ++j)
            if (row[j] > row[best]) best = static_cast<int>(j);
        generated.push_back(best);
        toks.push_back(best);
        if (best == end_token) break;
    }
    return generated;
}

BatchNorms Model::batch_norms(const Batch& batch) {
    if (batch.empty()) throw ContractError("batch_norms: empty batch");
    BatchNorms norms;
    Graph g(false);
    const Tensor emb = param("x.tok_emb");
    const std::size_t d = shape_.dim;
    for (const Example* ex : batch) {
        double fro = 0.0;
        for (int id : ex->instruction) {
            if (id < 0 || static_cast<std::size_t>(id) >= shape_.vocab)
                throw IndexError("batch_norms: instruction id out of vocab");
            const double* row = emb.values().data() + static_cast<std::size_t>(id) * d;
            for (std::size_t j = 0; j < d; ++j) fro += row[j] * row[j];
        }
        norms.instruction_embedding += std::sqrt(fro);
        norms.soft_tokens += frobenius(encode_features(g, ex->feature).values());
        norms.feature += frobenius(ex->feature);
    }
    const double n = static_cast<double>(batch.size());
    norms.instruction_embedding /= n;
    norms.soft_tokens /= n;
    norms.feature /= n;
    return norms;
}

std::vector<double> Model::collect_values(Component c) const {
    std::vector<double> out;
    for (const auto& [name, t] : component_params(c))
        out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
}

std::vector<double> Model::collect_grads(Component c) const {
    std::vector<double> out;
    for (const auto& [name, t] : component_params(c)) {
        if (t.has_grad()) {
            const auto& g = t.grad_or_throw();
            out.insert(out.end(), g.begin(), g.end());
        } else {
            out.insert(out.end(), t.size(), 0.0);
        }
    }
    return out;
}

void Model::apply_delta(Component c, std::span<const double> delta, double scale) {
    if (!std::isfinite(scale)) throw NumericError("apply_delta: non-finite scale");
    auto comp = component_params(c);
    std::size_t total = 0;
    for (const auto& [name, t] : comp) total += t.size();
    if (delta.size() != total)
        throw ShapeError("apply_delta: delta length " + std::to_string(delta.size()) +
                         " vs component size " + std::to_string(total));
    std::size_t off = 0;
    for (auto& [name, t] : comp) {
        auto& v = t.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += scale * delta[off + i];
        if (!all_finite(v)) throw NumericError("apply_delta: non-finite parameter in '" + name + "'");
        off += v.size();
    }
}

std::vector<double> Model::snapshot(Component c) const { return collect_values(c); }

void Model::restore(Component c, const std::vector<double>& snap) {
    auto comp = component_params(c);
    std::size_t total = 0;
    for (const auto& [name, t] : comp) total += t.size();
    if (snap.size() != total) throw ShapeError("restore: snapshot size mismatch");
    std::size_t off = 0;
    for (auto& [name, t] : comp) {
        auto& v = t.values();
        std::copy_n(snap.data() + off, v.size(), v.data());
        off += v.size();
    }
}

void Model::set_backbone_trainable(bool trainable) {
    for (auto& [name, t] : params_)
        if (is_backbone_param(name)) t.set_requires_grad(trainable);
}

void Model::backward(Graph& g, const Tensor& loss) {
    ++counters_.backwards;
    g.backward(loss);
}

void Model::load(const std::map<std::string, Tensor>& ckpt) {
    for (auto& [name, t] : params_) {
        auto it = ckpt.find(name);
        if (it == ckpt.end()) throw ContractError("load: checkpoint missing '" + name + "'");
        if (it->second.shape() != t.shape())
            throw ShapeError("load: shape mismatch for '" + name + "'");
        t.values() = it->second.values();
    }
}

}  // namespace cotune
