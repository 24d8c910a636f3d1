#include "cotune/tasks.hpp"

#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

namespace cotune {

TaskSpec qa_task_spec() { return TaskSpec{}; }

TaskSpec caption_task_spec() {
    TaskSpec s;
    s.kind = TaskSpec::Kind::caption;
    s.answer_min = 4;
    s.answer_max = 10;
    return s;
}

VocabLayout::VocabLayout(std::size_t values) : attr_values(values) {
    item = value_base + static_cast<int>(3 * attr_values);
    dot = item + 1;
    required = static_cast<std::size_t>(dot) + 1;
}

int VocabLayout::value_token(int attribute, int value) const {
    return value_base + attribute * static_cast<int>(attr_values) + value;
}

namespace {

const char* kind_name(TaskSpec::Kind k) { return k == TaskSpec::Kind::qa ? "qa" : "caption"; }

TaskSpec::Kind parse_kind(const std::string& s) {
    if (s == "qa") return TaskSpec::Kind::qa;
    if (s == "caption") return TaskSpec::Kind::caption;
    throw ConfigError("task spec: unknown kind '" + s + "'");
}

}  // namespace

std::string serialize_task_spec(const TaskSpec& spec) {
    std::ostringstream out;
    out << "kind = " << kind_name(spec.kind) << "\n"
        << "attr_values = " << spec.attr_values << "\n"
        << "noise = " << format_double(spec.noise) << "\n"
        << "answer_min = " << spec.answer_min << "\n"
        << "answer_max = " << spec.answer_max << "\n"
        << "vocab = " << spec.vocab << "\n"
        << "feat_dim = " << spec.feat_dim << "\n"
        << "train_size = " << spec.train_size << "\n"
        << "eval_size = " << spec.eval_size << "\n"
        << "seed = " << spec.seed << "\n";
    return out.str();
}

TaskSpec parse_task_spec(const std::string& text) {
    TaskSpec spec;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("task spec: bad line '" + line + "'");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "kind")
            spec.kind = parse_kind(value);
        else if (key == "attr_values")
            spec.attr_values = std::stoull(value);
        else if (key == "noise")
            spec.noise = std::stod(value);
        else if (key == "answer_min")
            spec.answer_min = std::stoull(value);
        else if (key == "answer_max")
            spec.answer_max = std::stoull(value);
        else if (key == "vocab")
            spec.vocab = std::stoull(value);
        else if (key == "feat_dim")
            spec.feat_dim = std::stoull(value);
        else if (key == "train_size")
            spec.train_size = std::stoull(value);
        else if (key == "eval_size")
            spec.eval_size = std::stoull(value);
        else if (key == "seed")
            spec.seed = std::stoull(value);
        else
            throw ConfigError("task spec: unknown key '" + key + "'");
    }
    return spec;
}

std::uint64_t task_spec_hash(const TaskSpec& spec) { return fnv1a64(serialize_task_spec(spec)); }

namespace {

void validate_spec_impl(const TaskSpec& spec) {
    if (spec.train_size < 1 || spec.eval_size < 1)
        throw ConfigError("task spec: train/eval sizes must be >= 1");
    if (spec.attr_values < 2) throw ConfigError("task spec: need at least 2 attribute values");
    const VocabLayout layout(spec.attr_values);
    if (spec.vocab < layout.required)
        throw ConfigError("task spec: vocab " + std::to_string(spec.vocab) + " too small, need " +
                          std::to_string(layout.required));
    if (spec.feat_dim < 3 * spec.attr_values)
        throw ConfigError("task spec: feat_dim " + std::to_string(spec.feat_dim) +
                          " too small for 3x" + std::to_string(spec.attr_values) + " one-hots");
    if (!(spec.noise >= 0.0)) throw ConfigError("task spec: noise must be >= 0");
}

// Content tokens (end marker excluded) as a deterministic function of the
// noiseless attributes.
std::vector<int> answer_content(const TaskSpec& spec, const VocabLayout& L, int color, int shape,
                                int count, int queried) {
    std::vector<int> content;
    if (spec.kind == TaskSpec::Kind::qa) {
        const int value = queried == 0 ? color : (queried == 1 ? shape : count);
        content.push_back(L.value_token(queried, value));
        if (queried == 2) content.push_back(L.item);  // counts read out "<n> items"
    } else {
        content.push_back(L.value_token(0, color));
        content.push_back(L.value_token(1, shape));
        content.push_back(L.value_token(2, count));
        content.insert(content.end(), static_cast<std::size_t>(1 + count), L.item);
        content.insert(content.end(), static_cast<std::size_t>(shape), L.dot);
    }
    return content;
}

Example make_example(const TaskSpec& spec, const VocabLayout& L, std::uint64_t index) {
    Prng rng(spec.seed, index);
    Example ex;
    const int n = static_cast<int>(spec.attr_values);
    ex.color = rng.uniform_int(0, n - 1);
    ex.shape_attr = rng.uniform_int(0, n - 1);
    ex.count = rng.uniform_int(0, n - 1);
    ex.queried = spec.kind == TaskSpec::Kind::qa ? rng.uniform_int(0, 2) : -1;

    ex.feature.assign(spec.feat_dim, 0.0);
    ex.feature[static_cast<std::size_t>(ex.color)] = 1.0;
    ex.feature[spec.attr_values + static_cast<std::size_t>(ex.shape_attr)] = 1.0;
    ex.feature[2 * spec.attr_values + static_cast<std::size_t>(ex.count)] = 1.0;
    for (double& f : ex.feature) f += spec.noise * rng.normal();

    if (spec.kind == TaskSpec::Kind::qa)
        ex.instruction = {L.ask, L.attr_kind_base + ex.queried, L.sep};
    else
        ex.instruction = {L.describe, L.sep};

    std::vector<int> content = answer_content(spec, L, ex.color, ex.shape_attr, ex.count, ex.queried);
    if (content.size() < spec.answer_min || content.size() > spec.answer_max)
        throw ContractError("generated answer length " + std::to_string(content.size()) +
                            " outside spec range");
    ex.content_len = static_cast<int>(content.size());
    ex.answer = std::move(content);
    ex.answer.push_back(L.end);
    return ex;
}

}  // namespace

void validate_task_spec(const TaskSpec& spec) { validate_spec_impl(spec); }

Dataset generate_dataset(const TaskSpec& spec) {
    validate_spec_impl(spec);
    const VocabLayout L(spec.attr_values);
    Dataset ds;
    ds.spec = spec;
    ds.spec_hash = task_spec_hash(spec);
    ds.train.reserve(spec.train_size);
    ds.eval.reserve(spec.eval_size);
    for (std::size_t i = 0; i < spec.train_size; ++i) ds.train.push_back(make_example(spec, L, i));
    for (std::size_t i = 0; i < spec.eval_size; ++i)
        ds.eval.push_back(make_example(spec, L, spec.train_size + i));
    return ds;
}

std::uint64_t dataset_checksum(const Dataset& ds) {
    std::uint64_t h = ds.spec_hash;
    auto mix_example = [&h](const Example& ex) {
        h = fnv1a64(ex.feature, h);
        h = fnv1a64(ex.instruction.data(), ex.instruction.size() * sizeof(int), h);
        h = fnv1a64(ex.answer.data(), ex.answer.size() * sizeof(int), h);
    };
    for (const auto& ex : ds.train) mix_example(ex);
    for (const auto& ex : ds.eval) mix_example(ex);
    return h;
}

namespace {

constexpr char kDataMagic[8] = {'C', 'O', 'T', 'D', 'A', 'T', 'A', '1'};

void put_u32(std::ostream& f, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 4);
}

void put_u64(std::ostream& f, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 8);
}

void put_i32(std::ostream& f, std::int32_t v) { put_u32(f, static_cast<std::uint32_t>(v)); }

void put_f64(std::ostream& f, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(f, bits);
}

std::uint32_t get_u32(std::istream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IoError("dataset: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& f) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (!f) throw IoError("dataset: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::int32_t get_i32(std::istream& f) { return static_cast<std::int32_t>(get_u32(f)); }

double get_f64(std::istream& f) {
    const std::uint64_t bits = get_u64(f);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

void put_example(std::ostream& f, const Example& ex) {
    put_u32(f, static_cast<std::uint32_t>(ex.feature.size()));
    for (double v : ex.feature) put_f64(f, v);
    put_u32(f, static_cast<std::uint32_t>(ex.instruction.size()));
    for (int v : ex.instruction) put_i32(f, v);
    put_u32(f, static_cast<std::uint32_t>(ex.answer.size()));
    for (int v : ex.answer) put_i32(f, v);
    put_i32(f, ex.content_len);
    put_i32(f, ex.color);
    put_i32(f, ex.shape_attr);
    put_i32(f, ex.count);
    put_i32(f, ex.queried);
}

Example get_example(std::istream& f) {
    Example ex;
    ex.feature.resize(get_u32(f));
    for (double& v : ex.feature) v = get_f64(f);
    ex.instruction.resize(get_u32(f));
    for (int& v : ex.instruction) v = get_i32(f);
    ex.answer.resize(get_u32(f));
    for (int& v : ex.answer) v = get_i32(f);
    ex.content_len = get_i32(f);
    ex.color = get_i32(f);
    ex.shape_attr = get_i32(f);
    ex.count = get_i32(f);
    ex.queried = get_i32(f);
    return ex;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("dataset: cannot open '" + path + "' for writing");
    f.write(kDataMagic, 8);
    put_u32(f, 1);  // version
    put_u64(f, ds.spec_hash);
    const std::string spec_text = serialize_task_spec(ds.spec);
    put_u32(f, static_cast<std::uint32_t>(spec_text.size()));
    f.write(spec_text.data(), static_cast<std::streamsize>(spec_text.size()));
    put_u32(f, static_cast<std::uint32_t>(ds.train.size()));
    put_u32(f, static_cast<std::uint32_t>(ds.eval.size()));
    for (const auto& ex : ds.train) put_example(f, ex);
    for (const auto& ex : ds.eval) put_example(f, ex);
    if (!f) throw IoError("dataset: write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("dataset: cannot open '" + path + "'");
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kDataMagic, 8) != 0)
        throw IoError("dataset: bad magic in '" + path + "'");
    const std::uint32_t version = get_u32(f);
    if (version != 1) throw IoError("dataset: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.spec_hash = get_u64(f);
    std::string spec_text(get_u32(f), '\0');
    f.read(spec_text.data(), static_cast<std::streamsize>(spec_text.size()));
    ds.spec = parse_task_spec(spec_text);
    if (task_spec_hash(ds.spec) != ds.spec_hash)
        throw IoError("dataset: embedded spec does not match stored hash");
    const std::uint32_t ntrain = get_u32(f), neval = get_u32(f);
    ds.train.reserve(ntrain);
    ds.eval.reserve(neval);
    for (std::uint32_t i = 0; i < ntrain; ++i) ds.train.push_back(get_example(f));
    for (std::uint32_t i = 0; i < neval; ++i) ds.eval.push_back(get_example(f));
    return ds;
}

Dataset load_dataset(const std::string& path, const TaskSpec& expect) {
    Dataset ds = load_dataset(path);
    if (ds.spec_hash != task_spec_hash(expect))
        throw ConfigError("dataset: spec hash mismatch, file was generated from a different spec");
    return ds;
}

void dump_dataset(const Dataset& ds, std::ostream& out) {
    out << "# task " << kind_name(ds.spec.kind) << ", spec hash " << ds.spec_hash << "\n";
    auto dump_split = [&](const char* label, const std::vector<Example>& split) {
        out << "# " << label << " (" << split.size() << " examples)\n";
        for (std::size_t i = 0; i < split.size(); ++i) {
            const Example& ex = split[i];
            out << label << "[" << i << "] attrs=(" << ex.color << "," << ex.shape_attr << ","
                << ex.count << ") queried=" << ex.queried << "\n  feature:";
            for (double v : ex.feature) out << " " << format_double(v);
            out << "\n  instruction:";
            for (int t : ex.instruction) out << " " << t;
            out << "\n  answer:";
            for (int t : ex.answer) out << " " << t;
            out << "\n";
        }
    };
    dump_split("train", ds.train);
    dump_split("eval", ds.eval);
}

PretrainResult pretrain_backbone(const TaskSpec& spec, const ModelShape& shape, long steps,
                                 double lr, std::uint64_t seed, std::size_t batch_size) {
    if (steps < 0) throw ConfigError("pretrain: steps must be >= 0");
    if (spec.vocab != shape.vocab)
        throw ConfigError("pretrain: task vocab " + std::to_string(spec.vocab) +
                          " != model vocab " + std::to_string(shape.vocab));
    Dataset ds = generate_dataset(spec);
    Model model(shape, seed);
    model.set_backbone_trainable(true);

    auto stream_tokens = [&](const Example& ex) {
        std::vector<int> toks = ex.instruction;
        toks.insert(toks.end(), ex.answer.begin(), ex.answer.end());
        return toks;
    };

    auto batch_text_loss = [&](Graph& g, long step) {
        Prng rng(seed, fnv1a64("pretrain-batch") + static_cast<std::uint64_t>(step));
        Tensor total;
        for (std::size_t b = 0; b < batch_size; ++b) {
            const auto& ex = ds.train[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(ds.train.size()) - 1))];
            Tensor l = model.text_loss(g, stream_tokens(ex));
            total = total.defined() ? g.add(total, l) : l;
        }
        return g.scale(total, 1.0 / static_cast<double>(batch_size));
    };

    PretrainResult result;
    {
        Graph g(false);
        result.initial_loss = batch_text_loss(g, 0).item();
    }
    result.final_loss = result.initial_loss;

    for (long step = 0; step < steps; ++step) {
        model.zero_grads();
        Graph g;
        Tensor loss = batch_text_loss(g, step);
        model.backward(g, loss);
        result.final_loss = loss.item();
        for (auto& [name, t] : model.params()) {
            if (!is_backbone_param(name)) continue;
            Tensor param = t;
            if (!param.has_grad()) continue;
            auto& v = param.values();
            const auto& gr = param.grad_or_throw();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * gr[i];
            if (!all_finite(v)) throw NumericError("pretrain: non-finite parameter in '" + name + "'");
        }
    }

    model.set_backbone_trainable(false);
    result.backbone = model.backbone_params();
    return result;
}

}  // namespace cotune
