#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cotune/model.hpp"

namespace cotune {

// Synthetic multimodal task: features are noisy attribute one-hots, answers
// are deterministic token readouts of the noiseless attributes.
struct TaskSpec {
    enum class Kind { qa, caption };

    Kind kind = Kind::qa;
    std::size_t attr_values = 4;  // values per attribute; three attributes total
    double noise = 0.1;           // feature noise stddev
    std::size_t answer_min = 1;   // content-token length range, end marker excluded
    std::size_t answer_max = 2;
    std::size_t vocab = 64;
    std::size_t feat_dim = 16;
    std::size_t train_size = 512;
    std::size_t eval_size = 128;
    std::uint64_t seed = 1;

    bool operator==(const TaskSpec&) const = default;
};

TaskSpec qa_task_spec();
TaskSpec caption_task_spec();

// ConfigError when sizes, vocabulary, or feature dims cannot hold the task.
void validate_task_spec(const TaskSpec& spec);

std::string serialize_task_spec(const TaskSpec& spec);
TaskSpec parse_task_spec(const std::string& text);
std::uint64_t task_spec_hash(const TaskSpec& spec);

// Token-id layout inside the spec's vocabulary. Answer-content tokens are
// disjoint from instruction (template) tokens by construction.
struct VocabLayout {
    int end = 0;
    int ask = 1;
    int describe = 2;
    int sep = 3;
    int attr_kind_base = 4;   // 3 tokens: which attribute a question queries
    int value_base = 7;       // attr_values tokens per attribute, 3 blocks
    int item;                 // filler readout token
    int dot;                  // second filler readout token
    std::size_t attr_values;
    std::size_t required;     // minimum vocabulary size

    explicit VocabLayout(std::size_t attr_values);
    int value_token(int attribute, int value) const;
};

struct Dataset {
    TaskSpec spec;
    std::uint64_t spec_hash = 0;
    std::vector<Example> train;
    std::vector<Example> eval;
};

// Pure function of (spec, seed); example i is drawn from the stream
// (spec.seed, i), so regeneration and sharding are reproducible.
Dataset generate_dataset(const TaskSpec& spec);

std::uint64_t dataset_checksum(const Dataset& ds);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);
// Rejects a file whose embedded spec hash differs from `expect`.
Dataset load_dataset(const std::string& path, const TaskSpec& expect);
void dump_dataset(const Dataset& ds, std::ostream& out);

struct PretrainResult {
    std::map<std::string, Tensor> backbone;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Trains the backbone alone on text-only next-token streams drawn from the
// task's instruction/answer distribution, then freezes it. steps == 0 returns
// the seeded initialization untouched.
PretrainResult pretrain_backbone(const TaskSpec& spec, const ModelShape& shape, long steps,
                                 double lr, std::uint64_t seed, std::size_t batch_size = 16);

}  // namespace cotune
