#include <benchmark/benchmark.h>

#include "cotune/harness.hpp"
#include "cotune/optimizer.hpp"

using namespace cotune;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.steps = 4;
    cfg.batch_size = 8;
    cfg.train_size = 64;
    cfg.eval_size = 8;
    cfg.pretrain_steps = 0;
    return cfg;
}

void bench_matmul(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Prng rng(1, 1);
    Tensor a = Tensor::randn({n, n}, rng, 1.0);
    Tensor b = Tensor::randn({n, n}, rng, 1.0);
    Graph g(false);
    for (auto _ : state) {
        Tensor c = g.matmul(a, b);
        benchmark::DoNotOptimize(c.values().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}
BENCHMARK(bench_matmul)->Arg(16)->Arg(32)->Arg(64);

void bench_batch_loss_forward(benchmark::State& state) {
    const ExperimentConfig cfg = small_config();
    const Dataset ds = generate_dataset(cfg.task_spec());
    Model model(cfg.model, 1);
    const Batch batch = make_batch(ds, sample_batch_indices(1, 0, cfg.batch_size, ds.train.size()));
    for (auto _ : state) {
        Graph g(false);
        benchmark::DoNotOptimize(model.batch_loss(g, batch).item());
    }
}
BENCHMARK(bench_batch_loss_forward);

void bench_loss_backward(benchmark::State& state) {
    const ExperimentConfig cfg = small_config();
    const Dataset ds = generate_dataset(cfg.task_spec());
    Model model(cfg.model, 1);
    const Batch batch = make_batch(ds, sample_batch_indices(1, 0, cfg.batch_size, ds.train.size()));
    for (auto _ : state) {
        model.zero_grads();
        Graph g;
        Tensor loss = model.batch_loss(g, batch);
        model.backward(g, loss);
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(bench_loss_backward);

void bench_commit_step(benchmark::State& state) {
    const ExperimentConfig cfg = small_config();
    const Dataset ds = generate_dataset(cfg.task_spec());
    Model model(cfg.model, 1);
    const Batch batch = make_batch(ds, sample_batch_indices(1, 0, cfg.batch_size, ds.train.size()));
    CommitConfig cc;
    cc.reg.enabled = state.range(0) != 0;
    for (auto _ : state) {
        auto r = commit_step(model, batch, RatePair{1e-4, 1e-4}, cc);
        benchmark::DoNotOptimize(r.record.kappa);
    }
}
BENCHMARK(bench_commit_step)->Arg(0)->Arg(1);

void bench_sequence_distance(benchmark::State& state) {
    const ExperimentConfig cfg = small_config();
    const Dataset ds = generate_dataset(cfg.task_spec());
    Model model(cfg.model, 1);
    const Batch batch = make_batch(ds, sample_batch_indices(1, 0, cfg.batch_size, ds.train.size()));
    const GenerationDistribution a = model.forward_distributions(batch);
    const GenerationDistribution b = model.forward_distributions(batch, false);
    for (auto _ : state)
        benchmark::DoNotOptimize(sequence_distance(a, b, DistanceKind::total_variation));
}
BENCHMARK(bench_sequence_distance);

}  // namespace

BENCHMARK_MAIN();
