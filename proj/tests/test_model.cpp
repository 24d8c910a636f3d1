#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "cotune/model.hpp"

#include <cmath>
#include <cstdio>

#include <doctest.h>

#include "cotune/checkpoint.hpp"

using namespace cotune;

namespace {

ModelShape tiny_shape() {
    ModelShape s;
    s.vocab = 12;
    s.dim = 8;
    s.blocks = 1;
    s.mlp_hidden = 16;
    s.soft_tokens = 2;
    s.feat_dim = 4;
    s.enc_hidden = 8;
    s.adapter_rank = 2;
    s.max_seq = 12;
    return s;
}

Example make_example(Prng& rng, const ModelShape& shape, std::size_t answer_len = 3) {
    Example ex;
    ex.feature.resize(shape.feat_dim);
    for (double& f : ex.feature) f = rng.normal();
    ex.instruction = {1, 2};
    for (std::size_t i = 0; i + 1 < answer_len; ++i)
        ex.answer.push_back(rng.uniform_int(3, static_cast<int>(shape.vocab) - 1));
    ex.answer.push_back(0);
    ex.content_len = static_cast<int>(ex.answer.size()) - 1;
    return ex;
}

double max_abs_diff(const GenerationDistribution& a, const GenerationDistribution& b) {
    REQUIRE(a.same_layout(b));
    double m = 0.0;
    for (std::size_t e = 0; e < a.examples.size(); ++e)
        for (std::size_t i = 0; i < a.examples[e].probs.size(); ++i)
            m = std::max(m, std::abs(a.examples[e].probs[i] - b.examples[e].probs[i]));
    return m;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("parameter partition is exhaustive and disjoint") {
    Model model(tiny_shape(), 1);
    std::size_t s = 0, t = 0, x = 0;
    for (const auto& [name, tensor] : model.params()) {
        const int hits = int(is_encoder_param(name)) + int(is_adapter_param(name)) +
                         int(is_backbone_param(name));
        CHECK(hits == 1);
        s += is_encoder_param(name);
        t += is_adapter_param(name);
        x += is_backbone_param(name);
        CHECK(tensor.requires_grad() == !is_backbone_param(name));
    }
    CHECK(s == model.component_params(Component::encoder).size());
    CHECK(t == model.component_params(Component::adapter).size());
    CHECK(x == model.backbone_params().size());
    CHECK(s + t + x == model.params().size());
}

TEST_CASE("encode_features basics and oracle") {
    const ModelShape shape = tiny_shape();
    Model model(shape, 3);

    SUBCASE("zero feature through zero final layer gives zero tokens") {
        for (const char* name : {"s.w2", "s.b2", "s.b1"}) {
            auto t = model.params().at(name);
            std::fill(t.values().begin(), t.values().end(), 0.0);
        }
        Graph g(false);
        Tensor soft = model.encode_features(g, std::vector<double>(shape.feat_dim, 0.0));
        for (double v : soft.values()) CHECK(v == 0.0);
    }

    SUBCASE("identical features encode identically") {
        Prng rng(5, 1);
        std::vector<double> f(shape.feat_dim);
        for (double& v : f) v = rng.normal();
        Graph g(false);
        CHECK(model.encode_features(g, f).values() == model.encode_features(g, f).values());
    }

    SUBCASE("matches independent matrix-arithmetic recomputation") {
        Prng rng(7, 2);
        std::vector<double> f(shape.feat_dim);
        for (double& v : f) v = rng.normal();
        Graph g(false);
        const Tensor soft = model.encode_features(g, f);

        const auto& w1 = model.params().at("s.w1").values();
        const auto& b1 = model.params().at("s.b1").values();
        const auto& w2 = model.params().at("s.w2").values();
        const auto& b2 = model.params().at("s.b2").values();
        const std::size_t he = shape.enc_hidden, out_dim = shape.soft_tokens * shape.dim;
        std::vector<double> h(he), out(out_dim);
        for (std::size_t j = 0; j < he; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < shape.feat_dim; ++k) acc += f[k] * w1[k * he + j];
            h[j] = gelu_ref(acc + b1[j]);
        }
        for (std::size_t j = 0; j < out_dim; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < he; ++k) acc += h[k] * w2[k * out_dim + j];
            out[j] = acc + b2[j];
        }
        for (std::size_t i = 0; i < out_dim; ++i)
            CHECK(std::abs(soft.at(i) - out[i]) <= 1e-12);
    }

    SUBCASE("wrong feature dimension is rejected") {
        Graph g(false);
        CHECK_THROWS_AS(model.encode_features(g, std::vector<double>(2, 0.0)), ShapeError);
    }
}

TEST_CASE("adapter-zero start equals the frozen backbone exactly") {
    const ModelShape shape = tiny_shape();
    Model model(shape, 11);  // default init keeps every lora B at zero
    Prng rng(13, 1);
    Example ex = make_example(rng, shape);
    const Batch batch{&ex};
    CHECK(max_abs_diff(model.forward_distributions(batch, true),
                       model.forward_distributions(batch, false)) == 0.0);

    // and with A zeroed too
    for (auto& [name, t] : model.params())
        if (is_adapter_param(name)) {
            Tensor tt = t;
            std::fill(tt.values().begin(), tt.values().end(), 0.0);
        }
    CHECK(max_abs_diff(model.forward_distributions(batch, true),
                       model.forward_distributions(batch, false)) == 0.0);
}

TEST_CASE("forward distributions: causality, normalization, replay") {
    const ModelShape shape = tiny_shape();
    Model model(shape, 17);
    Prng rng(19, 1);
    Example ex = make_example(rng, shape, 4);

    SUBCASE("mutating the final answer token leaves earlier rows bit-identical") {
        Example mutated = ex;
        mutated.answer[mutated.answer.size() - 1] = 7;
        const auto base = model.forward_distributions({&ex});
        const auto probe = model.forward_distributions({&mutated});
        const std::size_t v = base.vocab;
        const std::size_t positions = base.examples[0].positions;
        REQUIRE(positions == probe.examples[0].positions);
        for (std::size_t i = 0; i + 1 < positions; ++i)
            for (std::size_t j = 0; j < v; ++j)
                CHECK(base.examples[0].probs[i * v + j] == probe.examples[0].probs[i * v + j]);
    }

    SUBCASE("rows sum to 1 and replay is bit-identical") {
        const auto a = model.forward_distributions({&ex});
        const auto b = model.forward_distributions({&ex});
        CHECK(max_abs_diff(a, b) == 0.0);
        for (const auto& pe : a.examples)
            for (std::size_t i = 0; i < pe.positions; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < a.vocab; ++j) s += pe.probs[i * a.vocab + j];
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
    }

    SUBCASE("sequence overflow raises a length error") {
        Example longer = ex;
        longer.answer.assign(shape.max_seq, 3);
        CHECK_THROWS_AS(model.forward_distributions({&longer}), ShapeError);
    }
}

TEST_CASE("batch loss values") {
    const ModelShape shape = tiny_shape();
    Model model(shape, 23);
    Prng rng(29, 1);
    Example e1 = make_example(rng, shape, 3);
    Example e2 = make_example(rng, shape, 4);

    SUBCASE("uniform-forcing output projection gives ln V") {
        for (const char* name : {"x.out_w", "x.out_b"}) {
            auto t = model.params().at(name);
            std::fill(t.values().begin(), t.values().end(), 0.0);
        }
        Graph g(false);
        CHECK(model.batch_loss(g, {&e1}).item() ==
              doctest::Approx(std::log(double(shape.vocab))).epsilon(1e-12));
    }

    SUBCASE("duplicating every example leaves the loss unchanged") {
        Graph g(false);
        const double once = model.batch_loss(g, {&e1, &e2}).item();
        const double twice = model.batch_loss(g, {&e1, &e2, &e1, &e2}).item();
        CHECK(std::abs(once - twice) <= 1e-12);
    }

    SUBCASE("teacher-forcing consistency against forward_distributions") {
        Graph g(false);
        const double loss = model.batch_loss(g, {&e1, &e2}).item();
        const auto dists = model.forward_distributions({&e1, &e2});
        double want = 0.0;
        const Example* exes[] = {&e1, &e2};
        for (std::size_t e = 0; e < 2; ++e) {
            const auto& pe = dists.examples[e];
            double inner = 0.0;
            for (std::size_t i = 0; i < pe.positions; ++i)
                inner -= std::log(pe.probs[i * dists.vocab +
                                            static_cast<std::size_t>(exes[e]->answer[i])]);
            want += inner / static_cast<double>(pe.positions);
        }
        want /= 2.0;
        CHECK(std::abs(loss - want) <= 1e-10);
    }
}

TEST_CASE("full-model gradients match finite differences") {
    const ModelShape shape = tiny_shape();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Model model(shape, seed + 100);
        Prng rng(seed, 31);
        Example e1 = make_example(rng, shape, 3);
        Example e2 = make_example(rng, shape, 4);
        Example e3 = make_example(rng, shape, 2);
        const Batch batch{&e1, &e2, &e3};

        model.zero_grads();
        Graph g;
        Tensor loss = model.batch_loss(g, batch);
        model.backward(g, loss);

        auto eval = [&]() {
            Graph ng(false);
            return model.batch_loss(ng, batch).item();
        };
        for (auto& [name, t] : model.params()) {
            if (!t.requires_grad()) continue;
            Tensor leaf = t;
            const std::vector<double> fd = finite_diff_grad(eval, leaf, 1e-4);
            const std::vector<double>& ad = leaf.grad();
            double diff = 0.0, ref = 0.0;
            for (std::size_t i = 0; i < fd.size(); ++i) {
                diff += (ad[i] - fd[i]) * (ad[i] - fd[i]);
                ref += fd[i] * fd[i];
            }
            const double rel = std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
            CHECK_MESSAGE(rel <= 1e-3, "parameter ", name, " rel err ", rel);
        }
    }
}

TEST_CASE("apply_delta contracts") {
    const ModelShape shape = tiny_shape();
    Model model(shape, 37);
    Prng rng(41, 1);
    const std::size_t n = model.component_size(Component::encoder);
    std::vector<double> delta(n);
    for (double& d : delta) d = rng.normal();

    SUBCASE("scale zero is a no-op") {
        const std::uint64_t before = model.component_checksum(Component::encoder);
        model.apply_delta(Component::encoder, delta, 0.0);
        CHECK(model.component_checksum(Component::encoder) == before);
    }

    SUBCASE("snapshot restore is bit-exact; plain +/- is involutive to rounding") {
        const auto snap = model.snapshot(Component::encoder);
        const std::uint64_t before = model.component_checksum(Component::encoder);
        model.apply_delta(Component::encoder, delta, 0.37);
        model.apply_delta(Component::encoder, delta, -0.37);
        const auto values = model.collect_values(Component::encoder);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(values[i] - snap[i]) <= 1e-15 * std::max(1.0, std::abs(snap[i])));
        model.restore(Component::encoder, snap);
        CHECK(model.component_checksum(Component::encoder) == before);
    }

    SUBCASE("matches a plain SGD reference step") {
        model.zero_grads();
        Prng drng(43, 1);
        Example ex = make_example(drng, shape);
        Graph g;
        Tensor loss = model.batch_loss(g, {&ex});
        model.backward(g, loss);
        const auto grads = model.collect_grads(Component::adapter);
        const auto before = model.collect_values(Component::adapter);
        const double lr = 1e-2;
        model.apply_delta(Component::adapter, grads, -lr);
        const auto after = model.collect_values(Component::adapter);
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(after[i] == before[i] + (-lr) * grads[i]);
    }

    SUBCASE("shape mismatch is rejected; backbone is untouchable") {
        CHECK_THROWS_AS(model.apply_delta(Component::adapter, delta, 1.0), ShapeError);
        const std::uint64_t frozen = model.backbone_checksum();
        model.apply_delta(Component::encoder, delta, 0.5);
        CHECK(model.backbone_checksum() == frozen);
    }
}

TEST_CASE("greedy decode") {
    const ModelShape shape = tiny_shape();
    Model model(shape, 47);
    Prng rng(53, 1);
    Example ex = make_example(rng, shape);

    SUBCASE("a constant-argmax head repeats that token") {
        auto bias = model.params().at("x.out_b");
        std::fill(bias.values().begin(), bias.values().end(), 0.0);
        bias.values()[5] = 50.0;
        const auto out = model.greedy_decode(ex.feature, ex.instruction, 4, /*end_token=*/0);
        CHECK(out == std::vector<int>{5, 5, 5, 5});
    }

    SUBCASE("decoding twice is identical") {
        const auto a = model.greedy_decode(ex.feature, ex.instruction, 6, 0);
        const auto b = model.greedy_decode(ex.feature, ex.instruction, 6, 0);
        CHECK(a == b);
    }
}

TEST_CASE("backbone checkpoint reload reproduces forwards bit-identically") {
    const ModelShape shape = tiny_shape();
    Model model(shape, 59);
    Prng rng(61, 1);
    Example ex = make_example(rng, shape);

    const std::string path = "model_backbone_test.ckpt";
    save_checkpoint(path, model.backbone_params());
    Model reloaded = Model::with_backbone(shape, load_checkpoint(path), 59);
    std::remove(path.c_str());

    CHECK(reloaded.backbone_checksum() == model.backbone_checksum());
    CHECK(reloaded.component_checksum(Component::encoder) ==
          model.component_checksum(Component::encoder));
    CHECK(max_abs_diff(model.forward_distributions({&ex}),
                       reloaded.forward_distributions({&ex})) == 0.0);

    std::map<std::string, Tensor> broken;
    CHECK_THROWS_AS(Model::with_backbone(shape, broken, 1), ContractError);
}

TEST_CASE("op counters track forwards and backwards") {
    const ModelShape shape = tiny_shape();
    Model model(shape, 67);
    Prng rng(71, 1);
    Example ex = make_example(rng, shape);
    model.reset_counters();
    Graph g;
    Tensor loss = model.batch_loss(g, {&ex});
    model.backward(g, loss);
    model.forward_distributions({&ex});
    CHECK(model.counters().forwards == 2);
    CHECK(model.counters().backwards == 1);
}
