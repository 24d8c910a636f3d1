#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "cotune/schedulers.hpp"

#include <cmath>
#include <deque>

#include <doctest.h>

using namespace cotune;

TEST_CASE("kappa moving average") {
    SUBCASE("constant stream reproduces the constant") {
        Scheduler s(SchedulerConfig{});
        for (int i = 0; i < 30; ++i) CHECK(s.push_kappa(0.7) == doctest::Approx(0.7).epsilon(1e-15));
    }

    SUBCASE("window of two averages the last two") {
        SchedulerConfig cfg;
        cfg.n_kappa = 2;
        Scheduler s(cfg);
        CHECK(s.push_kappa(1.0) == doctest::Approx(1.0));
        CHECK(s.push_kappa(3.0) == doctest::Approx(2.0));
        CHECK(s.push_kappa(5.0) == doctest::Approx(4.0));
    }

    SUBCASE("matches a sliding-window loop oracle") {
        SchedulerConfig cfg;
        cfg.n_kappa = 8;
        Scheduler s(cfg);
        Prng rng(5, 1);
        std::deque<double> window;
        for (int i = 0; i < 200; ++i) {
            const double k = 0.1 + rng.uniform() * 3.0;
            window.push_back(k);
            if (window.size() > 8) window.pop_front();
            double mean = 0.0;
            for (double v : window) mean += v;
            mean /= static_cast<double>(window.size());
            CHECK(std::abs(s.push_kappa(k) - mean) <= 1e-15);
        }
    }

    SUBCASE("rejects non-positive or non-finite kappa") {
        Scheduler s(SchedulerConfig{});
        CHECK_THROWS_AS(s.push_kappa(0.0), ContractError);
        CHECK_THROWS_AS(s.push_kappa(std::nan("")), ContractError);
    }
}

TEST_CASE("coordinated rate formulas") {
    SUBCASE("balance point reduces to the base rate") {
        const RatePair r = coordinated_rates(1.0, 1e-4, 0.5);
        CHECK(r.lr_t == doctest::Approx(1e-4).epsilon(1e-12));
        CHECK(r.lr_s == doctest::Approx(1e-4).epsilon(1e-12));
    }

    SUBCASE("kappa_ma = 3 shifts budget toward the encoder") {
        const RatePair r = coordinated_rates(3.0, 1e-4, 0.5);
        CHECK(r.lr_t == doctest::Approx(5e-5).epsilon(1e-12));
        CHECK(r.lr_s == doctest::Approx(1.5e-4).epsilon(1e-12));
    }

    SUBCASE("algebraic identities on random valid triples") {
        Prng rng(7, 2);
        for (int i = 0; i < 500; ++i) {
            const double kma = std::exp(rng.normal());
            const double alpha = 1e-5 + rng.uniform() * 1e-3;
            const double gamma = 0.05 + rng.uniform() * 0.9;
            const RatePair r = coordinated_rates(kma, alpha, gamma);
            CHECK(std::abs(r.lr_s + r.lr_t - alpha / gamma) <= 1e-12 * (alpha / gamma) + 1e-18);
            CHECK(std::abs(r.lr_s - kma * r.lr_t) <= 1e-12 * r.lr_s + 1e-18);
            // counter-steering: the side that moved more gets the smaller rate
            if (kma > 1.0) CHECK(r.lr_t < r.lr_s);
            if (kma < 1.0) CHECK(r.lr_t > r.lr_s);
        }
    }

    SUBCASE("out-of-range inputs are config errors") {
        CHECK_THROWS_AS(coordinated_rates(1e-9, 1e-4, 0.5), ConfigError);
        CHECK_THROWS_AS(coordinated_rates(1e9, 1e-4, 0.5), ConfigError);
        CHECK_THROWS_AS(coordinated_rates(1.0, 0.0, 0.5), ConfigError);
        CHECK_THROWS_AS(coordinated_rates(1.0, 1e-4, 1.0), ConfigError);
    }
}

TEST_CASE("fixed strategies hold their pinned rates") {
    SchedulerConfig cfg;

    cfg.strategy = Strategy::constant;
    Scheduler constant(cfg);
    cfg.strategy = Strategy::language_up;
    Scheduler language(cfg);
    cfg.strategy = Strategy::vision_up;
    Scheduler vision(cfg);

    for (long t = 0; t < 50; ++t) {
        const RatePair c = constant.rates_for_step(t);
        CHECK(c.lr_s == 1e-4);
        CHECK(c.lr_t == 1e-4);
        const RatePair l = language.rates_for_step(t);
        CHECK(l.lr_s == 1e-4);
        CHECK(l.lr_t == 1e-3);
        const RatePair v = vision.rates_for_step(t);
        CHECK(v.lr_s == 1e-3);
        CHECK(v.lr_t == 1e-4);
    }
}

TEST_CASE("coordinated scheduler refresh and hold behavior") {
    SchedulerConfig cfg;
    cfg.strategy = Strategy::coordinated;
    Scheduler s(cfg);
    Prng rng(11, 3);

    RatePair last{1e-4, 1e-4};
    std::vector<long> change_steps;
    for (long t = 0; t < 100; ++t) {
        const RatePair r = s.rates_for_step(t);
        if (r.lr_s != last.lr_s || r.lr_t != last.lr_t) change_steps.push_back(t);
        last = r;
        // warm-up: base rates until the buffer is full and t >= l_lr
        if (t < cfg.l_lr) {
            CHECK(r.lr_s == 1e-4);
            CHECK(r.lr_t == 1e-4);
        }
        s.observe(t, 0.5 + rng.uniform() * 2.0, 1e-4, 1e-4);
    }
    for (long t : change_steps) CHECK(t % cfg.l_lr == 0);
    CHECK_FALSE(s.refresh_events().empty());
    for (const RefreshEvent& ev : s.refresh_events()) {
        CHECK(ev.step % cfg.l_lr == 0);
        // rate-sum conservation at every refresh
        CHECK(std::abs(ev.lr_s + ev.lr_t - cfg.alpha / cfg.gamma) <= 1e-12);
        CHECK(std::abs(ev.lr_s - ev.kappa_ma * ev.lr_t) <= 1e-12);
    }

    SUBCASE("rates are bit-identical between refreshes") {
        SchedulerConfig hold_cfg;
        hold_cfg.strategy = Strategy::coordinated;
        Scheduler h(hold_cfg);
        Prng hr(13, 4);
        RatePair at_refresh{};
        for (long t = 0; t < 40; ++t) {
            const RatePair r = h.rates_for_step(t);
            if (t % hold_cfg.l_lr == 0)
                at_refresh = r;
            else {
                CHECK(r.lr_s == at_refresh.lr_s);
                CHECK(r.lr_t == at_refresh.lr_t);
            }
            h.observe(t, std::exp(hr.normal() * 0.3), 1e-4, 1e-4);
        }
    }
}

TEST_CASE("refresh-only feed mode fills the buffer slowly") {
    SchedulerConfig cfg;
    cfg.strategy = Strategy::coordinated;
    cfg.feed_every_step = false;
    cfg.n_kappa = 3;
    cfg.l_lr = 5;
    Scheduler s(cfg);
    for (long t = 0; t < 20; ++t) {
        s.rates_for_step(t);
        s.observe(t, 2.0, 1e-4, 1e-4);
    }
    // only steps 0,5,10,15 fed the buffer
    CHECK(s.buffer_size() == 3);
}

TEST_CASE("coordinate-descent strategies") {
    SchedulerConfig cfg;
    cfg.cd_patience = 4;
    cfg.cd_switch_threshold = 1e-6;

    SUBCASE("feature-cd trains the encoder first, then swaps once") {
        cfg.strategy = Strategy::feature_cd;
        Scheduler s(cfg);
        long switch_step = -1;
        for (long t = 0; t < 60; ++t) {
            const RatePair r = s.rates_for_step(t);
            // exactly one component trains at any step
            CHECK(((r.lr_s != 0.0) ^ (r.lr_t != 0.0)));
            if (!s.cd_switched()) {
                CHECK(r.lr_s == 1e-4);
                CHECK(r.lr_t == 0.0);
            } else {
                CHECK(r.lr_s == 0.0);
                CHECK(r.lr_t == 1e-4);
            }
            // updates calm down from step 30 on
            const double norm_s = t < 30 ? 1e-3 : 1e-8;
            s.observe(t, 1.0, norm_s, 0.0);
            if (switch_step < 0 && s.cd_switched()) switch_step = s.cd_switch_step();
        }
        CHECK(switch_step == 33);  // patience of 4 calm steps starting at 30
    }

    SUBCASE("language-cd mirrors the order") {
        cfg.strategy = Strategy::language_cd;
        Scheduler s(cfg);
        const RatePair r0 = s.rates_for_step(0);
        CHECK(r0.lr_s == 0.0);
        CHECK(r0.lr_t == 1e-4);
        for (long t = 0; t < 10; ++t) s.observe(t, 1.0, 0.0, 1e-9);
        const RatePair r1 = s.rates_for_step(10);
        CHECK(s.cd_switched());
        CHECK(r1.lr_s == 1e-4);
        CHECK(r1.lr_t == 0.0);
    }

    SUBCASE("a noisy norm resets the calm streak") {
        cfg.strategy = Strategy::feature_cd;
        Scheduler s(cfg);
        for (long t = 0; t < 20; ++t) {
            const double norm = (t % 3 == 2) ? 1e-3 : 1e-9;  // never 4 calm steps in a row
            s.observe(t, 1.0, norm, 0.0);
        }
        CHECK_FALSE(s.cd_switched());
    }
}

TEST_CASE("scheduler config validation") {
    auto make = [](SchedulerConfig cfg) { return Scheduler(cfg); };
    SchedulerConfig cfg;
    cfg.lr_s = 0.0;
    CHECK_THROWS_AS(make(cfg), ConfigError);
    cfg = SchedulerConfig{};
    cfg.n_kappa = 0;
    CHECK_THROWS_AS(make(cfg), ConfigError);
    cfg = SchedulerConfig{};
    cfg.l_lr = 0;
    CHECK_THROWS_AS(make(cfg), ConfigError);
}
