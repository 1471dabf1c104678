// Copyright (C) 2026 the openmixer authors
// SPDX-License-Identifier: Apache-2.0
//

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "openmixer/backend.hpp"
#include "openmixer/dfa.hpp"
#include "support/gradcheck.hpp"

using namespace openmixer;

namespace {

Tensor axis(int d, int k, double scale = 1.0) {
    Tensor t({d});
    t.at(k) = scale;
    return t;
}

Tensor random_unit_rows(int rows, int d, Rng& rng) {
    Tensor t({rows, d});
    for (int i = 0; i < rows; ++i) {
        double norm = 0.0;
        for (int j = 0; j < d; ++j) {
            t.at(i, j) = rng.gaussian();
            norm += t.at(i, j) * t.at(i, j);
        }
        norm = std::sqrt(norm);
        for (int j = 0; j < d; ++j) t.at(i, j) /= norm;
    }
    return t;
}

}  // namespace

TEST_CASE("ensemble_text_features: single prompt passes through unchanged") {
    Tensor one({1, 4});
    one.at(0, 1) = 1.0;
    const auto out = dfa::ensemble_text_features({one});
    CHECK(out.dim(0) == 1);
    for (int j = 0; j < 4; ++j) CHECK(out.at(0, j) == one.at(0, j));
}

TEST_CASE("ensemble_text_features: identical prompts collapse to that feature") {
    Tensor rows({3, 4});
    for (int k = 0; k < 3; ++k) rows.at(k, 2) = 1.0;
    const auto out = dfa::ensemble_text_features({rows});
    CHECK(out.at(0, 2) == 1.0);
    CHECK(out.at(0, 0) == 0.0);
}

TEST_CASE("ensemble_text_features: antipodal prompts cancel and raise an error") {
    Tensor rows({2, 4});
    rows.at(0, 0) = 1.0;
    rows.at(1, 0) = -1.0;
    CHECK_THROWS_AS(dfa::ensemble_text_features({rows}), InputError);
    CHECK_THROWS_AS(dfa::ensemble_text_features({}), InputError);
}

TEST_CASE("ensemble_text_features: mean of two orthogonal prompts is their normalized midpoint") {
    Tensor rows({2, 4});
    rows.at(0, 0) = 1.0;
    rows.at(1, 1) = 1.0;
    const auto out = dfa::ensemble_text_features({rows});
    CHECK(out.at(0, 0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(out.at(0, 1) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
}

TEST_CASE("apply_prompt_template: expands {CLS} once per class") {
    const auto prompts = dfa::apply_prompt_template("a video of person {CLS}", {"walking", "jumping"});
    CHECK(prompts.at("walking") == std::vector<std::string>{"a video of person walking"});
    CHECK(prompts.at("jumping") == std::vector<std::string>{"a video of person jumping"});
    CHECK_THROWS_AS(dfa::apply_prompt_template("no placeholder", {"a"}), InputError);
}

TEST_CASE("fusion params: dynamic lambda lives strictly inside (0,1), fixed mode pins it") {
    ParamStore ps;
    auto fp = dfa::make_fusion(ps, "dfa", 4);
    fp.lambda_raw->value.at(0) = -20.0;
    fp.lambda_raw->value.at(1) = 0.0;
    fp.lambda_raw->value.at(2) = 20.0;
    const auto lam = fp.effective_lambda()->value;
    CHECK(lam.at(0) > 0.0);
    CHECK(lam.at(1) == 0.5);
    CHECK(lam.at(2) < 1.0);

    dfa::FusionParams fixed = fp;
    fixed.mode = dfa::FusionMode::fixed;
    fixed.fixed_lambda = 1.0;
    const auto pinned = fixed.effective_lambda()->value;
    for (int i = 0; i < 4; ++i) CHECK(pinned.at(i) == 1.0);

    fixed.fixed_lambda = 1.5;
    CHECK_THROWS_AS(fixed.effective_lambda(), ConfigError);
}

TEST_CASE("dynamic_fuse: lambda=1 copies f_v into every row exactly") {
    ParamStore ps;
    Rng rng(3);
    const int n = 3, dq = 4, d = 6;
    auto proj = make_linear(ps, "proj", dq, d, rng);
    auto fusion = dfa::make_fusion(ps, "dfa", n, dfa::FusionMode::fixed, 1.0);
    const Tensor f_v = axis(d, 2);  // exactly unit-norm
    const Var q = constant(Tensor::randn({n, dq}, rng, 1.0));
    const auto fused = dfa::dynamic_fuse(q, f_v, fusion, proj);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) CHECK(fused->value.at(i, j) == f_v.at(j));
}

TEST_CASE("dynamic_fuse: lambda=0 reduces to the normalized projected queries") {
    ParamStore ps;
    Rng rng(4);
    const int n = 2, dq = 3, d = 4;
    auto proj = make_linear(ps, "proj", dq, d, rng);
    auto fusion = dfa::make_fusion(ps, "dfa", n, dfa::FusionMode::fixed, 0.0);
    const Var q = constant(Tensor::randn({n, dq}, rng, 1.0));
    const auto fused = dfa::dynamic_fuse(q, axis(d, 0), fusion, proj);
    const auto reference = normalize_rows(proj(q));
    CHECK(fused->value.raw() == reference->value.raw());
}

TEST_CASE("dynamic_fuse: lambda=0.5 with zero queries recovers the f_v direction") {
    ParamStore ps;
    const int n = 2, dq = 3, d = 4;
    auto proj = make_linear_zero(ps, "proj", dq, d);
    auto fusion = dfa::make_fusion(ps, "dfa", n, dfa::FusionMode::fixed, 0.5);
    const Var q = constant(Tensor({n, dq}, 1.0));
    const auto fused = dfa::dynamic_fuse(q, axis(d, 1, 2.0), fusion, proj);  // f_v = 2u
    for (int i = 0; i < n; ++i) {
        CHECK(fused->value.at(i, 1) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(fused->value.at(i, 0) == 0.0);
    }
}

TEST_CASE("align_scores: equal similarities give exactly uniform rows") {
    const int n = 2, d = 3, c = 4;
    Tensor ft({c, d});
    for (int k = 0; k < c; ++k) ft.at(k, 0) = 1.0;  // all classes identical
    Tensor f({n, d});
    for (int i = 0; i < n; ++i) f.at(i, 0) = 1.0;
    const auto res = dfa::align_scores(constant(f), ft, 0.01);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < c; ++k) CHECK(res.probs->value.at(i, k) == 0.25);
}

TEST_CASE("align_scores: cos 1 vs cos 0 at tau 0.01 saturates per the closed form") {
    const int d = 4, c = 3;
    Tensor ft({c, d});
    ft.at(0, 0) = 1.0;
    ft.at(1, 1) = 1.0;
    ft.at(2, 2) = 1.0;
    Tensor f({1, d});
    f.at(0, 0) = 1.0;  // aligned with class 0
    const auto res = dfa::align_scores(constant(f), ft, 0.01);
    CHECK(res.logits->value.at(0, 0) == doctest::Approx(100.0).epsilon(1e-12));
    // independent evaluation of e^100 / (e^100 + (C-1)); the correction term
    // 2e^-100 is below double epsilon, so the probability rounds to exactly 1
    const double expected = 1.0 / (1.0 + (c - 1) * std::exp(-100.0));
    CHECK(res.probs->value.at(0, 0) == expected);
    CHECK(res.probs->value.at(0, 0) == 1.0);
    CHECK(res.probs->value.at(0, 1) < 1e-43);
    CHECK(res.probs->value.at(0, 1) > 0.0);
}

TEST_CASE("align_scores: temperature changes probabilities, never the argmax") {
    Rng rng(8);
    const int n = 5, d = 6, c = 4;
    const Tensor f = random_unit_rows(n, d, rng);
    const Tensor ft = random_unit_rows(c, d, rng);
    const auto base = dfa::predicted_classes(dfa::align_scores(constant(f), ft, 0.01).logits->value);
    for (double tau : {0.005, 0.07, 1.0, 250.0}) {
        const auto res = dfa::align_scores(constant(f), ft, tau);
        CHECK(dfa::predicted_classes(res.logits->value) == base);
    }
    CHECK_THROWS_AS(dfa::align_scores(constant(f), ft, 0.0), ConfigError);
    CHECK_THROWS_AS(dfa::align_scores(constant(f), ft, -1.0), ConfigError);
}

TEST_CASE("align_scores: probabilities are non-negative rows summing to one") {
    Rng rng(12);
    const auto res =
        dfa::align_scores(constant(random_unit_rows(6, 5, rng)), random_unit_rows(3, 5, rng), 0.01);
    for (int i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (int k = 0; k < 3; ++k) {
            CHECK(res.probs->value.at(i, k) >= 0.0);
            sum += res.probs->value.at(i, k);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("classify: fixed lambda=1 repeats the zero-shot video scores N times") {
    ParamStore ps;
    Rng rng(6);
    const int n = 4, dq = 3, d = 16;
    auto cfg = backend::BackendConfig{};
    const auto vocab = backend::build_vocabulary(
        {{"red_slide", {"a red square that slides sideways"}, false},
         {"green_rise", {"a green square that rises upward"}, true}},
        cfg);
    auto proj = make_linear(ps, "proj", dq, cfg.feature_dim, rng);
    auto fusion = dfa::make_fusion(ps, "dfa", n, dfa::FusionMode::fixed, 1.0);
    Tensor f_v({cfg.feature_dim});
    for (int j = 0; j < cfg.feature_dim; ++j) f_v.at(j) = vocab.text_features.at(0, j);

    const Var q = constant(Tensor::randn({n, dq}, rng, 1.0));
    const auto logits = dfa::classify(q, f_v, vocab, fusion, proj, 0.01);
    auto single_fusion = dfa::make_fusion(ps, "dfa1", 1, dfa::FusionMode::fixed, 1.0);
    const auto reference =
        dfa::classify(constant(Tensor({1, dq}, 0.0)), f_v, vocab, single_fusion, proj, 0.01);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < vocab.size(); ++k)
            CHECK(logits->value.at(i, k) == reference->value.at(0, k));
    CHECK(dfa::predicted_classes(logits->value) == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("classify: permuting vocabulary classes permutes logit columns bitwise") {
    ParamStore ps;
    Rng rng(7);
    const int n = 3, dq = 4;
    auto cfg = backend::BackendConfig{};
    const std::vector<dfa::VocabEntry> entries = {
        {"red_slide", {"a red square that slides sideways"}, false},
        {"green_rise", {"a green square that rises upward"}, false},
        {"blue_drift", {"a blue square that drifts diagonally"}, true},
    };
    const auto vocab = backend::build_vocabulary(entries, cfg);
    const auto permuted = backend::build_vocabulary({entries[2], entries[0], entries[1]}, cfg);

    auto proj = make_linear(ps, "proj", dq, cfg.feature_dim, rng);
    auto fusion = dfa::make_fusion(ps, "dfa", n);
    for (int i = 0; i < n; ++i) fusion.lambda_raw->value.at(i) = 0.3 * rng.gaussian();
    Tensor f_v({cfg.feature_dim});
    f_v.at(3) = 1.0;
    const Var q = constant(Tensor::randn({n, dq}, rng, 1.0));

    const auto a = dfa::classify(q, f_v, vocab, fusion, proj, 0.01);
    const auto b = dfa::classify(q, f_v, permuted, fusion, proj, 0.01);
    const int perm[3] = {1, 2, 0};  // original column c sits at perm[c] in the permuted vocab
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) CHECK(a->value.at(i, c) == b->value.at(i, perm[c]));
}

TEST_CASE("classify: cross-entropy gradient matches finite differences") {
    Rng rng(9);
    const int n = 3, dq = 4, d = 5, c = 3;
    Tensor f_v({d});
    double norm = 0.0;
    for (int j = 0; j < d; ++j) {
        f_v.at(j) = rng.gaussian();
        norm += f_v.at(j) * f_v.at(j);
    }
    for (int j = 0; j < d; ++j) f_v.at(j) /= std::sqrt(norm);
    const Tensor ft = random_unit_rows(c, d, rng);

    const std::vector<Tensor> inputs = {Tensor::randn({n, dq}, rng, 0.8),
                                        xavier_uniform(d, dq, rng), Tensor::randn({d}, rng, 0.1),
                                        Tensor::randn({n}, rng, 0.4)};
    const double err = omtest::max_rel_grad_error(inputs, [&](const std::vector<Var>& leaves) {
        Linear proj{leaves[1], leaves[2]};
        dfa::FusionParams fusion;
        fusion.lambda_raw = leaves[3];
        Var fused = dfa::dynamic_fuse(leaves[0], f_v, fusion, proj);
        Var logits = dfa::align_scores(fused, ft, 0.07).logits;
        return cross_entropy_rows(logits, {0, 2, 1});
    });
    CHECK(err < 1e-4);
}

TEST_CASE("classify: margin sign follows f_v between two symmetric classes") {
    ParamStore ps;
    const int n = 1, dq = 2, d = 4;
    auto proj = make_linear_zero(ps, "proj", dq, d);
    auto fusion = dfa::make_fusion(ps, "dfa", n, dfa::FusionMode::fixed, 1.0);
    Tensor ft({2, d});
    ft.at(0, 0) = 1.0;
    ft.at(1, 1) = 1.0;
    dfa::Vocabulary vocab;
    vocab.classes = {{"a", {"pa"}, false}, {"b", {"pb"}, false}};
    vocab.text_features = ft;
    const Var q = constant(Tensor({n, dq}, 0.0));

    const auto la = dfa::classify(q, axis(d, 0), vocab, fusion, proj, 0.01);
    const auto lb = dfa::classify(q, axis(d, 1), vocab, fusion, proj, 0.01);
    CHECK(la->value.at(0, 0) - la->value.at(0, 1) > 0.0);
    CHECK(lb->value.at(0, 0) - lb->value.at(0, 1) < 0.0);
    CHECK(la->value.at(0, 0) - la->value.at(0, 1) ==
          doctest::Approx(-(lb->value.at(0, 0) - lb->value.at(0, 1))).epsilon(1e-12));
}
