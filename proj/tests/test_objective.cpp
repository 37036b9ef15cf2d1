#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"
#include "trml/trml.hpp"

using namespace trml;

namespace {

Matrix random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    return seeded_gaussian(rng, n, d, 0.0, 1.0);
}

}  // namespace

TEST_CASE("cosine matrix: orthonormal rows give the identity") {
    Matrix a(3, 3);
    a(0, 0) = 1.0;
    a(1, 1) = 1.0;
    a(2, 2) = 1.0;
    Matrix s = cosine_similarity_matrix(a, a);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            REQUIRE(s(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-15));
}

TEST_CASE("cosine matrix: hand value 1/sqrt(2)") {
    Matrix a = Matrix::row({1.0, 1.0});
    Matrix b = Matrix::row({1.0, 0.0});
    Matrix s = cosine_similarity_matrix(a, b);
    REQUIRE(s(0, 0) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("cosine matrix: scale invariance and zero-norm error") {
    Matrix a = random_rows(4, 6, 1);
    Matrix b = random_rows(4, 6, 2);
    Matrix s1 = cosine_similarity_matrix(a, b);
    Matrix a2 = a;
    for (std::size_t j = 0; j < a2.cols(); ++j) a2(1, j) *= 2.0;
    Matrix s2 = cosine_similarity_matrix(a2, b);
    for (std::size_t k = 0; k < s1.size(); ++k)
        REQUIRE(s1[k] == Catch::Approx(s2[k]).margin(1e-12));

    Matrix with_zero = a;
    for (std::size_t j = 0; j < with_zero.cols(); ++j) with_zero(2, j) = 0.0;
    REQUIRE_THROWS_WITH(cosine_similarity_matrix(with_zero, b),
                        Catch::Matchers::ContainsSubstring("row 2"));
}

TEST_CASE("normalize_similarity: uniform for constant scores") {
    Matrix s(2, 2);  // all zeros
    NormalizedSimilarities ns = normalize_similarity(s, 0.5);
    for (std::size_t k = 0; k < 4; ++k) {
        REQUIRE(ns.y_row[k] == Catch::Approx(0.5).margin(1e-15));
        REQUIRE(ns.y_col[k] == Catch::Approx(0.5).margin(1e-15));
    }
}

TEST_CASE("normalize_similarity: identity scores at tau 0.5") {
    Matrix s(2, 2);
    s(0, 0) = 1.0;
    s(1, 1) = 1.0;
    NormalizedSimilarities ns = normalize_similarity(s, 0.5);
    const double expect = std::exp(2.0) / (std::exp(2.0) + 1.0);  // 0.88079...
    REQUIRE(ns.y_row(0, 0) == Catch::Approx(expect).epsilon(1e-9));
    REQUIRE(ns.y_row(1, 1) == Catch::Approx(expect).epsilon(1e-9));
    REQUIRE(ns.y_col(0, 0) == Catch::Approx(expect).epsilon(1e-9));
}

TEST_CASE("normalize_similarity: rows/columns sum to one for random scores") {
    Rng rng(71);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng.below(6);
        // cosine-range scores; extreme score/temperature ratios saturate in fp
        Matrix s(n, n);
        for (std::size_t k = 0; k < s.size(); ++k) s[k] = rng.uniform(-1.0, 1.0);
        const double tau = rng.uniform(0.1, 1.0);
        NormalizedSimilarities ns = normalize_similarity(s, tau);
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0, col = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row += ns.y_row(i, j);
                col += ns.y_col(j, i);
                REQUIRE(ns.y_row(i, j) > 0.0);
                REQUIRE(ns.y_row(i, j) < 1.0);
            }
            REQUIRE(row == Catch::Approx(1.0).margin(1e-9));
            REQUIRE(col == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("normalize_similarity: N < 2 rejected") {
    Matrix s(1, 1, 1.0);
    REQUIRE_THROWS_AS(normalize_similarity(s, 0.5), numeric_error);
}

TEST_CASE("sml pair: identical embeddings give exactly ln N") {
    for (std::size_t n : {2u, 4u, 8u}) {
        Matrix rows(n, 5);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < 5; ++j) rows(i, j) = 0.3 * (j + 1);
        const double loss = semantic_matching_loss_pair(rows, rows, 0.37);
        REQUIRE(loss == Catch::Approx(std::log(static_cast<double>(n))).margin(1e-9));
    }
}

TEST_CASE("sml pair: orthonormal pair at tau 0.5 gives ln(1+e^-2)") {
    Matrix a(2, 2);
    a(0, 0) = 1.0;
    a(1, 1) = 1.0;
    const double loss = semantic_matching_loss_pair(a, a, 0.5);
    REQUIRE(loss == Catch::Approx(0.1269280110429726).margin(1e-9));
}

TEST_CASE("sml pair: swapping original and virtual leaves the loss unchanged") {
    Matrix a = random_rows(5, 7, 11);
    Matrix b = random_rows(5, 7, 12);
    const double lab = semantic_matching_loss_pair(a, b, 0.3);
    const double lba = semantic_matching_loss_pair(b, a, 0.3);
    REQUIRE(lab == Catch::Approx(lba).margin(1e-12));
}

TEST_CASE("sml pair: invariant to per-vector positive rescaling") {
    Matrix a = random_rows(6, 4, 21);
    Matrix b = random_rows(6, 4, 22);
    const double base = semantic_matching_loss_pair(a, b, 0.2);
    Rng rng(23);
    Matrix a2 = a, b2 = b;
    for (std::size_t i = 0; i < 6; ++i) {
        const double sa = rng.uniform(0.1, 10.0);
        const double sb = rng.uniform(0.1, 10.0);
        for (std::size_t j = 0; j < 4; ++j) {
            a2(i, j) *= sa;
            b2(i, j) *= sb;
        }
    }
    REQUIRE(semantic_matching_loss_pair(a2, b2, 0.2) == Catch::Approx(base).margin(1e-9));
}

TEST_CASE("sml pair: invariant under a joint row permutation") {
    Matrix a = random_rows(6, 4, 31);
    Matrix b = random_rows(6, 4, 32);
    const double base = semantic_matching_loss_pair(a, b, 0.4);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Matrix ap(6, 4), bp(6, 4);
    for (std::size_t i = 0; i < 6; ++i) {
        ap.set_row(i, a.extract_row(perm[i]));
        bp.set_row(i, b.extract_row(perm[i]));
    }
    REQUIRE(semantic_matching_loss_pair(ap, bp, 0.4) == Catch::Approx(base).margin(1e-9));
}

TEST_CASE("sml pair: non-negative") {
    Rng rng(44);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix a = seeded_gaussian(rng, 4, 6, 0.0, 1.0);
        Matrix b = seeded_gaussian(rng, 4, 6, 0.0, 1.0);
        REQUIRE(semantic_matching_loss_pair(a, b, rng.uniform(0.05, 1.0)) >= 0.0);
    }
}

TEST_CASE("combine_sml: weighted blend and range checks") {
    REQUIRE(combine_sml(1.0, 2.0, 0.1) == Catch::Approx(1.9).margin(1e-15));
    REQUIRE(combine_sml(3.3, 3.3, 0.7) == Catch::Approx(3.3).margin(1e-12));
    REQUIRE_THROWS_AS(combine_sml(1.0, 2.0, 0.0), config_error);
    REQUIRE_THROWS_AS(combine_sml(1.0, 2.0, 1.0), config_error);
}

TEST_CASE("apply_ablation: scalar compositions") {
    REQUIRE(apply_ablation(1.0, 2.0, 0.1, Ablation::none) == Catch::Approx(1.9));
    REQUIRE(apply_ablation(1.0, 2.0, 0.1, Ablation::no_sml_text) == Catch::Approx(1.8));
    REQUIRE(apply_ablation(1.0, 2.0, 0.1, Ablation::no_sml_visual) == Catch::Approx(0.1));
    REQUIRE(apply_ablation(1.0, 2.0, 0.1, Ablation::no_sml) == 0.0);
}

TEST_CASE("task loss: regression L1 values") {
    ParamStore ps;
    Graph g(&ps);
    Var perfect = g.constant(Matrix(2, 1, 1.0));
    REQUIRE(g.scalar(task_loss(g, perfect, {1.0, 1.0}, Task::regression, TaskLoss::l1, 0)) ==
            0.0);

    Matrix p(2, 1);
    p(0, 0) = 0.0;
    p(1, 0) = 3.0;
    Var preds = g.constant(p);
    REQUIRE(g.scalar(task_loss(g, preds, {1.0, 1.0}, Task::regression, TaskLoss::l1, 0)) ==
            Catch::Approx(1.5).margin(1e-15));
    REQUIRE(g.scalar(task_loss(g, preds, {1.0, 1.0}, Task::regression, TaskLoss::mse, 0)) ==
            Catch::Approx((1.0 + 4.0) / 2.0).margin(1e-15));
}

TEST_CASE("task loss: uniform logits over 3 classes give ln 3") {
    ParamStore ps;
    Graph g(&ps);
    Var logits = g.constant(Matrix(4, 3, 0.0));
    const double loss =
        g.scalar(task_loss(g, logits, {0.0, 1.0, 2.0, 0.0}, Task::classification,
                           TaskLoss::l1, 3));
    REQUIRE(loss == Catch::Approx(1.0986122886681098).margin(1e-12));

    REQUIRE_THROWS_AS(
        task_loss(g, logits, {0.0, 3.0, 1.0, 0.0}, Task::classification, TaskLoss::l1, 3),
        data_error);
}

TEST_CASE("total objective: arithmetic, sub-batch rule and ablation equivalence") {
    SyntheticConfig cfg;
    cfg.d = 8;
    cfg.latent_k = 2;
    cfg.n_frames = 2;
    cfg.train_size = 8;
    cfg.valid_size = 1;
    cfg.test_size = 1;
    cfg.seed = 3;
    EmbeddingDataset ds = generate_synthetic(cfg);
    ModelMeta meta = ModelMeta::for_dataset(ds);
    meta.alpha = 0.5;
    meta.lambda = 0.1;
    ParamStore ps = init_params(meta, 0.1, 3);

    // launches with >= 2 complete samples: total = task + alpha * sml
    Batch b = testsupport::mixed_batch(ds, 6, 3);
    {
        Graph g(&ps);
        BatchForward fwd = forward_batch(g, b);
        ObjectiveResult obj = total_objective(g, fwd, b, meta, temperature(g, true));
        REQUIRE(obj.breakdown.complete_count == 3);
        REQUIRE(obj.breakdown.sml ==
                Catch::Approx(combine_sml(obj.breakdown.sml_text, obj.breakdown.sml_visual,
                                          meta.lambda))
                    .margin(1e-12));
        REQUIRE(obj.breakdown.total ==
                Catch::Approx(obj.breakdown.task + meta.alpha * obj.breakdown.sml)
                    .margin(1e-12));
    }

    // single complete sample: matching term off, total == task
    Batch one = testsupport::mixed_batch(ds, 4, 1);
    {
        Graph g(&ps);
        BatchForward fwd = forward_batch(g, one);
        ObjectiveResult obj = total_objective(g, fwd, one, meta, temperature(g, true));
        REQUIRE(obj.breakdown.complete_count == 1);
        REQUIRE(obj.breakdown.sml == 0.0);
        REQUIRE(obj.breakdown.total == obj.breakdown.task);
    }

    // alpha = 0 reproduces the no_sml ablation objective exactly
    ModelMeta alpha0 = meta;
    alpha0.alpha = 0.0;
    double total_alpha0, total_no_sml;
    {
        Graph g(&ps);
        BatchForward fwd = forward_batch(g, b);
        total_alpha0 =
            total_objective(g, fwd, b, alpha0, temperature(g, true)).breakdown.total;
    }
    {
        Graph g(&ps);
        BatchForward fwd = forward_batch(g, b);
        total_no_sml =
            total_objective(g, fwd, b, meta, temperature(g, true), Ablation::no_sml)
                .breakdown.total;
    }
    REQUIRE(total_alpha0 == total_no_sml);
}

TEST_CASE("tape and plain similarity routes agree") {
    Matrix a = random_rows(5, 6, 61);
    Matrix b = random_rows(5, 6, 62);
    Matrix plain = cosine_similarity_matrix(a, b);
    Graph g;
    Matrix tape = g.value(cosine_similarity_matrix(g, g.constant(a), g.constant(b)));
    REQUIRE(plain.same_shape(tape));
    for (std::size_t k = 0; k < plain.size(); ++k)
        REQUIRE(plain[k] == Catch::Approx(tape[k]).margin(1e-12));
    for (double v : tape.data()) {
        REQUIRE(v <= 1.0 + 1e-12);
        REQUIRE(v >= -1.0 - 1e-12);
    }
}
