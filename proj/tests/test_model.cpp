#include "aegru/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace aegru;
using aegru::testutil::max_rel_err;
using aegru::testutil::random_matrix;

namespace {

// Independent scalar-loop GRU step, written straight from the update
// equations: r = sig(Wir x + bir + Whr h + bhr), u likewise,
// c = tanh(Wic x + bic + r .* (Whc h + bhc)), h' = (1-u) c + u h.
Matrix gru_step_oracle(const Matrix& x, const Matrix& h, const GruCellParams& g) {
    const std::size_t hidden = g.hidden_size();
    Matrix out(1, hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
        double a_ir = g.b_ir(0, j), a_iu = g.b_iu(0, j), a_ic = g.b_ic(0, j);
        for (std::size_t i = 0; i < g.input_size(); ++i) {
            a_ir += x(0, i) * g.w_ir(i, j);
            a_iu += x(0, i) * g.w_iu(i, j);
            a_ic += x(0, i) * g.w_ic(i, j);
        }
        double a_hr = g.b_hr(0, j), a_hu = g.b_hu(0, j), a_hc = g.b_hc(0, j);
        for (std::size_t i = 0; i < hidden; ++i) {
            a_hr += h(0, i) * g.w_hr(i, j);
            a_hu += h(0, i) * g.w_hu(i, j);
            a_hc += h(0, i) * g.w_hc(i, j);
        }
        const double r = 1.0 / (1.0 + std::exp(-(a_ir + a_hr)));
        const double u = 1.0 / (1.0 + std::exp(-(a_iu + a_hu)));
        const double c = std::tanh(a_ic + r * a_hc);
        out(0, j) = (1.0 - u) * c + u * h(0, j);
    }
    return out;
}

GruCellParams random_gru(std::size_t in, std::size_t hidden, RngStream& rng, double span) {
    GruCellParams g;
    detail::init_gru_shapes(g, in, hidden);
    for (Matrix* m : {&g.w_ir, &g.w_iu, &g.w_ic, &g.w_hr, &g.w_hu, &g.w_hc, &g.b_ir, &g.b_iu,
                      &g.b_ic, &g.b_hr, &g.b_hu, &g.b_hc})
        uniform_fill(*m, rng, -span, span);
    return g;
}

}  // namespace

TEST(Model, InitIsDeterministicAndBounded) {
    const ModelConfig cfg{96, 32, 32, 32};
    AegruParams a = init_params(cfg, 5);
    AegruParams b = init_params(cfg, 5);
    for (std::size_t i = 0; i < tensor_refs(a).size(); ++i)
        EXPECT_EQ(*tensor_refs(a)[i].tensor, *tensor_refs(b)[i].tensor);

    EXPECT_EQ(a.fc_up.w.size(), 96u * 32u);
    for (const TensorRef& ref : tensor_refs(a)) {
        const std::string name = ref.name;
        if (!(name.ends_with(".weight") || name.starts_with("gru.w_"))) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(ref.tensor->rows()));
        EXPECT_LE(max_abs(*ref.tensor), bound) << name;
    }
    EXPECT_EQ(max_abs(a.fc_up.b), 0.0);
    EXPECT_EQ(a.bn.scale, Matrix::filled(1, 32, 1.0));
    EXPECT_EQ(a.bn.running_var, Matrix::filled(1, 32, 1.0));

    AegruParams c = init_params(cfg, 6);
    EXPECT_NE(a.fc_up.w, c.fc_up.w);
}

TEST(Model, BackboneParamCount) {
    EXPECT_EQ(backbone_param_count({96, 32, 32, 32}), 9570u);
}

TEST(Model, GruStepZeroWeightCases) {
    RngStream rng(1);
    GruCellParams g = random_gru(3, 4, rng, 0.0);  // all zeros
    Matrix x = random_matrix(1, 3, rng);
    Matrix h = random_matrix(1, 4, rng);
    // r = u = 0.5 and c = 0, so the update halves the previous state.
    EXPECT_LT(max_abs(sub(gru_step(x, h, g), scale(h, 0.5))), 1e-15);
    EXPECT_EQ(gru_step(x, Matrix(1, 4), g), Matrix(1, 4));
}

TEST(Model, GruStepMatchesScalarOracle) {
    RngStream rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        GruCellParams g = random_gru(4, 4, rng, 1.0);
        Matrix x = random_matrix(1, 4, rng, -2.0, 2.0);
        Matrix h = random_matrix(1, 4, rng, -1.0, 1.0);
        EXPECT_LT(max_abs(sub(gru_step(x, h, g), gru_step_oracle(x, h, g))), 1e-12);
    }
}

TEST(Model, HiddenStateStaysInUnitBox) {
    RngStream rng(3);
    GruCellParams g = random_gru(6, 5, rng, 2.0);
    Matrix h(1, 5);  // zero initial state
    for (int step = 0; step < 1000; ++step) {
        Matrix x = random_matrix(1, 6, rng, -5.0, 5.0);
        h = gru_step(x, h, g);
        ASSERT_LE(max_abs(h), 1.0);
    }
}

TEST(Model, EncodeInferenceWithIdentityBnIsAffine) {
    const ModelConfig cfg{5, 3, 3, 3};
    AegruParams p = init_params(cfg, 7);
    RngStream rng(4);
    Matrix x = random_matrix(4, 5, rng);
    const Matrix expected = add_row_broadcast(matmul(x, p.fc_up.w), p.fc_up.b);
    const Matrix got = encode(std::as_const(p), x);
    EXPECT_LT(max_abs(sub(got, expected)), 1e-4);  // off only by the bn epsilon
}

TEST(Model, EncodeTrainingIdenticalRowsGiveShift) {
    const ModelConfig cfg{5, 3, 3, 3};
    AegruParams p = init_params(cfg, 8);
    RngStream rng(5);
    uniform_fill(p.bn.shift, rng, -1.0, 1.0);
    Matrix one_row = random_matrix(1, 5, rng);
    Matrix x(6, 5);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 5; ++j) x(i, j) = one_row(0, j);
    const Matrix got = encode(p, x, BnMode::kTraining);
    for (std::size_t i = 0; i < got.rows(); ++i)
        for (std::size_t j = 0; j < got.cols(); ++j)
            EXPECT_NEAR(got(i, j), p.bn.shift(0, j), 1e-9);
}

TEST(Model, EncodeTrainingUpdatesRunningStats) {
    const ModelConfig cfg{5, 3, 3, 3};
    AegruParams p = init_params(cfg, 9);
    RngStream rng(6);
    Matrix x = random_matrix(8, 5, rng);
    const Matrix rm_before = p.bn.running_mean;
    encode(p, x, BnMode::kTraining);
    EXPECT_NE(p.bn.running_mean, rm_before);
}

TEST(Model, EncodeGradientMatchesFiniteDifferences) {
    const ModelConfig cfg{4, 3, 3, 3};
    AegruParams p = init_params(cfg, 10);
    RngStream rng(7);
    Matrix x = random_matrix(5, 4, rng);

    auto eval = [&] {
        Tape t;
        AegruParams local = p;  // running stats must not leak between evals
        GraphLeaves lv = make_leaves(t, local);
        Var pre = add_bias(matmul(t.leaf(x), lv.of(kFcUpW)), lv.of(kFcUpB));
        Var mu = t.batchnorm(pre, lv.of(kBnScale), lv.of(kBnShift), local.bn.running_mean,
                             local.bn.running_var, true);
        return t.value(sum(hadamard(mu, mu)))(0, 0);
    };

    Tape t;
    AegruParams local = p;
    GraphLeaves lv = make_leaves(t, local);
    Var pre = add_bias(matmul(t.leaf(x), lv.of(kFcUpW)), lv.of(kFcUpB));
    Var mu = t.batchnorm(pre, lv.of(kBnScale), lv.of(kBnShift), local.bn.running_mean,
                         local.bn.running_var, true);
    t.backward(sum(hadamard(mu, mu)));

    for (std::size_t idx : {kFcUpW, kFcUpB, kBnScale, kBnShift}) {
        const Matrix analytic = t.grad(lv.of(idx));
        const Matrix fd = aegru::testutil::finite_diff(*tensor_refs(p)[idx].tensor, eval);
        EXPECT_LT(max_rel_err(analytic, fd), 1e-4) << tensor_refs(p)[idx].name;
    }
}

TEST(Model, InferZeroWeightsGiveDownstreamBias) {
    const ModelConfig cfg{4, 3, 3, 3};
    AegruParams p = init_params(cfg, 11);
    for (const TensorRef& ref : tensor_refs(p))
        if (std::string(ref.name).ends_with("weight") || std::string(ref.name).starts_with("gru.w_"))
            *ref.tensor = Matrix(ref.tensor->rows(), ref.tensor->cols());
    p.fc_down.b = Matrix::from_rows({{0.25, -0.75}});
    RngStream rng(8);
    const auto v = infer(p, random_matrix(2, 4, rng));
    EXPECT_DOUBLE_EQ(v[0], 0.25);
    EXPECT_DOUBLE_EQ(v[1], -0.75);
}

TEST(Model, InferMatchesCompositionalOracle) {
    const ModelConfig cfg{6, 4, 5, 3};
    AegruParams p = init_params(cfg, 12);
    RngStream rng(9);
    uniform_fill(p.bn.running_mean, rng, -0.5, 0.5);
    uniform_fill(p.bn.running_var, rng, 0.5, 2.0);
    Matrix x = random_matrix(4, 6, rng);  // n = 4 steps

    // Chain the public pieces one step at a time.
    const Matrix latent = encode(std::as_const(p), x);
    Matrix h(1, cfg.c_h);
    for (std::size_t t = 0; t < 4; ++t)
        h = gru_step(slice_rows(latent, t, t + 1), h, p.gru);
    const Matrix v_oracle = add_row_broadcast(matmul(h, p.fc_down.w), p.fc_down.b);

    const auto v = infer(p, x);
    EXPECT_NEAR(v[0], v_oracle(0, 0), 1e-12);
    EXPECT_NEAR(v[1], v_oracle(0, 1), 1e-12);

    // Single-step composition for n = 1.
    Matrix x1 = random_matrix(1, 6, rng);
    const Matrix l1 = encode(std::as_const(p), x1);
    const Matrix h1 = gru_step(l1, Matrix(1, cfg.c_h), p.gru);
    const Matrix v1 = add_row_broadcast(matmul(h1, p.fc_down.w), p.fc_down.b);
    const auto got1 = infer(p, x1);
    EXPECT_NEAR(got1[0], v1(0, 0), 1e-12);
    EXPECT_NEAR(got1[1], v1(0, 1), 1e-12);
}

TEST(Model, BatchedInferMatchesPerWindow) {
    const ModelConfig cfg{5, 4, 4, 4};
    AegruParams p = init_params(cfg, 13);
    RngStream rng(10);
    const std::size_t n_steps = 3, batch = 7;
    std::vector<Matrix> windows;
    for (std::size_t b = 0; b < batch; ++b) windows.push_back(random_matrix(n_steps, 5, rng));
    Matrix stack(batch * n_steps, 5);
    for (std::size_t t = 0; t < n_steps; ++t)
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < 5; ++c) stack(t * batch + b, c) = windows[b](t, c);

    const Matrix v = infer_batch(p, stack, batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto single = infer(p, windows[b]);
        EXPECT_NEAR(v(b, 0), single[0], 1e-12);
        EXPECT_NEAR(v(b, 1), single[1], 1e-12);
    }
}

TEST(Model, AuxForwardBasics) {
    const ModelConfig cfg{5, 4, 4, 4};
    AegruParams p = init_params(cfg, 14);
    RngStream rng(11);
    Matrix x = random_matrix(3, 5, rng);

    const AuxForward a1 = aux_forward(p, x, 42);
    const AuxForward a2 = aux_forward(p, x, 42);
    EXPECT_EQ(a1.r_hat, a2.r_hat);
    EXPECT_EQ(a1.v[0], a2.v[0]);
    const AuxForward a3 = aux_forward(p, x, 43);
    EXPECT_NE(a1.r_hat, a3.r_hat);

    for (std::size_t k = 0; k < a1.r_hat.size(); ++k) EXPECT_GT(a1.r_hat.at_flat(k), 0.0);
    EXPECT_EQ(a1.mu_f.rows(), 3u);
    EXPECT_EQ(a1.log_var_f.rows(), 3u);
}

TEST(Model, AuxForwardZeroVarianceMatchesInfer) {
    const ModelConfig cfg{5, 4, 4, 4};
    AegruParams p = init_params(cfg, 15);
    p.fc2.w = Matrix(cfg.c_sigma, cfg.c_f);
    p.fc2.b = Matrix::filled(1, cfg.c_f, -1e9);  // log-variance clamps at -40
    RngStream rng(12);
    Matrix x = random_matrix(3, 5, rng);
    const AuxForward aux = aux_forward(p, x, 7);
    const auto v = infer(p, x);
    EXPECT_NEAR(aux.v[0], v[0], 1e-8);
    EXPECT_NEAR(aux.v[1], v[1], 1e-8);
}

// With bn neutralized and the variance clamped to zero, wiring fc3 as the
// pseudo-inverse of fc_up reconstructs rates exp(x * W_up * pinv(W_up)).
TEST(Model, AuxReconstructionRecoversPseudoInverse) {
    const ModelConfig cfg{5, 3, 3, 3};
    AegruParams p = init_params(cfg, 16);
    p.bn.running_mean = Matrix(1, 3);
    p.bn.running_var = Matrix::filled(1, 3, 1.0 - 1e-5);  // istd exactly 1
    p.fc2.w = Matrix(cfg.c_sigma, cfg.c_f);
    p.fc2.b = Matrix::filled(1, cfg.c_f, -1e9);
    p.fc3.b = Matrix(1, 5);

    // pinv(W) = (W^T W)^{-1} W^T for the full-column-rank 5x3 W, via
    // Gauss-Jordan on the 3x3 Gram matrix.
    const Matrix w = p.fc_up.w;
    const Matrix gram = matmul(transpose(w), w);
    Matrix aug(3, 6);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) aug(i, j) = gram(i, j);
        aug(i, 3 + i) = 1.0;
    }
    for (std::size_t col = 0; col < 3; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < 3; ++r)
            if (std::abs(aug(r, col)) > std::abs(aug(pivot, col))) pivot = r;
        for (std::size_t j = 0; j < 6; ++j) std::swap(aug(col, j), aug(pivot, j));
        const double d = aug(col, col);
        ASSERT_GT(std::abs(d), 1e-12);
        for (std::size_t j = 0; j < 6; ++j) aug(col, j) /= d;
        for (std::size_t r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double f = aug(r, col);
            for (std::size_t j = 0; j < 6; ++j) aug(r, j) -= f * aug(col, j);
        }
    }
    Matrix gram_inv(3, 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) gram_inv(i, j) = aug(i, 3 + j);
    p.fc3.w = matmul(gram_inv, transpose(w));  // 3 x 5

    RngStream rng(13);
    Matrix x = random_matrix(2, 5, rng, -1.0, 1.0);
    const AuxForward aux = aux_forward(p, x, 3);
    const Matrix expected = exp(matmul(matmul(x, w), p.fc3.w));
    EXPECT_LT(max_abs(sub(aux.r_hat, expected)), 1e-6);
}

TEST(Model, ConfigValidation) {
    EXPECT_THROW(init_params({0, 32, 32, 32}, 1), ConfigError);
    EXPECT_THROW(init_params({96, 32, 0, 32}, 1), ConfigError);
}
