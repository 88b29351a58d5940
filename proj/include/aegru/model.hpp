#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aegru/errors.hpp"
#include "aegru/matrix.hpp"
#include "aegru/rng.hpp"
#include "aegru/tape.hpp"

// The AEGRU network. The inference backbone is FC -> batchnorm -> GRU -> FC:
// an upstream fully connected layer compresses the windowed input to a
// latent feature sequence, a single GRU layer consumes the sequence in
// causal order from a zero initial state, and a downstream fully connected
// layer maps the final hidden state to the 2-D velocity.
//
// Training adds an auxiliary branch that never ships: a two-layer head
// predicts the log-variance of the latent features, the latent is sampled
// with the reparameterization trick, and a third FC layer reconstructs
// firing rates from it via exp(). The upstream FC plus this branch form an
// autoencoder whose reconstruction loss regularizes the latent space.
// Inference feeds the latent mean straight to the GRU; sampling happens only
// while training.

namespace aegru {

struct ModelConfig {
    std::size_t c_i = 96;      // input channels
    std::size_t c_f = 32;      // latent features
    std::size_t c_h = 32;      // GRU hidden size
    std::size_t c_sigma = 32;  // hidden width of the variance head
};

inline void validate(const ModelConfig& cfg) {
    if (cfg.c_i < 1 || cfg.c_f < 1 || cfg.c_h < 1 || cfg.c_sigma < 1)
        throw ConfigError("model: all layer sizes must be >= 1");
}

struct LinearParams {
    Matrix w;  // in x out
    Matrix b;  // 1 x out
};

struct BnParams {
    Matrix scale, shift;               // learned, 1 x c_f
    Matrix running_mean, running_var;  // estimated, 1 x c_f
};

struct GruCellParams {
    Matrix w_ir, w_iu, w_ic;              // input x hidden
    Matrix w_hr, w_hu, w_hc;              // hidden x hidden
    Matrix b_ir, b_iu, b_ic;              // 1 x hidden
    Matrix b_hr, b_hu, b_hc;              // 1 x hidden

    std::size_t input_size() const { return w_ir.rows(); }
    std::size_t hidden_size() const { return w_ir.cols(); }
};

struct GruState {
    Matrix h;  // rows x c_h; one row per sequence in flight
};

struct QuantState {
    bool quantized = false;
    std::uint8_t bits = 8;
    std::uint8_t qf = 7;
};

struct AegruParams {
    ModelConfig cfg;
    LinearParams fc_up;    // c_i -> c_f
    BnParams bn;           // over c_f
    GruCellParams gru;     // c_f -> c_h
    LinearParams fc_down;  // c_h -> 2
    LinearParams fc1;      // c_i -> c_sigma   (variance head)
    LinearParams fc2;      // c_sigma -> c_f
    LinearParams fc3;      // c_f -> c_i       (rate reconstruction)
    std::map<std::string, Matrix> masks;  // 1 = keep, 0 = pruned; keyed by tensor name
    QuantState quant;
};

// The ablation variant: the GRU consumes the preprocessed input directly and
// only the downstream FC follows. No upstream FC, no batchnorm, no
// auxiliary branch.
struct VanillaGruParams {
    ModelConfig cfg;
    GruCellParams gru;     // c_i -> c_h
    LinearParams fc_down;  // c_h -> 2
};

// ---------------------------------------------------------------------------
// Generic tensor enumeration: one fixed order drives the optimizer, pruning,
// and the checkpoint layout.

struct TensorRef {
    const char* name;
    Matrix* tensor;
    bool trainable;
    bool prunable;  // weight matrices of the inference backbone
};

// Positions in tensor_refs(AegruParams&); the tape builders index leaves by
// these.
enum AegruTensor : std::size_t {
    kFcUpW = 0, kFcUpB, kBnScale, kBnShift, kBnRunMean, kBnRunVar,
    kGruWir, kGruWiu, kGruWic, kGruWhr, kGruWhu, kGruWhc,
    kGruBir, kGruBiu, kGruBic, kGruBhr, kGruBhu, kGruBhc,
    kFcDownW, kFcDownB, kFc1W, kFc1B, kFc2W, kFc2B, kFc3W, kFc3B,
    kAegruTensorCount,
};

inline std::vector<TensorRef> tensor_refs(AegruParams& p) {
    return {
        {"fc_up.weight", &p.fc_up.w, true, true},
        {"fc_up.bias", &p.fc_up.b, true, false},
        {"bn.scale", &p.bn.scale, true, false},
        {"bn.shift", &p.bn.shift, true, false},
        {"bn.running_mean", &p.bn.running_mean, false, false},
        {"bn.running_var", &p.bn.running_var, false, false},
        {"gru.w_ir", &p.gru.w_ir, true, true},
        {"gru.w_iu", &p.gru.w_iu, true, true},
        {"gru.w_ic", &p.gru.w_ic, true, true},
        {"gru.w_hr", &p.gru.w_hr, true, true},
        {"gru.w_hu", &p.gru.w_hu, true, true},
        {"gru.w_hc", &p.gru.w_hc, true, true},
        {"gru.b_ir", &p.gru.b_ir, true, false},
        {"gru.b_iu", &p.gru.b_iu, true, false},
        {"gru.b_ic", &p.gru.b_ic, true, false},
        {"gru.b_hr", &p.gru.b_hr, true, false},
        {"gru.b_hu", &p.gru.b_hu, true, false},
        {"gru.b_hc", &p.gru.b_hc, true, false},
        {"fc_down.weight", &p.fc_down.w, true, true},
        {"fc_down.bias", &p.fc_down.b, true, false},
        {"fc1.weight", &p.fc1.w, true, false},
        {"fc1.bias", &p.fc1.b, true, false},
        {"fc2.weight", &p.fc2.w, true, false},
        {"fc2.bias", &p.fc2.b, true, false},
        {"fc3.weight", &p.fc3.w, true, false},
        {"fc3.bias", &p.fc3.b, true, false},
    };
}

inline std::vector<TensorRef> tensor_refs(VanillaGruParams& p) {
    return {
        {"gru.w_ir", &p.gru.w_ir, true, true},
        {"gru.w_iu", &p.gru.w_iu, true, true},
        {"gru.w_ic", &p.gru.w_ic, true, true},
        {"gru.w_hr", &p.gru.w_hr, true, true},
        {"gru.w_hu", &p.gru.w_hu, true, true},
        {"gru.w_hc", &p.gru.w_hc, true, true},
        {"gru.b_ir", &p.gru.b_ir, true, false},
        {"gru.b_iu", &p.gru.b_iu, true, false},
        {"gru.b_ic", &p.gru.b_ic, true, false},
        {"gru.b_hr", &p.gru.b_hr, true, false},
        {"gru.b_hu", &p.gru.b_hu, true, false},
        {"gru.b_hc", &p.gru.b_hc, true, false},
        {"fc_down.weight", &p.fc_down.w, true, true},
        {"fc_down.bias", &p.fc_down.b, true, false},
    };
}

// ---------------------------------------------------------------------------
// Initialization: weights uniform on +-1/sqrt(fan_in), biases zero, bn at
// the identity transform. Each tensor draws from its own stream, in
// tensor_refs order, so layouts with shared shapes still get distinct
// values and the result is reproducible from the seed alone.

namespace detail {

inline void init_linear(LinearParams& lin, std::size_t in, std::size_t out) {
    lin.w = Matrix(in, out);
    lin.b = Matrix(1, out);
}

inline void init_gru_shapes(GruCellParams& gru, std::size_t in, std::size_t hidden) {
    for (Matrix* m : {&gru.w_ir, &gru.w_iu, &gru.w_ic}) *m = Matrix(in, hidden);
    for (Matrix* m : {&gru.w_hr, &gru.w_hu, &gru.w_hc}) *m = Matrix(hidden, hidden);
    for (Matrix* m : {&gru.b_ir, &gru.b_iu, &gru.b_ic, &gru.b_hr, &gru.b_hu, &gru.b_hc})
        *m = Matrix(1, hidden);
}

template <typename Params>
inline void fill_weights(Params& params, std::uint64_t seed) {
    auto refs = tensor_refs(params);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const std::string name = refs[i].name;
        if (name.ends_with(".weight") || name.starts_with("gru.w_")) {
            RngStream rng(seed, i);
            const double bound = 1.0 / std::sqrt(static_cast<double>(refs[i].tensor->rows()));
            uniform_fill(*refs[i].tensor, rng, -bound, bound);
        }
    }
}

}  // namespace detail

inline AegruParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    AegruParams p;
    p.cfg = cfg;
    detail::init_linear(p.fc_up, cfg.c_i, cfg.c_f);
    p.bn.scale = Matrix::filled(1, cfg.c_f, 1.0);
    p.bn.shift = Matrix(1, cfg.c_f);
    p.bn.running_mean = Matrix(1, cfg.c_f);
    p.bn.running_var = Matrix::filled(1, cfg.c_f, 1.0);
    detail::init_gru_shapes(p.gru, cfg.c_f, cfg.c_h);
    detail::init_linear(p.fc_down, cfg.c_h, 2);
    detail::init_linear(p.fc1, cfg.c_i, cfg.c_sigma);
    detail::init_linear(p.fc2, cfg.c_sigma, cfg.c_f);
    detail::init_linear(p.fc3, cfg.c_f, cfg.c_i);
    detail::fill_weights(p, seed);
    return p;
}

inline VanillaGruParams init_vanilla_params(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    VanillaGruParams p;
    p.cfg = cfg;
    detail::init_gru_shapes(p.gru, cfg.c_i, cfg.c_h);
    detail::init_linear(p.fc_down, cfg.c_h, 2);
    detail::fill_weights(p, seed);
    return p;
}

// ---------------------------------------------------------------------------
// Plain (tape-free) forward path, used for inference and evaluation. x and
// h may carry one row per sequence; every operation is row-wise, so the
// batched result equals the per-sequence one.

inline Matrix gru_step(const Matrix& x, const Matrix& h_prev, const GruCellParams& g) {
    const Matrix reset = sigmoid(add(add_row_broadcast(matmul(x, g.w_ir), g.b_ir),
                                     add_row_broadcast(matmul(h_prev, g.w_hr), g.b_hr)));
    const Matrix update = sigmoid(add(add_row_broadcast(matmul(x, g.w_iu), g.b_iu),
                                      add_row_broadcast(matmul(h_prev, g.w_hu), g.b_hu)));
    const Matrix gated = hadamard(reset, add_row_broadcast(matmul(h_prev, g.w_hc), g.b_hc));
    const Matrix cand = tanh(add(add_row_broadcast(matmul(x, g.w_ic), g.b_ic), gated));
    Matrix h_new(h_prev.rows(), h_prev.cols());
    for (std::size_t k = 0; k < h_new.size(); ++k) {
        const double u = update.at_flat(k);
        h_new.at_flat(k) = (1.0 - u) * cand.at_flat(k) + u * h_prev.at_flat(k);
    }
    return h_new;
}

enum class BnMode { kInference, kTraining };

namespace detail {

inline Matrix bn_apply(const Matrix& x, const Matrix& scale, const Matrix& shift,
                       const Matrix& mean, const Matrix& var, double eps = 1e-5) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        const double istd = 1.0 / std::sqrt(var(0, j) + eps);
        for (std::size_t i = 0; i < x.rows(); ++i)
            out(i, j) = scale(0, j) * (x(i, j) - mean(0, j)) * istd + shift(0, j);
    }
    return out;
}

}  // namespace detail

// Latent features of a (rows x c_i) input block. Training mode normalizes
// with batch statistics and folds them into the running estimates;
// inference mode applies the running estimates.
inline Matrix encode(AegruParams& p, const Matrix& x_prime, BnMode mode,
                     double momentum = 0.1) {
    const Matrix pre = add_row_broadcast(matmul(x_prime, p.fc_up.w), p.fc_up.b);
    if (mode == BnMode::kInference)
        return detail::bn_apply(pre, p.bn.scale, p.bn.shift, p.bn.running_mean,
                                p.bn.running_var);
    const std::size_t rows = pre.rows();
    if (rows == 0) throw ContractError("encode: empty batch in training mode");
    Matrix mean = scale(col_sums(pre), 1.0 / static_cast<double>(rows));
    Matrix var(1, pre.cols());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < pre.cols(); ++j) {
            const double d = pre(i, j) - mean(0, j);
            var(0, j) += d * d;
        }
    for (std::size_t j = 0; j < pre.cols(); ++j) var(0, j) /= static_cast<double>(rows);
    const double unbias =
        rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
    for (std::size_t j = 0; j < pre.cols(); ++j) {
        p.bn.running_mean(0, j) =
            (1.0 - momentum) * p.bn.running_mean(0, j) + momentum * mean(0, j);
        p.bn.running_var(0, j) =
            (1.0 - momentum) * p.bn.running_var(0, j) + momentum * unbias * var(0, j);
    }
    return detail::bn_apply(pre, p.bn.scale, p.bn.shift, mean, var);
}

inline Matrix encode(const AegruParams& p, const Matrix& x_prime) {
    const Matrix pre = add_row_broadcast(matmul(x_prime, p.fc_up.w), p.fc_up.b);
    return detail::bn_apply(pre, p.bn.scale, p.bn.shift, p.bn.running_mean, p.bn.running_var);
}

// Velocity prediction for a batch of windows stacked time-major
// ((batch * n) x c_i, row t*batch + b = sub-window t of window b). h0, when
// given, overrides the zero initial hidden state with one row per window.
inline Matrix infer_batch(const AegruParams& p, const Matrix& x_stack, std::size_t batch,
                          const Matrix* h0 = nullptr) {
    if (batch == 0 || x_stack.rows() % batch != 0)
        throw ContractError("infer_batch: stack rows not divisible by batch");
    const std::size_t steps = x_stack.rows() / batch;
    const Matrix latent = encode(p, x_stack);
    GruState state{h0 != nullptr ? *h0 : Matrix(batch, p.cfg.c_h)};
    for (std::size_t t = 0; t < steps; ++t)
        state.h = gru_step(slice_rows(latent, t * batch, (t + 1) * batch), state.h, p.gru);
    return add_row_broadcast(matmul(state.h, p.fc_down.w), p.fc_down.b);
}

// Single-window inference: the latent mean drives the GRU, no sampling.
inline std::array<double, 2> infer(const AegruParams& p, const Matrix& x_prime,
                                   const Matrix* h0 = nullptr) {
    const Matrix v = infer_batch(p, x_prime, 1, h0);
    return {v(0, 0), v(0, 1)};
}

inline Matrix infer_batch(const VanillaGruParams& p, const Matrix& x_stack,
                          std::size_t batch) {
    if (batch == 0 || x_stack.rows() % batch != 0)
        throw ContractError("infer_batch: stack rows not divisible by batch");
    const std::size_t steps = x_stack.rows() / batch;
    GruState state{Matrix(batch, p.cfg.c_h)};
    for (std::size_t t = 0; t < steps; ++t)
        state.h = gru_step(slice_rows(x_stack, t * batch, (t + 1) * batch), state.h, p.gru);
    return add_row_broadcast(matmul(state.h, p.fc_down.w), p.fc_down.b);
}

// ---------------------------------------------------------------------------
// Tape builders: the differentiable forward used for training. Leaves are
// created in tensor_refs order so gradients can be read back generically.

struct GraphLeaves {
    std::vector<Var> vars;  // aligned with tensor_refs order
    Var of(std::size_t tensor_index) const { return vars[tensor_index]; }
};

template <typename Params>
inline GraphLeaves make_leaves(Tape& tape, Params& params) {
    GraphLeaves leaves;
    for (const TensorRef& ref : tensor_refs(params)) leaves.vars.push_back(tape.leaf(*ref.tensor));
    return leaves;
}

namespace detail {

struct GruVars {
    Var w_ir, w_iu, w_ic, w_hr, w_hu, w_hc;
    Var b_ir, b_iu, b_ic, b_hr, b_hu, b_hc;
};

inline Var gru_step_tape(Tape& t, Var x, Var h_prev, const GruVars& g) {
    Var reset = sigmoid(add(linear(x, g.w_ir, g.b_ir), linear(h_prev, g.w_hr, g.b_hr)));
    Var update = sigmoid(add(linear(x, g.w_iu, g.b_iu), linear(h_prev, g.w_hu, g.b_hu)));
    Var cand = tanh(add(linear(x, g.w_ic, g.b_ic),
                        hadamard(reset, linear(h_prev, g.w_hc, g.b_hc))));
    // (1 - u) .* c + u .* h, written as c + u .* (h - c)
    return add(cand, hadamard(update, sub(h_prev, cand)));
}

}  // namespace detail

struct AegruGraph {
    Var v_hat;     // batch x 2
    Var r_hat;     // (batch*n) x c_i, strictly positive
    Var log_rate;  // pre-exp output of the reconstruction FC
    Var mu;        // latent mean after batchnorm
    Var log_var;   // latent log-variance
    Var latent;    // sampled latent fed to the GRU
};

// Differentiable AEGRU forward over a time-major window stack. The latent
// is always sampled here; inference goes through infer()/infer_batch().
inline AegruGraph aegru_forward_tape(Tape& t, const GraphLeaves& lv, AegruParams& params,
                                     const Matrix& x_stack, std::size_t batch,
                                     bool bn_training, RngStream& sampler) {
    if (batch == 0 || x_stack.rows() % batch != 0)
        throw ContractError("aegru_forward_tape: stack rows not divisible by batch");
    const std::size_t steps = x_stack.rows() / batch;

    Var x = t.constant(x_stack);
    Var pre = linear(x, lv.of(kFcUpW), lv.of(kFcUpB));
    Var mu = t.batchnorm(pre, lv.of(kBnScale), lv.of(kBnShift), params.bn.running_mean,
                         params.bn.running_var, bn_training);

    Var hidden1 = relu(linear(x, lv.of(kFc1W), lv.of(kFc1B)));
    Var log_var = linear(hidden1, lv.of(kFc2W), lv.of(kFc2B));

    Var latent = t.sample_gaussian(mu, log_var, sampler);

    const detail::GruVars gru{lv.of(kGruWir), lv.of(kGruWiu), lv.of(kGruWic), lv.of(kGruWhr),
                              lv.of(kGruWhu), lv.of(kGruWhc), lv.of(kGruBir), lv.of(kGruBiu),
                              lv.of(kGruBic), lv.of(kGruBhr), lv.of(kGruBhu), lv.of(kGruBhc)};
    Var h = t.constant(Matrix(batch, params.cfg.c_h));
    for (std::size_t step = 0; step < steps; ++step)
        h = detail::gru_step_tape(t, slice_rows(latent, step * batch, (step + 1) * batch), h,
                                  gru);
    Var v_hat = linear(h, lv.of(kFcDownW), lv.of(kFcDownB));

    Var log_rate = linear(latent, lv.of(kFc3W), lv.of(kFc3B));
    Var r_hat = exp(log_rate);

    return AegruGraph{v_hat, r_hat, log_rate, mu, log_var, latent};
}

inline Var vanilla_forward_tape(Tape& t, const GraphLeaves& lv, const VanillaGruParams& params,
                                const Matrix& x_stack, std::size_t batch) {
    if (batch == 0 || x_stack.rows() % batch != 0)
        throw ContractError("vanilla_forward_tape: stack rows not divisible by batch");
    const std::size_t steps = x_stack.rows() / batch;
    Var x = t.constant(x_stack);
    const detail::GruVars gru{lv.of(0), lv.of(1), lv.of(2),  lv.of(3),  lv.of(4),  lv.of(5),
                              lv.of(6), lv.of(7), lv.of(8), lv.of(9), lv.of(10), lv.of(11)};
    Var h = t.constant(Matrix(batch, params.cfg.c_h));
    for (std::size_t step = 0; step < steps; ++step)
        h = detail::gru_step_tape(t, slice_rows(x, step * batch, (step + 1) * batch), h, gru);
    return linear(h, lv.of(12), lv.of(13));
}

// Training-style forward pass over a single window, exposing the auxiliary
// branch outputs. Deterministic in the seed.
struct AuxForward {
    std::array<double, 2> v;
    Matrix r_hat;     // n x c_i
    Matrix mu_f;      // n x c_f
    Matrix log_var_f; // n x c_f
};

inline AuxForward aux_forward(AegruParams& p, const Matrix& x_prime, std::uint64_t seed,
                              BnMode bn_mode = BnMode::kInference) {
    Tape t;
    GraphLeaves lv = make_leaves(t, p);
    RngStream sampler(seed);
    AegruGraph g =
        aegru_forward_tape(t, lv, p, x_prime, 1, bn_mode == BnMode::kTraining, sampler);
    return AuxForward{{t.value(g.v_hat)(0, 0), t.value(g.v_hat)(0, 1)},
                      t.value(g.r_hat), t.value(g.mu), t.value(g.log_var)};
}

// Parameter count of the inference backbone (upstream FC, bn scale/shift,
// GRU, downstream FC). The auxiliary branch never ships and is excluded.
inline std::size_t backbone_param_count(const ModelConfig& cfg) {
    const std::size_t fc_up = cfg.c_i * cfg.c_f + cfg.c_f;
    const std::size_t bn = 2 * cfg.c_f;
    const std::size_t gru = 3 * cfg.c_f * cfg.c_h + 3 * cfg.c_h * cfg.c_h + 6 * cfg.c_h;
    const std::size_t fc_down = cfg.c_h * 2 + 2;
    return fc_up + bn + gru + fc_down;
}

}  // namespace aegru
