#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include "aegru/data.hpp"
#include "aegru/errors.hpp"
#include "aegru/matrix.hpp"
#include "aegru/metrics.hpp"
#include "aegru/model.hpp"
#include "aegru/preprocess.hpp"
#include "aegru/tape.hpp"

// Training: L = w_v * L_v + w_x * L_x, where L_v is the mean squared error
// of the velocity prediction and L_x the Poisson negative log-likelihood of
// the reconstructed rates against the raw (untransformed) window counts.
// Optimization is Adam with decoupled weight decay and per-epoch cosine
// annealing of the learning rate, over shuffled mini-batches for a fixed
// number of epochs; the validation split is scored every epoch but never
// steers training. Everything is deterministic in the config seed: the
// parameter init, the shuffle order and the latent sampler each own a
// derived stream.

namespace aegru {

struct TrainConfig {
    std::size_t epochs = 50;
    double lr = 0.001;
    double weight_decay = 0.001;
    std::size_t batch_size = 64;
    double w_v = 1.0;  // velocity loss weight
    double w_x = 1.0;  // reconstruction loss weight
    std::uint64_t seed = 1;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (cfg.w_v < 0.0 || cfg.w_x < 0.0)
        throw ConfigError("train: loss weights must be non-negative");
    if (!(cfg.weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
}

// ---------------------------------------------------------------------------
// Losses (plain values; the tape builders below mirror them).

// Mean over the batch of squared 2-norms of the residuals.
inline double mse_loss(const Matrix& v_hat, const Matrix& v) {
    detail::require_same_shape(v_hat, v, "mse_loss");
    if (v.rows() == 0) throw ContractError("mse_loss: empty batch");
    double s = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        const double d = v_hat.at_flat(k) - v.at_flat(k);
        s += d * d;
    }
    return s / static_cast<double>(v.rows());
}

// Poisson NLL with the x! constant dropped: mean over elements of
// (r_hat - x * log r_hat).
inline double poisson_nll(const Matrix& r_hat, const Matrix& x) {
    detail::require_same_shape(r_hat, x, "poisson_nll");
    if (r_hat.size() == 0) throw ContractError("poisson_nll: empty input");
    double s = 0.0;
    for (std::size_t k = 0; k < r_hat.size(); ++k) {
        const double r = r_hat.at_flat(k);
        if (!(r > 0.0))
            throw DomainError("poisson_nll: non-positive rate " + std::to_string(r) +
                              " at flat index " + std::to_string(k));
        const double cnt = x.at_flat(k);
        if (cnt < 0.0)
            throw DomainError("poisson_nll: negative count at flat index " +
                              std::to_string(k));
        s += r - cnt * std::log(r);
    }
    return s / static_cast<double>(r_hat.size());
}

// ---------------------------------------------------------------------------
// Mini-batches. Windows are stacked time-major; `raw` carries the
// untransformed counts the reconstruction loss targets.

struct Batch {
    Matrix features;  // (size * n) x c_i, softplus-log transformed
    Matrix raw;       // (size * n) x c_i, plain counts
    Matrix targets;   // size x 2
    std::size_t size = 0;
};

inline Batch make_batch(const WindowDataset& data, const std::vector<std::size_t>& ids) {
    Batch b;
    b.size = ids.size();
    const std::size_t n_steps = data.config().n;
    b.features = Matrix(b.size * n_steps, data.channels());
    b.raw = Matrix(b.size * n_steps, data.channels());
    b.targets = Matrix(b.size, 2);
    data.fill_stacks(ids, b.features, &b.raw, &b.targets);
    return b;
}

struct LossGraph {
    Var loss;
    double loss_v = 0.0;  // unweighted values, for reporting
    double loss_x = 0.0;
};

// Differentiable combined loss over one batch. The Poisson term is built
// from the pre-exp rate output, mean(exp(z) - x .* z), which equals
// poisson_nll(exp(z), x) without ever taking log of a subnormal rate.
inline LossGraph combined_loss_tape(Tape& t, const GraphLeaves& lv, AegruParams& params,
                                    const Batch& batch, const TrainConfig& cfg,
                                    RngStream& sampler, bool bn_training = true) {
    if (batch.size == 0) throw ContractError("combined_loss: empty batch");
    AegruGraph g =
        aegru_forward_tape(t, lv, params, batch.features, batch.size, bn_training, sampler);

    Var targets = t.constant(batch.targets);
    Var residual = sub(g.v_hat, targets);
    Var loss_v = scale(sum(hadamard(residual, residual)),
                       1.0 / static_cast<double>(batch.size));

    Var raw = t.constant(batch.raw);
    Var loss_x = scale(sub(sum(g.r_hat), sum(hadamard(raw, g.log_rate))),
                       1.0 / static_cast<double>(batch.raw.size()));

    LossGraph out;
    out.loss = add(scale(loss_v, cfg.w_v), scale(loss_x, cfg.w_x));
    out.loss_v = t.value(loss_v)(0, 0);
    out.loss_x = t.value(loss_x)(0, 0);
    return out;
}

// Combined loss value for a batch; deterministic in the seed.
inline double combined_loss(const Batch& batch, AegruParams& params, const TrainConfig& cfg,
                            std::uint64_t seed) {
    Tape t;
    GraphLeaves lv = make_leaves(t, params);
    RngStream sampler(seed);
    return t.value(combined_loss_tape(t, lv, params, batch, cfg, sampler).loss)(0, 0);
}

// ---------------------------------------------------------------------------
// Optimizer.

struct AdamState {
    std::vector<Matrix> m, v;  // aligned with tensor_refs order
    std::size_t step = 0;
};

template <typename Params>
inline AdamState make_adam_state(Params& params) {
    AdamState state;
    for (const TensorRef& ref : tensor_refs(params)) {
        state.m.emplace_back(ref.tensor->rows(), ref.tensor->cols());
        state.v.emplace_back(ref.tensor->rows(), ref.tensor->cols());
    }
    return state;
}

// One Adam step with bias correction. Weight decay is decoupled: applied
// straight to the weights before the moment update, so it composes with
// masking (a zero weight stays zero under decay). Gradients at masked
// positions are ignored, which pins pruned weights at exactly zero.
inline void adam_step(const std::vector<TensorRef>& refs, std::vector<Matrix>& grads,
                      AdamState& state, double lr_t, const TrainConfig& cfg,
                      const std::map<std::string, Matrix>* masks = nullptr) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!refs[i].trainable) continue;
        Matrix& w = *refs[i].tensor;
        Matrix& g = grads[i];
        const Matrix* mask = nullptr;
        if (masks != nullptr) {
            auto it = masks->find(refs[i].name);
            if (it != masks->end()) mask = &it->second;
        }
        if (mask != nullptr)
            for (std::size_t k = 0; k < g.size(); ++k)
                if (mask->at_flat(k) == 0.0) g.at_flat(k) = 0.0;

        if (cfg.weight_decay != 0.0)
            for (std::size_t k = 0; k < w.size(); ++k)
                w.at_flat(k) -= lr_t * cfg.weight_decay * w.at_flat(k);

        Matrix& m = state.m[i];
        Matrix& v = state.v[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g.at_flat(k);
            m.at_flat(k) = cfg.beta1 * m.at_flat(k) + (1.0 - cfg.beta1) * gk;
            v.at_flat(k) = cfg.beta2 * v.at_flat(k) + (1.0 - cfg.beta2) * gk * gk;
            const double m_hat = m.at_flat(k) / bc1;
            const double v_hat = v.at_flat(k) / bc2;
            w.at_flat(k) -= lr_t * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
        if (mask != nullptr)
            for (std::size_t k = 0; k < w.size(); ++k)
                if (mask->at_flat(k) == 0.0) w.at_flat(k) = 0.0;
    }
}

// Per-epoch cosine annealing from the base rate toward zero.
inline double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
    if (epoch >= cfg.epochs)
        throw ContractError("cosine_lr: epoch " + std::to_string(epoch) + " out of " +
                            std::to_string(cfg.epochs));
    return 0.5 * cfg.lr *
           (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                           static_cast<double>(cfg.epochs)));
}

// ---------------------------------------------------------------------------
// Evaluation.

inline R2Score evaluate(const AegruParams& params, const WindowDataset& dataset) {
    if (dataset.size() == 0) throw ContractError("evaluate: empty dataset");
    Matrix targets;
    const Matrix predictions = predict_dataset(params, dataset, &targets);
    return r2_score(predictions, targets);
}

inline R2Score evaluate(const VanillaGruParams& params, const WindowDataset& dataset) {
    if (dataset.size() == 0) throw ContractError("evaluate: empty dataset");
    const std::size_t n_steps = dataset.config().n;
    Matrix predictions(dataset.size(), 2);
    Matrix targets(dataset.size(), 2);
    std::vector<std::size_t> ids;
    const std::size_t chunk = 256;
    for (std::size_t begin = 0; begin < dataset.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, dataset.size());
        ids.resize(end - begin);
        for (std::size_t i = begin; i < end; ++i) ids[i - begin] = i;
        Matrix stack(ids.size() * n_steps, dataset.channels());
        Matrix chunk_targets(ids.size(), 2);
        dataset.fill_stacks(ids, stack, nullptr, &chunk_targets);
        const Matrix v = infer_batch(params, stack, ids.size());
        for (std::size_t b = 0; b < ids.size(); ++b) {
            predictions(begin + b, 0) = v(b, 0);
            predictions(begin + b, 1) = v(b, 1);
            targets(begin + b, 0) = chunk_targets(b, 0);
            targets(begin + b, 1) = chunk_targets(b, 1);
        }
    }
    return r2_score(predictions, targets);
}

// ---------------------------------------------------------------------------
// Training loops.

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_r2 = 0.0;
};

struct TrainResult {
    AegruParams params;
    std::vector<EpochStats> history;
};

struct VanillaTrainResult {
    VanillaGruParams params;
    std::vector<EpochStats> history;
};

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t count, RngStream& rng) {
    std::vector<std::size_t> ids(count);
    for (std::size_t i = 0; i < count; ++i) ids[i] = i;
    for (std::size_t i = count; i > 1; --i) {
        const std::size_t j = rng.uniform_below(i);
        std::swap(ids[i - 1], ids[j]);
    }
    return ids;
}

template <typename Params>
inline std::vector<Matrix> collect_grads(Tape& t, const GraphLeaves& lv, Params& params) {
    std::vector<Matrix> grads;
    const auto refs = tensor_refs(params);
    grads.reserve(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) grads.push_back(t.grad(lv.of(i)));
    return grads;
}

}  // namespace detail

// Trains on the windows of `train_rec`, scoring R^2 on `val_rec` each epoch.
// Masked weights, when `params` carries masks, never move: fine-tuning after
// pruning reuses this loop unchanged.
inline std::vector<EpochStats> fit(AegruParams& params, const Recording& train_rec,
                                   const Recording& val_rec, const PreprocessConfig& pcfg,
                                   const TrainConfig& tcfg) {
    validate(tcfg);
    const WindowDataset train_ds(train_rec, pcfg);
    const WindowDataset val_ds(val_rec, pcfg);
    RngStream shuffle_rng(tcfg.seed, 1);
    RngStream sampler(tcfg.seed, 2);
    AdamState adam = make_adam_state(params);
    const auto refs = tensor_refs(params);
    const std::map<std::string, Matrix>* masks = params.masks.empty() ? nullptr : &params.masks;

    std::vector<EpochStats> history;
    history.reserve(tcfg.epochs);
    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lr_t = cosine_lr(epoch, tcfg);
        const auto order = detail::shuffled_indices(train_ds.size(), shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += tcfg.batch_size) {
            const std::size_t end = std::min(begin + tcfg.batch_size, order.size());
            const std::vector<std::size_t> ids(order.begin() + begin, order.begin() + end);
            const Batch batch = make_batch(train_ds, ids);

            Tape t;
            GraphLeaves lv = make_leaves(t, params);
            LossGraph g = combined_loss_tape(t, lv, params, batch, tcfg, sampler);
            const double loss = t.value(g.loss)(0, 0);
            if (!std::isfinite(loss))
                throw NumericError("training loss is not finite at epoch " +
                                   std::to_string(epoch));
            loss_sum += loss * static_cast<double>(batch.size);
            t.backward(g.loss);
            auto grads = detail::collect_grads(t, lv, params);
            adam_step(refs, grads, adam, lr_t, tcfg, masks);
        }
        if (masks != nullptr)
            for (const TensorRef& ref : refs) {
                auto it = masks->find(ref.name);
                if (it == masks->end()) continue;
                for (std::size_t k = 0; k < ref.tensor->size(); ++k)
                    if (it->second.at_flat(k) == 0.0 && ref.tensor->at_flat(k) != 0.0)
                        throw ContractError(std::string("fit: masked weight drifted in ") +
                                            ref.name);
            }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_ds.size());
        stats.val_r2 = evaluate(params, val_ds).mean;
        history.push_back(stats);
    }
    return history;
}

inline TrainResult train_model(const Recording& rec, const PreprocessConfig& pcfg,
                               const ModelConfig& mcfg, const TrainConfig& tcfg) {
    validate(pcfg);
    validate(mcfg);
    validate(tcfg);
    if (mcfg.c_i != rec.channel_count)
        throw ConfigError("train: model expects " + std::to_string(mcfg.c_i) +
                          " channels but recording has " +
                          std::to_string(rec.channel_count));
    const SplitRecordings split = split_recording(rec);
    TrainResult result;
    result.params = init_params(mcfg, derive_seed(tcfg.seed, 0));
    result.history = fit(result.params, split.train, split.val, pcfg, tcfg);
    return result;
}

// Ablation variant: GRU straight on the preprocessed input, velocity loss
// only.
inline VanillaTrainResult train_vanilla(const Recording& rec, const PreprocessConfig& pcfg,
                                        const ModelConfig& mcfg, const TrainConfig& tcfg) {
    validate(pcfg);
    validate(mcfg);
    validate(tcfg);
    if (mcfg.c_i != rec.channel_count)
        throw ConfigError("train: model expects " + std::to_string(mcfg.c_i) +
                          " channels but recording has " +
                          std::to_string(rec.channel_count));
    const SplitRecordings split = split_recording(rec);
    VanillaTrainResult result;
    result.params = init_vanilla_params(mcfg, derive_seed(tcfg.seed, 0));

    const WindowDataset train_ds(split.train, pcfg);
    const WindowDataset val_ds(split.val, pcfg);
    RngStream shuffle_rng(tcfg.seed, 1);
    AdamState adam = make_adam_state(result.params);
    const auto refs = tensor_refs(result.params);

    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lr_t = cosine_lr(epoch, tcfg);
        const auto order = detail::shuffled_indices(train_ds.size(), shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += tcfg.batch_size) {
            const std::size_t end = std::min(begin + tcfg.batch_size, order.size());
            const std::vector<std::size_t> ids(order.begin() + begin, order.begin() + end);
            const std::size_t n_steps = pcfg.n;
            Matrix features(ids.size() * n_steps, train_ds.channels());
            Matrix targets(ids.size(), 2);
            train_ds.fill_stacks(ids, features, nullptr, &targets);

            Tape t;
            GraphLeaves lv = make_leaves(t, result.params);
            Var v_hat = vanilla_forward_tape(t, lv, result.params, features, ids.size());
            Var residual = sub(v_hat, t.constant(targets));
            Var loss_node = t.scale(sum(hadamard(residual, residual)),
                                    tcfg.w_v / static_cast<double>(ids.size()));
            const double loss = t.value(loss_node)(0, 0);
            if (!std::isfinite(loss))
                throw NumericError("training loss is not finite at epoch " +
                                   std::to_string(epoch));
            loss_sum += loss * static_cast<double>(ids.size());
            t.backward(loss_node);
            auto grads = detail::collect_grads(t, lv, result.params);
            adam_step(refs, grads, adam, lr_t, tcfg, nullptr);
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_ds.size());
        stats.val_r2 = evaluate(result.params, val_ds).mean;
        result.history.push_back(stats);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Hyperparameter grid over (ws, n). Cells are independent runs with their
// own derived seeds (base seed + cell index), so a parallel sweep produces
// the same table as a serial one.

struct GridCell {
    std::size_t ws = 0, n = 0;
    double r2_mean = 0.0, r2_x = 0.0, r2_y = 0.0;
};

namespace detail {

template <typename F>
inline void parallel_for(std::size_t count, std::size_t jobs, F body) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::exception_ptr error;
    std::mutex error_mutex;
    const std::size_t n_workers = std::min(jobs, count);
    for (std::size_t w = 0; w < n_workers; ++w)
        workers.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& worker : workers) worker.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

inline std::vector<GridCell> grid_search(const Recording& rec,
                                         const std::vector<std::size_t>& ws_list,
                                         const std::vector<std::size_t>& n_list,
                                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                                         std::size_t stride = 1, std::size_t jobs = 1) {
    if (ws_list.empty() || n_list.empty())
        throw ConfigError("grid: ws and n lists must be non-empty");
    std::vector<GridCell> cells(ws_list.size() * n_list.size());
    detail::parallel_for(cells.size(), jobs, [&](std::size_t i) {
        const std::size_t ws = ws_list[i / n_list.size()];
        const std::size_t n = n_list[i % n_list.size()];
        PreprocessConfig pcfg{ws, n, stride};
        TrainConfig cell_cfg = tcfg;
        cell_cfg.seed = tcfg.seed + i;
        const TrainResult trained = train_model(rec, pcfg, mcfg, cell_cfg);
        const SplitRecordings split = split_recording(rec);
        const R2Score r2 = evaluate(trained.params, WindowDataset(split.test, pcfg));
        cells[i] = GridCell{ws, n, r2.mean, r2.x, r2.y};
    });
    return cells;
}

}  // namespace aegru
