#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "aegru/data.hpp"
#include "aegru/errors.hpp"
#include "aegru/model.hpp"
#include "aegru/training.hpp"

// Post-training sparsification: magnitude (L1) unstructured pruning at a
// target rate over the backbone weight matrices, mask-preserving
// fine-tuning, and 8-bit fixed-point post-rounding quantization (1 integer
// bit, 7 fractional bits). Biases, batchnorm parameters and the auxiliary
// branch are left untouched throughout: the branch never ships and the rest
// are too few elements to matter.

namespace aegru {

struct PruneConfig {
    double tpr = 0.5;  // target pruning rate in [0, 1)
    std::size_t finetune_epochs = 10;
    bool global = false;  // rank weights across tensors instead of per tensor
};

inline void validate(const PruneConfig& cfg) {
    if (!(cfg.tpr >= 0.0 && cfg.tpr < 1.0))
        throw ContractError("prune: tpr must lie in [0, 1), got " + std::to_string(cfg.tpr));
}

struct QuantConfig {
    std::uint8_t bits = 8;
    std::uint8_t qf = 7;
};

inline void validate(const QuantConfig& cfg) {
    if (cfg.bits != 8 || cfg.qf != 7)
        throw ConfigError("quantize: the supported scheme is 8 bits with qf = 7");
}

// ---------------------------------------------------------------------------
// Pruning. Within each prunable tensor the floor(tpr * n) weights of
// smallest magnitude are zeroed, ties broken toward the lower flat index;
// global mode ranks all prunable weights together. Masks (1 = keep) are
// attached to the params and the selected weights are set to exactly 0.

namespace detail {

// floor(tpr * n), nudged so decimal rates like 0.3 do not lose an element
// to binary representation error.
inline std::size_t prune_count(double tpr, std::size_t n) {
    return static_cast<std::size_t>(std::floor(tpr * static_cast<double>(n) + 1e-9));
}

inline void zero_smallest(std::vector<std::pair<double, std::size_t>>& magnitude_index,
                          std::size_t k, const std::vector<Matrix*>& tensors,
                          const std::vector<std::size_t>& tensor_of,
                          const std::vector<std::size_t>& flat_of,
                          std::vector<Matrix>& masks) {
    std::partial_sort(magnitude_index.begin(), magnitude_index.begin() + k,
                      magnitude_index.end());
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t global_idx = magnitude_index[i].second;
        tensors[tensor_of[global_idx]]->at_flat(flat_of[global_idx]) = 0.0;
        masks[tensor_of[global_idx]].at_flat(flat_of[global_idx]) = 0.0;
    }
}

}  // namespace detail

inline void l1_prune(AegruParams& params, const PruneConfig& cfg) {
    validate(cfg);
    auto refs = tensor_refs(params);
    std::vector<std::size_t> prunable;
    for (std::size_t i = 0; i < refs.size(); ++i)
        if (refs[i].prunable) prunable.push_back(i);

    std::vector<Matrix*> tensors;
    std::vector<Matrix> masks;
    for (std::size_t i : prunable) {
        tensors.push_back(refs[i].tensor);
        masks.emplace_back(Matrix::filled(refs[i].tensor->rows(), refs[i].tensor->cols(), 1.0));
    }

    if (cfg.global) {
        std::vector<std::pair<double, std::size_t>> order;
        std::vector<std::size_t> tensor_of, flat_of;
        for (std::size_t ti = 0; ti < tensors.size(); ++ti)
            for (std::size_t k = 0; k < tensors[ti]->size(); ++k) {
                order.emplace_back(std::abs(tensors[ti]->at_flat(k)), order.size());
                tensor_of.push_back(ti);
                flat_of.push_back(k);
            }
        const std::size_t k = detail::prune_count(cfg.tpr, order.size());
        detail::zero_smallest(order, k, tensors, tensor_of, flat_of, masks);
    } else {
        for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
            Matrix& w = *tensors[ti];
            std::vector<std::pair<double, std::size_t>> order(w.size());
            for (std::size_t k = 0; k < w.size(); ++k)
                order[k] = {std::abs(w.at_flat(k)), k};
            const std::size_t k = detail::prune_count(cfg.tpr, w.size());
            std::partial_sort(order.begin(), order.begin() + k, order.end());
            for (std::size_t i = 0; i < k; ++i) {
                w.at_flat(order[i].second) = 0.0;
                masks[ti].at_flat(order[i].second) = 0.0;
            }
        }
    }

    // Only tensors that actually lost weights carry a mask; pruning at a
    // zero rate attaches nothing.
    for (std::size_t ti = 0; ti < prunable.size(); ++ti) {
        bool any_pruned = false;
        for (std::size_t k = 0; k < masks[ti].size(); ++k)
            if (masks[ti].at_flat(k) == 0.0) {
                any_pruned = true;
                break;
            }
        if (any_pruned) params.masks[refs[prunable[ti]].name] = std::move(masks[ti]);
    }
}

// Fine-tuning after pruning: the same training loop, on the train and
// validation portions concatenated, with the masks pinning pruned weights
// at zero. Cosine annealing restarts from the base rate over the given
// epochs.
inline std::vector<EpochStats> finetune(AegruParams& params, const Recording& rec,
                                        const PreprocessConfig& pcfg, TrainConfig tcfg,
                                        std::size_t epochs) {
    if (params.masks.empty()) throw ContractError("finetune: params carry no masks");
    if (epochs == 0) return {};
    tcfg.epochs = epochs;
    const SplitRecordings split = split_recording(rec);
    Recording train_val = detail::slice_recording(
        rec, 0, split.train.sample_count() + split.val.sample_count(), "train+val");
    return fit(params, train_val, split.val, pcfg, tcfg);
}

// ---------------------------------------------------------------------------
// Quantization: w -> round(2^qf * w) / 2^qf, clamped to the signed range
// [-1, 1 - 2^-qf]. Zeros map to zero, so sparsity survives.

inline double quantize_weight(double w, std::uint8_t qf) {
    const double scale = static_cast<double>(1u << qf);
    double q = std::round(w * scale);
    const double lo = -scale, hi = scale - 1.0;
    q = std::min(std::max(q, lo), hi);
    return q / scale;
}

inline void quantize(AegruParams& params, const QuantConfig& cfg = {}) {
    validate(cfg);
    for (const TensorRef& ref : tensor_refs(params))
        if (ref.prunable)
            for (std::size_t k = 0; k < ref.tensor->size(); ++k)
                ref.tensor->at_flat(k) = quantize_weight(ref.tensor->at_flat(k), cfg.qf);
    params.quant.quantized = true;
    params.quant.bits = cfg.bits;
    params.quant.qf = cfg.qf;
}

// ---------------------------------------------------------------------------
// Sparsity reporting over the prunable tensors.

struct TensorSparsity {
    std::string tensor;
    std::size_t total = 0;
    std::size_t zeros = 0;
    double fraction = 0.0;
};

struct SparsityReport {
    std::vector<TensorSparsity> tensors;
    std::size_t total = 0;
    std::size_t zeros = 0;
    double fraction = 0.0;
};

inline SparsityReport sparsity_report(AegruParams& params) {
    SparsityReport report;
    for (const TensorRef& ref : tensor_refs(params)) {
        if (!ref.prunable) continue;
        TensorSparsity ts;
        ts.tensor = ref.name;
        ts.total = ref.tensor->size();
        for (std::size_t k = 0; k < ref.tensor->size(); ++k)
            if (ref.tensor->at_flat(k) == 0.0) ++ts.zeros;
        ts.fraction = static_cast<double>(ts.zeros) / static_cast<double>(ts.total);
        report.total += ts.total;
        report.zeros += ts.zeros;
        report.tensors.push_back(std::move(ts));
    }
    report.fraction = report.total == 0
                          ? 0.0
                          : static_cast<double>(report.zeros) / static_cast<double>(report.total);
    return report;
}

inline std::string sparsity_csv(const SparsityReport& report) {
    std::string out = "tensor,total,zeros,fraction\n";
    for (const TensorSparsity& ts : report.tensors) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.9g\n", ts.tensor.c_str(), ts.total,
                      ts.zeros, ts.fraction);
        out += buf;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "all,%zu,%zu,%.9g\n", report.total, report.zeros,
                  report.fraction);
    out += buf;
    return out;
}

}  // namespace aegru
