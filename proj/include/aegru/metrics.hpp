#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "aegru/errors.hpp"
#include "aegru/matrix.hpp"
#include "aegru/model.hpp"
#include "aegru/preprocess.hpp"

#include "json.hpp"

// The three benchmark metrics: R^2 per velocity axis, memory footprint, and
// effective operation counts.
//
// Footprint accounting, stated exactly: backbone parameter elements
// (upstream FC, bn scale/shift, GRU, downstream FC) plus the bn block's
// four stored c_f-vectors, at the declared weight precision (4 bytes, or 1
// byte once quantized to 8-bit), plus the activation buffers of a single
// inference (input n x c_i, latent n x c_f, hidden c_h, three gates,
// 2 outputs) at 4 bytes each. Pruned weights still occupy storage, so
// pruning never changes the footprint. The auxiliary branch is excluded:
// it never ships.
//
// MAC accounting: one multiply-accumulate per (weight, activation) pair in
// the backbone's matrix products and one per element of the three gate
// Hadamard products, counted only when both operands are nonzero. Bias
// additions and activation-function evaluations are not MACs. The folded
// batchnorm affine is tracked separately (bn_muls_per_inference) so other
// conventions can be recomputed from the report. Accumulate-only (AC)
// counts are the cost unit of spiking layers; this architecture has none,
// so the field is a constant zero with the hook kept in the report.

namespace aegru {

struct R2Score {
    double x = 0.0, y = 0.0, mean = 0.0;
};

inline R2Score r2_score(const Matrix& v_hat, const Matrix& v) {
    detail::require_same_shape(v_hat, v, "r2_score");
    if (v.cols() != 2) throw ContractError("r2_score: expected T x 2 velocities");
    const std::size_t t_count = v.rows();
    if (t_count < 2) throw ContractError("r2_score: need at least 2 samples");
    R2Score out;
    double* axes[2] = {&out.x, &out.y};
    for (std::size_t axis = 0; axis < 2; ++axis) {
        double mean = 0.0;
        for (std::size_t t = 0; t < t_count; ++t) mean += v(t, axis);
        mean /= static_cast<double>(t_count);
        double ss_res = 0.0, ss_tot = 0.0;
        for (std::size_t t = 0; t < t_count; ++t) {
            const double res = v(t, axis) - v_hat(t, axis);
            const double dev = v(t, axis) - mean;
            ss_res += res * res;
            ss_tot += dev * dev;
        }
        if (ss_tot == 0.0)
            throw DataError("r2_score: ground truth has zero variance on axis " +
                            std::to_string(axis));
        *axes[axis] = 1.0 - ss_res / ss_tot;
    }
    out.mean = 0.5 * (out.x + out.y);
    return out;
}

// ---------------------------------------------------------------------------
// Operation counts.

struct MacCount {
    std::uint64_t matrix = 0;       // matrix-product multiply-accumulates
    std::uint64_t elementwise = 0;  // gate Hadamard multiplies

    std::uint64_t total() const { return matrix + elementwise; }
};

// Analytic dense count per inference: every weight/activation pair once.
inline std::uint64_t dense_macs(const ModelConfig& cfg, std::size_t n_steps) {
    const std::uint64_t fc_up = n_steps * cfg.c_i * cfg.c_f;
    const std::uint64_t gru =
        n_steps * (3 * cfg.c_f * cfg.c_h + 3 * cfg.c_h * cfg.c_h);
    const std::uint64_t gates = n_steps * 3 * cfg.c_h;
    const std::uint64_t fc_down = cfg.c_h * 2;
    return fc_up + gru + gates + fc_down;
}

inline std::uint64_t bn_muls_per_inference(const ModelConfig& cfg, std::size_t n_steps) {
    return n_steps * cfg.c_f;
}

namespace detail {

// y = x * w + b with the effective-MAC rule: a pair contributes one MAC iff
// both the input activation and the weight are nonzero.
inline void counted_matvec(const double* x, const Matrix& w, const Matrix& b, double* y,
                           std::uint64_t& macs) {
    const std::size_t in = w.rows(), out = w.cols();
    for (std::size_t j = 0; j < out; ++j) y[j] = b(0, j);
    for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* wrow = w.row_ptr(i);
        for (std::size_t j = 0; j < out; ++j) {
            if (wrow[j] != 0.0) ++macs;
            y[j] += xi * wrow[j];
        }
    }
}

}  // namespace detail

// Instrumented single-window inference. h0, when given, overrides the zero
// initial hidden state (one row, c_h wide).
inline MacCount count_effective_macs(const AegruParams& p, const Matrix& features,
                                     const Matrix* h0 = nullptr) {
    const ModelConfig& cfg = p.cfg;
    if (features.cols() != cfg.c_i)
        throw DimensionError("count_effective_macs: window is " + features.shape_str() +
                             ", expected columns " + std::to_string(cfg.c_i));
    const std::size_t steps = features.rows();
    MacCount count;

    Matrix latent(steps, cfg.c_f);
    for (std::size_t t = 0; t < steps; ++t)
        detail::counted_matvec(features.row_ptr(t), p.fc_up.w, p.fc_up.b,
                               latent.row_ptr(t), count.matrix);
    latent = detail::bn_apply(latent, p.bn.scale, p.bn.shift, p.bn.running_mean,
                              p.bn.running_var);

    std::vector<double> h(cfg.c_h, 0.0);
    if (h0 != nullptr)
        for (std::size_t j = 0; j < cfg.c_h; ++j) h[j] = (*h0)(0, j);
    std::vector<double> ir(cfg.c_h), hr(cfg.c_h), iu(cfg.c_h), hu(cfg.c_h), ic(cfg.c_h),
        hc(cfg.c_h);
    for (std::size_t t = 0; t < steps; ++t) {
        const double* x = latent.row_ptr(t);
        detail::counted_matvec(x, p.gru.w_ir, p.gru.b_ir, ir.data(), count.matrix);
        detail::counted_matvec(h.data(), p.gru.w_hr, p.gru.b_hr, hr.data(), count.matrix);
        detail::counted_matvec(x, p.gru.w_iu, p.gru.b_iu, iu.data(), count.matrix);
        detail::counted_matvec(h.data(), p.gru.w_hu, p.gru.b_hu, hu.data(), count.matrix);
        detail::counted_matvec(x, p.gru.w_ic, p.gru.b_ic, ic.data(), count.matrix);
        detail::counted_matvec(h.data(), p.gru.w_hc, p.gru.b_hc, hc.data(), count.matrix);
        for (std::size_t j = 0; j < cfg.c_h; ++j) {
            const double reset = sigmoid(ir[j] + hr[j]);
            const double update = sigmoid(iu[j] + hu[j]);
            if (reset != 0.0 && hc[j] != 0.0) ++count.elementwise;  // r .* (W_hc h + b)
            const double cand = std::tanh(ic[j] + reset * hc[j]);
            if (1.0 - update != 0.0 && cand != 0.0) ++count.elementwise;  // (1-u) .* c
            if (update != 0.0 && h[j] != 0.0) ++count.elementwise;        // u .* h
            h[j] = (1.0 - update) * cand + update * h[j];
        }
    }

    std::vector<double> v(2);
    detail::counted_matvec(h.data(), p.fc_down.w, p.fc_down.b, v.data(), count.matrix);
    return count;
}

struct EffectiveMacs {
    double matrix = 0.0, elementwise = 0.0;

    double total() const { return matrix + elementwise; }
};

// Mean effective MACs per inference over a dataset.
inline EffectiveMacs effective_macs(const AegruParams& p, const WindowDataset& dataset) {
    if (dataset.size() == 0) throw ContractError("effective_macs: empty dataset");
    Matrix window(dataset.config().n, dataset.channels());
    EffectiveMacs mean;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        dataset.features_into(i, window);
        const MacCount c = count_effective_macs(p, window);
        mean.matrix += static_cast<double>(c.matrix);
        mean.elementwise += static_cast<double>(c.elementwise);
    }
    mean.matrix /= static_cast<double>(dataset.size());
    mean.elementwise /= static_cast<double>(dataset.size());
    return mean;
}

// ---------------------------------------------------------------------------
// Memory footprint in bytes; see the accounting note at the top.

inline std::uint64_t memory_footprint(const AegruParams& p, const PreprocessConfig& pcfg) {
    const ModelConfig& cfg = p.cfg;
    const std::uint64_t param_elems = backbone_param_count(cfg) + 4 * cfg.c_f;
    const std::uint64_t weight_bytes = p.quant.quantized ? 1 : 4;
    const std::uint64_t act_elems =
        pcfg.n * cfg.c_i + pcfg.n * cfg.c_f + cfg.c_h + 3 * cfg.c_h + 2;
    return param_elems * weight_bytes + act_elems * 4;
}

// ---------------------------------------------------------------------------
// Composite report.

struct BenchmarkReport {
    double r2_x = 0.0, r2_y = 0.0, r2_mean = 0.0;
    std::uint64_t footprint_bytes = 0;
    double effective_macs = 0.0;  // mean per inference
    double effective_acs = 0.0;   // no spiking layers: constant zero
    std::uint64_t dense_macs = 0;
    // breakdown
    double effective_macs_matrix = 0.0;
    double effective_macs_elementwise = 0.0;
    std::uint64_t bn_muls_per_inference = 0;
};

inline Matrix predict_dataset(const AegruParams& p, const WindowDataset& dataset,
                              Matrix* targets_out = nullptr,
                              std::size_t chunk = 256) {
    if (dataset.size() == 0) throw ContractError("predict_dataset: empty dataset");
    const std::size_t n_steps = dataset.config().n;
    Matrix predictions(dataset.size(), 2);
    if (targets_out != nullptr) *targets_out = Matrix(dataset.size(), 2);
    std::vector<std::size_t> ids;
    for (std::size_t begin = 0; begin < dataset.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, dataset.size());
        ids.resize(end - begin);
        for (std::size_t i = begin; i < end; ++i) ids[i - begin] = i;
        Matrix stack(ids.size() * n_steps, dataset.channels());
        Matrix targets(ids.size(), 2);
        dataset.fill_stacks(ids, stack, nullptr, &targets);
        const Matrix v = infer_batch(p, stack, ids.size());
        for (std::size_t b = 0; b < ids.size(); ++b) {
            predictions(begin + b, 0) = v(b, 0);
            predictions(begin + b, 1) = v(b, 1);
            if (targets_out != nullptr) {
                (*targets_out)(begin + b, 0) = targets(b, 0);
                (*targets_out)(begin + b, 1) = targets(b, 1);
            }
        }
    }
    return predictions;
}

inline BenchmarkReport benchmark(const AegruParams& p, const WindowDataset& dataset,
                                 const PreprocessConfig& pcfg) {
    Matrix targets;
    const Matrix predictions = predict_dataset(p, dataset, &targets);
    const R2Score r2 = r2_score(predictions, targets);
    const EffectiveMacs macs = effective_macs(p, dataset);

    BenchmarkReport report;
    report.r2_x = r2.x;
    report.r2_y = r2.y;
    report.r2_mean = r2.mean;
    report.footprint_bytes = memory_footprint(p, pcfg);
    report.effective_macs = macs.total();
    report.effective_acs = 0.0;
    report.dense_macs = dense_macs(p.cfg, pcfg.n);
    report.effective_macs_matrix = macs.matrix;
    report.effective_macs_elementwise = macs.elementwise;
    report.bn_muls_per_inference = bn_muls_per_inference(p.cfg, pcfg.n);
    return report;
}

inline nlohmann::json report_to_json(const BenchmarkReport& r) {
    return nlohmann::json{
        {"r2_x", r.r2_x},
        {"r2_y", r.r2_y},
        {"r2_mean", r.r2_mean},
        {"footprint_bytes", r.footprint_bytes},
        {"effective_macs", r.effective_macs},
        {"effective_acs", r.effective_acs},
        {"dense_macs", r.dense_macs},
        {"detail",
         {{"effective_macs_matrix", r.effective_macs_matrix},
          {"effective_macs_elementwise", r.effective_macs_elementwise},
          {"bn_muls_per_inference", r.bn_muls_per_inference}}},
    };
}

inline void write_report_json(const BenchmarkReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << report_to_json(r).dump(2) << "\n";
}

inline std::string report_csv_header() {
    return "r2_x,r2_y,r2_mean,footprint_bytes,effective_macs,effective_acs,dense_macs";
}

inline std::string report_csv_row(const BenchmarkReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%llu,%.9g,%.9g,%llu", r.r2_x, r.r2_y,
                  r.r2_mean, static_cast<unsigned long long>(r.footprint_bytes),
                  r.effective_macs, r.effective_acs,
                  static_cast<unsigned long long>(r.dense_macs));
    return buf;
}

inline void write_report_csv(const BenchmarkReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << report_csv_header() << "\n" << report_csv_row(r) << "\n";
}

}  // namespace aegru
