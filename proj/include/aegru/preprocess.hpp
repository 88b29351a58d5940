#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "aegru/data.hpp"
#include "aegru/errors.hpp"
#include "aegru/matrix.hpp"

// Windowing and input transform. Raw per-sample counts are summed over n
// consecutive sub-windows of ws samples each (so one model input covers
// ws * n * 4 ms of activity, oldest sub-window in row 0) and then passed
// through log(softplus(x)), which keeps everything positive and pulls the
// roughly Poisson counts toward a Gaussian-like scale. Predictions advance
// by `stride` samples; the first prediction sits at t_end = ws*n - 1 so no
// window ever fabricates history before the recording started.

namespace aegru {

struct PreprocessConfig {
    std::size_t ws = 20;    // samples summed per sub-window
    std::size_t n = 5;      // sub-windows per input = GRU steps
    std::size_t stride = 1; // samples between successive predictions
};

inline void validate(const PreprocessConfig& cfg) {
    if (cfg.ws < 1 || cfg.n < 1 || cfg.stride < 1)
        throw ConfigError("preprocess: ws, n and stride must all be >= 1");
}

inline double softplus_log(double x) { return std::log(softplus(x)); }

inline Matrix softplus_log(const Matrix& x) {
    return map(x, [](double v) { return softplus_log(v); });
}

struct WindowedSample {
    Matrix features;                 // n x channels, softplus-log transformed
    std::array<double, 2> target{};  // velocity at t_end
    std::size_t t_end = 0;
};

struct RawWindow {
    Matrix counts;  // n x channels, plain sums
    std::size_t t_end = 0;
};

namespace detail {

// Exclusive prefix sums over time: prefix(t, c) = sum of counts before
// sample t. Counts are integers, so sums are exact in doubles.
inline Matrix prefix_sums(const Matrix& spikes) {
    Matrix prefix(spikes.rows() + 1, spikes.cols());
    for (std::size_t t = 0; t < spikes.rows(); ++t)
        for (std::size_t c = 0; c < spikes.cols(); ++c)
            prefix(t + 1, c) = prefix(t, c) + spikes(t, c);
    return prefix;
}

inline Matrix prefix_sums(const Recording& rec) {
    Matrix prefix(rec.sample_count() + 1, rec.channel_count);
    for (std::size_t t = 0; t < rec.sample_count(); ++t)
        for (std::size_t c = 0; c < rec.channel_count; ++c)
            prefix(t + 1, c) = prefix(t, c) + static_cast<double>(rec.spike(t, c));
    return prefix;
}

// Row j covers samples [t_end - (n-j)*ws + 1, t_end - (n-j-1)*ws]; row n-1
// is the most recent sub-window.
inline void raw_window_into(const Matrix& prefix, const PreprocessConfig& cfg,
                            std::size_t t_end, Matrix& out) {
    for (std::size_t j = 0; j < cfg.n; ++j) {
        const std::size_t lo = t_end + 1 - (cfg.n - j) * cfg.ws;
        const std::size_t hi = lo + cfg.ws;  // exclusive
        const double* phi = prefix.row_ptr(hi);
        const double* plo = prefix.row_ptr(lo);
        double* orow = out.row_ptr(j);
        for (std::size_t c = 0; c < prefix.cols(); ++c) orow[c] = phi[c] - plo[c];
    }
}

inline std::size_t window_count(std::size_t t_total, const PreprocessConfig& cfg) {
    if (t_total < cfg.ws * cfg.n)
        throw DataError("windowing: need at least " + std::to_string(cfg.ws * cfg.n) +
                        " samples, got " + std::to_string(t_total));
    return (t_total - cfg.ws * cfg.n) / cfg.stride + 1;
}

}  // namespace detail

inline std::vector<RawWindow> bin_windows(const Matrix& spikes, const PreprocessConfig& cfg) {
    validate(cfg);
    const std::size_t count = detail::window_count(spikes.rows(), cfg);
    const Matrix prefix = detail::prefix_sums(spikes);
    std::vector<RawWindow> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i].t_end = cfg.ws * cfg.n - 1 + i * cfg.stride;
        out[i].counts = Matrix(cfg.n, spikes.cols());
        detail::raw_window_into(prefix, cfg, out[i].t_end, out[i].counts);
    }
    return out;
}

// Lazy window view over one recording. Windows are produced on demand from
// prefix sums, so iterating the training set does not materialize hundreds
// of megabytes of features. The transform of small integer counts comes
// from a lookup table.
class WindowDataset {
public:
    WindowDataset(const Recording& rec, const PreprocessConfig& cfg)
        : cfg_(cfg), prefix_(detail::prefix_sums(rec)), velocity_(rec.velocity) {
        validate(cfg);
        count_ = detail::window_count(rec.sample_count(), cfg);
        splog_table_.resize(kTableSize);
        for (std::size_t k = 0; k < kTableSize; ++k)
            splog_table_[k] = softplus_log(static_cast<double>(k));
    }

    std::size_t size() const { return count_; }
    std::size_t channels() const { return prefix_.cols(); }
    const PreprocessConfig& config() const { return cfg_; }

    std::size_t t_end(std::size_t i) const { return cfg_.ws * cfg_.n - 1 + i * cfg_.stride; }

    void raw_into(std::size_t i, Matrix& out) const {
        detail::raw_window_into(prefix_, cfg_, t_end(i), out);
    }

    void features_into(std::size_t i, Matrix& out) const {
        raw_into(i, out);
        transform_in_place(out);
    }

    std::array<double, 2> target(std::size_t i) const {
        const std::size_t t = t_end(i);
        return {velocity_(t, 0), velocity_(t, 1)};
    }

    // Stacks the selected windows time-major: row t * B + b holds sub-window
    // t of window ids[b]. `features` must be (B*n) x channels, `targets`
    // B x 2; `raw`, if given, receives the untransformed counts.
    void fill_stacks(const std::vector<std::size_t>& ids, Matrix& features, Matrix* raw,
                     Matrix* targets) const {
        const std::size_t batch = ids.size();
        Matrix window(cfg_.n, channels());
        for (std::size_t b = 0; b < batch; ++b) {
            raw_into(ids[b], window);
            for (std::size_t t = 0; t < cfg_.n; ++t) {
                const double* src = window.row_ptr(t);
                if (raw != nullptr) {
                    double* rrow = raw->row_ptr(t * batch + b);
                    for (std::size_t c = 0; c < channels(); ++c) rrow[c] = src[c];
                }
                double* frow = features.row_ptr(t * batch + b);
                for (std::size_t c = 0; c < channels(); ++c) frow[c] = lookup(src[c]);
            }
            if (targets != nullptr) {
                const auto v = target(ids[b]);
                (*targets)(b, 0) = v[0];
                (*targets)(b, 1) = v[1];
            }
        }
    }

private:
    static constexpr std::size_t kTableSize = 4096;

    double lookup(double count) const {
        const std::size_t k = static_cast<std::size_t>(count);
        return k < kTableSize ? splog_table_[k] : softplus_log(count);
    }

    void transform_in_place(Matrix& m) const {
        for (std::size_t k = 0; k < m.size(); ++k) m.at_flat(k) = lookup(m.at_flat(k));
    }

    PreprocessConfig cfg_;
    Matrix prefix_;
    Matrix velocity_;
    std::size_t count_ = 0;
    std::vector<double> splog_table_;
};

inline std::vector<WindowedSample> make_dataset(const Recording& rec,
                                                const PreprocessConfig& cfg) {
    WindowDataset view(rec, cfg);
    std::vector<WindowedSample> out(view.size());
    for (std::size_t i = 0; i < view.size(); ++i) {
        out[i].features = Matrix(cfg.n, view.channels());
        view.features_into(i, out[i].features);
        out[i].target = view.target(i);
        out[i].t_end = view.t_end(i);
    }
    return out;
}

}  // namespace aegru
