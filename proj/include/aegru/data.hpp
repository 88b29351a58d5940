#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aegru/errors.hpp"
#include "aegru/io.hpp"
#include "aegru/matrix.hpp"
#include "aegru/rng.hpp"

// Synthetic spike recordings, the NDR on-disk format, and the contiguous
// train/val/test split.
//
// A Recording holds per-channel spike counts at the fixed 4 ms sample period
// together with a synchronized 2-D fingertip velocity. Real recordings are
// not redistributable, so the toolkit generates Poisson spike trains whose
// log-rates are linearly tuned to a smoothed random-walk velocity; that
// matches the generative assumption the decoder itself makes when it
// reconstructs rates as exp(linear(latent)).

namespace aegru {

constexpr std::uint32_t kSamplePeriodUs = 4000;  // 250 Hz

struct Recording {
    std::size_t channel_count = 0;
    std::uint32_t sample_period_us = kSamplePeriodUs;
    std::vector<std::uint16_t> spikes;  // time-major, sample_count * channel_count
    Matrix velocity;                    // sample_count x 2
    std::string name;                   // label only; not persisted in files

    std::size_t sample_count() const { return velocity.rows(); }

    std::uint16_t spike(std::size_t t, std::size_t c) const {
        return spikes[t * channel_count + c];
    }

    // Spike counts widened to doubles, sample-major.
    Matrix spikes_matrix() const {
        Matrix m(sample_count(), channel_count);
        for (std::size_t k = 0; k < spikes.size(); ++k)
            m.at_flat(k) = static_cast<double>(spikes[k]);
        return m;
    }

    // Equality over the recorded data; the name is a label and files do not
    // carry it.
    friend bool operator==(const Recording& a, const Recording& b) {
        return a.channel_count == b.channel_count &&
               a.sample_period_us == b.sample_period_us && a.spikes == b.spikes &&
               a.velocity == b.velocity;
    }
};

struct SynthConfig {
    std::size_t channel_count = 96;
    std::size_t duration_samples = 60000;
    double baseline_log_rate = -2.0;  // per-sample log mean count, ~34 Hz
    double tuning_gain = 5.0;
    double velocity_smoothness = 50.0;  // AR(1) time constant in samples
    std::uint64_t seed = 1;
};

// Round a double to the nearest 32-bit float value. The volatile keeps the
// narrowing conversion in place; gcc 11 at -O3 with AVX-512 enabled folds a
// plain double->float->double round trip away.
inline double snap_to_f32(double x) {
    const volatile float narrowed = static_cast<float>(x);
    return static_cast<double>(narrowed);
}

inline void validate(const SynthConfig& cfg) {
    if (cfg.channel_count < 1) throw ConfigError("synth: channel_count must be >= 1");
    if (cfg.duration_samples < 1) throw ConfigError("synth: duration_samples must be >= 1");
    if (!(cfg.velocity_smoothness >= 1.0))
        throw ConfigError("synth: velocity_smoothness must be >= 1");
}

// Deterministic synthetic recording. The velocity is a mean-reverting
// AR(1) walk v_t = (1 - 1/tau) v_{t-1} + (1/tau) eta_t per axis, so larger
// time constants give smoother, smaller-variance trajectories. Channel c
// fires Poisson with log-rate baseline + gain * <a_c, v_t> for a fixed random
// unit tuning direction a_c. One RNG stream drives the velocity and one
// drives each channel, so extending the channel count leaves existing
// channels' spikes untouched. Velocities are snapped to 32-bit floats, the
// precision the file format stores, so a generated recording round-trips
// through disk bit-exactly.
inline Recording generate_synthetic(const SynthConfig& cfg) {
    validate(cfg);
    const std::size_t t_count = cfg.duration_samples;
    const std::size_t channels = cfg.channel_count;

    Recording rec;
    rec.channel_count = channels;
    rec.name = "synthetic";
    rec.velocity = Matrix(t_count, 2);
    rec.spikes.assign(t_count * channels, 0);

    RngStream vel_rng(cfg.seed, 0);
    const double alpha = 1.0 / cfg.velocity_smoothness;
    double vx = 0.0, vy = 0.0;
    for (std::size_t t = 0; t < t_count; ++t) {
        vx = (1.0 - alpha) * vx + alpha * vel_rng.normal();
        vy = (1.0 - alpha) * vy + alpha * vel_rng.normal();
        rec.velocity(t, 0) = snap_to_f32(vx);
        rec.velocity(t, 1) = snap_to_f32(vy);
    }

    for (std::size_t c = 0; c < channels; ++c) {
        RngStream rng(cfg.seed, 1 + c);
        double ax = rng.normal(), ay = rng.normal();
        const double norm = std::sqrt(ax * ax + ay * ay);
        if (norm < 1e-12) {
            ax = 1.0;
            ay = 0.0;
        } else {
            ax /= norm;
            ay /= norm;
        }
        for (std::size_t t = 0; t < t_count; ++t) {
            const double drive = ax * rec.velocity(t, 0) + ay * rec.velocity(t, 1);
            const double rate = std::exp(cfg.baseline_log_rate + cfg.tuning_gain * drive);
            const std::uint64_t k = rng.poisson(rate);
            rec.spikes[t * channels + c] =
                static_cast<std::uint16_t>(k > 65535 ? 65535 : k);
        }
    }
    return rec;
}

// ---------------------------------------------------------------------------
// NDR file format, little-endian throughout:
//   bytes  0..3   magic "NDR1"
//   bytes  4..7   format version, u32 = 1
//   bytes  8..11  channel count, u32
//   bytes 12..19  sample count T, u64
//   then T * channels spike counts as u16, time-major
//   then T * 2 velocities as IEEE-754 f32, (vx, vy) interleaved

constexpr char kNdrMagic[4] = {'N', 'D', 'R', '1'};
constexpr std::uint32_t kNdrVersion = 1;

inline void save_ndr(const Recording& rec, const std::string& path) {
    detail::ByteWriter w;
    w.bytes(kNdrMagic, 4);
    w.u32(kNdrVersion);
    w.u32(static_cast<std::uint32_t>(rec.channel_count));
    w.u64(rec.sample_count());
    for (std::uint16_t s : rec.spikes) w.u16(s);
    for (std::size_t t = 0; t < rec.sample_count(); ++t) {
        w.f32(static_cast<float>(rec.velocity(t, 0)));
        w.f32(static_cast<float>(rec.velocity(t, 1)));
    }
    w.to_file(path);
}

inline Recording load_ndr(const std::string& path) {
    detail::ByteReader r(path);
    if (r.str(4) != std::string(kNdrMagic, 4)) {
        throw FormatError("bad magic at offset 0 in " + path);
    }
    const std::uint32_t version = r.u32();
    if (version != kNdrVersion)
        throw FormatError("unsupported version " + std::to_string(version) +
                          " at offset 4 in " + path);
    Recording rec;
    rec.channel_count = r.u32();
    const std::uint64_t t_count = r.u64();
    rec.spikes.resize(t_count * rec.channel_count);
    for (auto& s : rec.spikes) s = r.u16();
    rec.velocity = Matrix(t_count, 2);
    for (std::size_t t = 0; t < t_count; ++t) {
        rec.velocity(t, 0) = static_cast<double>(r.f32());
        rec.velocity(t, 1) = static_cast<double>(r.f32());
    }
    if (!r.at_end()) r.fail("trailing bytes");
    rec.name = std::filesystem::path(path).stem().string();
    return rec;
}

// ---------------------------------------------------------------------------
// Contiguous time split: first half trains, the middle quarter validates,
// the remainder tests. Floor rule for odd lengths: |train| = T/2,
// |val| = T/4, |test| = T - |train| - |val|.

struct SplitRecordings {
    Recording train, val, test;
};

namespace detail {
inline Recording slice_recording(const Recording& rec, std::size_t t0, std::size_t t1,
                                 const char* tag) {
    Recording out;
    out.channel_count = rec.channel_count;
    out.sample_period_us = rec.sample_period_us;
    out.name = rec.name.empty() ? tag : rec.name + "/" + tag;
    out.spikes.assign(rec.spikes.begin() + t0 * rec.channel_count,
                      rec.spikes.begin() + t1 * rec.channel_count);
    out.velocity = slice_rows(rec.velocity, t0, t1);
    return out;
}
}  // namespace detail

inline SplitRecordings split_recording(const Recording& rec) {
    const std::size_t t_count = rec.sample_count();
    if (t_count < 4)
        throw DataError("split: recording too short, need at least 4 samples, got " +
                        std::to_string(t_count));
    const std::size_t n_train = t_count / 2;
    const std::size_t n_val = t_count / 4;
    return SplitRecordings{
        detail::slice_recording(rec, 0, n_train, "train"),
        detail::slice_recording(rec, n_train, n_train + n_val, "val"),
        detail::slice_recording(rec, n_train + n_val, t_count, "test"),
    };
}

}  // namespace aegru
