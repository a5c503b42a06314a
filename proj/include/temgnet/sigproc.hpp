#pragma once

// Signal conditioning: Butterworth low-pass filtering, per-channel
// amplitude scaling, and mu-law companding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "temgnet/errors.hpp"
#include "temgnet/recording.hpp"

namespace temgnet {

struct FilterSpec {
    int order = 2;
    double cutoff_hz = 500.0;
    double sample_rate_hz = 2000.0;
    bool zero_phase = true;

    void validate() const {
        if (order < 1) throw ConfigError("filter order must be >= 1, got " + std::to_string(order));
        if (cutoff_hz <= 0.0) throw ConfigError("filter cutoff must be positive");
        if (sample_rate_hz <= 0.0) throw ConfigError("sample rate must be positive");
        if (cutoff_hz >= sample_rate_hz / 2.0)
            throw ConfigError("filter cutoff " + std::to_string(cutoff_hz) +
                              " Hz must lie below the Nyquist frequency " +
                              std::to_string(sample_rate_hz / 2.0) + " Hz");
    }
};

namespace detail {

// One second-order section in direct form II transposed. First-order
// sections use b2 = a2 = 0.
struct Biquad {
    double b0, b1, b2, a1, a2;
};

// Bilinear-transform Butterworth design with cutoff pre-warping. Each
// analog pole pair sits at angle (2k+1)*pi/(2n) off the negative real
// axis; the transform maps the analog prototype onto unity-DC-gain
// digital sections.
inline std::vector<Biquad> design_butterworth(int order, double cutoff_hz, double fs_hz) {
    const double omega = std::tan(M_PI * cutoff_hz / fs_hz);  // pre-warped cutoff
    std::vector<Biquad> sections;
    const int pairs = order / 2;
    for (int k = 0; k < pairs; ++k) {
        const double a = -std::sin((2.0 * k + 1.0) * M_PI / (2.0 * order));  // Re(pole), < 0
        const double w2 = omega * omega;
        const double a0 = 1.0 - 2.0 * a * omega + w2;
        sections.push_back({w2 / a0, 2.0 * w2 / a0, w2 / a0,
                            (2.0 * w2 - 2.0) / a0, (1.0 + 2.0 * a * omega + w2) / a0});
    }
    if (order % 2 == 1) {
        const double a0 = 1.0 + omega;
        sections.push_back({omega / a0, omega / a0, 0.0, (omega - 1.0) / a0, 0.0});
    }
    return sections;
}

// In-place single-pass filtering. Internal state starts at the steady
// state for a constant input x[0], so a DC signal passes through exactly.
inline void filter_in_place(const std::vector<Biquad>& sections, std::vector<double>& x) {
    for (const Biquad& s : sections) {
        double s1 = (s.b1 - s.a1 + s.b2 - s.a2) * x[0];
        double s2 = (s.b2 - s.a2) * x[0];
        for (double& v : x) {
            const double y = s.b0 * v + s1;
            s1 = s.b1 * v - s.a1 * y + s2;
            s2 = s.b2 * v - s.a2 * y;
            v = y;
        }
    }
}

}  // namespace detail

// Low-pass Butterworth. Single pass gives the designed magnitude
// response; zero_phase runs forward-backward over an odd-reflection
// extension of 3*order samples per edge, squaring the magnitude and
// cancelling phase.
inline std::vector<double> butterworth_lowpass(const std::vector<double>& signal,
                                               const FilterSpec& spec) {
    spec.validate();
    const std::size_t pad = static_cast<std::size_t>(3 * spec.order);
    if (signal.size() <= pad)
        throw ShapeError("signal length " + std::to_string(signal.size()) +
                         " must exceed 3*order = " + std::to_string(pad));
    auto sections = detail::design_butterworth(spec.order, spec.cutoff_hz, spec.sample_rate_hz);

    if (!spec.zero_phase) {
        std::vector<double> out = signal;
        detail::filter_in_place(sections, out);
        return out;
    }

    const std::size_t t = signal.size();
    std::vector<double> ext;
    ext.reserve(t + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * signal[0] - signal[pad - i]);
    ext.insert(ext.end(), signal.begin(), signal.end());
    for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * signal[t - 1] - signal[t - 2 - i]);

    detail::filter_in_place(sections, ext);
    std::reverse(ext.begin(), ext.end());
    detail::filter_in_place(sections, ext);
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                               ext.begin() + static_cast<std::ptrdiff_t>(pad + t));
}

inline EmgRecording filter_recording(const EmgRecording& rec, const FilterSpec& spec) {
    EmgRecording out = rec;
    for (auto& ch : out.channels) ch = butterworth_lowpass(ch, spec);
    return out;
}

// ---------------------------------------------------------------------------
// amplitude scaling
// ---------------------------------------------------------------------------

struct ChannelScaleStats {
    std::vector<double> max_abs;  // one strictly positive entry per channel

    void validate() const {
        for (std::size_t c = 0; c < max_abs.size(); ++c)
            if (!(max_abs[c] > 0.0))
                throw DomainError("channel " + std::to_string(c) +
                                  " has zero max amplitude; cannot scale a degenerate channel");
    }
};

// Max-absolute amplitude per channel over samples belonging to the given
// repetitions. Computed on the training split only so no test-set
// information leaks into the normalization.
inline ChannelScaleStats compute_scale_stats(const EmgRecording& rec,
                                             const std::set<int>& reps) {
    ChannelScaleStats stats;
    stats.max_abs.assign(rec.channel_count(), 0.0);
    const std::size_t t = rec.samples();
    for (std::size_t i = 0; i < t; ++i) {
        if (!reps.count(static_cast<int>(rec.repetitions[i]))) continue;
        for (std::size_t c = 0; c < rec.channel_count(); ++c) {
            const double a = std::abs(rec.channels[c][i]);
            if (a > stats.max_abs[c]) stats.max_abs[c] = a;
        }
    }
    stats.validate();
    return stats;
}

struct ScaledRecording {
    EmgRecording recording;
    std::uint64_t clamp_count = 0;  // samples that exceeded [-1,1] after scaling
};

// Divides each channel by its training max-abs. Test-split samples can
// land outside [-1,1]; those are clamped and counted rather than allowed
// to break the companding domain downstream.
inline ScaledRecording channel_scale(const EmgRecording& rec, const ChannelScaleStats& stats) {
    if (stats.max_abs.size() != rec.channel_count())
        throw ShapeError("scale stats cover " + std::to_string(stats.max_abs.size()) +
                         " channels but the recording has " + std::to_string(rec.channel_count()));
    stats.validate();
    ScaledRecording out{rec, 0};
    for (std::size_t c = 0; c < rec.channel_count(); ++c) {
        const double inv = 1.0 / stats.max_abs[c];
        for (double& v : out.recording.channels[c]) {
            v *= inv;
            if (v > 1.0) {
                v = 1.0;
                ++out.clamp_count;
            } else if (v < -1.0) {
                v = -1.0;
                ++out.clamp_count;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// mu-law companding
// ---------------------------------------------------------------------------

inline constexpr double kDefaultMu = 255.0;

// F(x) = sign(x) * ln(1 + mu|x|) / ln(1 + mu), an odd, strictly
// increasing bijection of [-1, 1] onto itself.
inline double mu_law(double x, double mu = kDefaultMu) {
    if (mu <= 0.0) throw ContractError("mu must be positive");
    if (std::abs(x) > 1.0)
        throw DomainError("mu_law: |" + std::to_string(x) + "| exceeds 1");
    if (x == 0.0) return 0.0;
    const double y = std::log(1.0 + mu * std::abs(x)) / std::log(1.0 + mu);
    return x < 0.0 ? -y : y;
}

inline EmgRecording mu_law_recording(const EmgRecording& rec, double mu = kDefaultMu) {
    if (mu <= 0.0) throw ContractError("mu must be positive");
    EmgRecording out = rec;
    const double denom = std::log(1.0 + mu);
    for (std::size_t c = 0; c < out.channel_count(); ++c) {
        auto& ch = out.channels[c];
        for (std::size_t i = 0; i < ch.size(); ++i) {
            const double x = ch[i];
            if (std::abs(x) > 1.0)
                throw DomainError("mu_law: |x| = " + std::to_string(std::abs(x)) +
                                  " exceeds 1 at channel " + std::to_string(c) + ", sample " +
                                  std::to_string(i));
            if (x == 0.0) continue;
            const double y = std::log(1.0 + mu * std::abs(x)) / denom;
            ch[i] = x < 0.0 ? -y : y;
        }
    }
    return out;
}

}  // namespace temgnet
