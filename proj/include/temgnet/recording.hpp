#pragma once

// Multichannel sEMG recording: channel-major signal plus per-sample
// movement label and repetition index. Label 0 is rest; repetition 0 is
// the rest/inter-trial sentinel (movement samples carry 1..6).

#include <cstdint>
#include <string>
#include <vector>

#include "temgnet/errors.hpp"

namespace temgnet {

inline constexpr int kChannelCount = 12;
inline constexpr int kMaxLabel = 17;
inline constexpr int kMaxRepetition = 6;

struct EmgRecording {
    std::uint32_t subject = 0;
    double sample_rate_hz = 2000.0;
    std::vector<std::vector<double>> channels;  // one row per electrode
    std::vector<std::uint8_t> labels;           // 0 = rest, 1..17 = movement
    std::vector<std::uint8_t> repetitions;      // 0 = rest sentinel, 1..6

    std::size_t channel_count() const { return channels.size(); }
    std::size_t samples() const { return channels.empty() ? 0 : channels[0].size(); }

    void validate() const {
        if (channels.empty()) throw ContractError("recording has no channels");
        const std::size_t t = channels[0].size();
        for (std::size_t c = 1; c < channels.size(); ++c)
            if (channels[c].size() != t)
                throw ContractError("recording channel " + std::to_string(c) +
                                    " length differs from channel 0");
        if (labels.size() != t || repetitions.size() != t)
            throw ContractError("label/repetition arrays must match the sample count " +
                                std::to_string(t));
        for (std::size_t i = 0; i < t; ++i) {
            if (labels[i] > kMaxLabel)
                throw ContractError("label " + std::to_string(labels[i]) + " at sample " +
                                    std::to_string(i) + " outside 0..17");
            if (repetitions[i] > kMaxRepetition)
                throw ContractError("repetition " + std::to_string(repetitions[i]) +
                                    " at sample " + std::to_string(i) + " outside 0..6");
        }
        if (sample_rate_hz <= 0.0) throw ContractError("sample rate must be positive");
    }
};

}  // namespace temgnet
