#pragma once

// Sliding-window segmentation of labeled recordings and the
// repetition-based train/test split.

#include <cmath>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "temgnet/errors.hpp"
#include "temgnet/recording.hpp"
#include "temgnet/tensor.hpp"

namespace temgnet {

// "Pure" emits a window only when every sample shares one non-rest label
// and one repetition. "Majority" accepts mixed windows when one non-rest
// label covers more than half the samples.
enum class LabelPolicy { Pure, Majority };

// Lightweight descriptor; sample data stays in the source recording.
struct Window {
    std::uint32_t subject = 0;
    std::uint8_t label = 0;       // 1..17
    std::uint8_t repetition = 0;  // 1..6
    std::uint32_t source = 0;     // index into SegmentDataset::recordings
    std::uint64_t start = 0;      // first sample of the window
};

struct SegmentDataset {
    int window_samples = 0;
    int step_samples = 0;
    std::vector<std::shared_ptr<const EmgRecording>> recordings;
    std::vector<Window> windows;

    std::size_t size() const { return windows.size(); }
    bool empty() const { return windows.empty(); }

    // Materializes window i as channels x samples.
    Tensor window_tensor(std::size_t i) const {
        const Window& w = windows.at(i);
        const EmgRecording& rec = *recordings.at(w.source);
        const std::int64_t s = static_cast<std::int64_t>(rec.channel_count());
        const std::int64_t width = window_samples;
        std::vector<double> data(static_cast<std::size_t>(s * width));
        for (std::int64_t c = 0; c < s; ++c) {
            const double* src = rec.channels[static_cast<std::size_t>(c)].data() + w.start;
            double* dst = data.data() + c * width;
            for (std::int64_t j = 0; j < width; ++j) dst[j] = src[j];
        }
        return Tensor::from({s, width}, std::move(data));
    }
};

namespace detail {

inline int ms_to_samples(double ms, double fs_hz) {
    return static_cast<int>(std::lround(ms * fs_hz / 1000.0));
}

// Classifies one candidate window. Returns false when the window must be
// dropped under the policy.
inline bool classify_window(const EmgRecording& rec, std::uint64_t start, int w,
                            LabelPolicy policy, std::uint8_t& label, std::uint8_t& rep) {
    if (policy == LabelPolicy::Pure) {
        const std::uint8_t l0 = rec.labels[start];
        const std::uint8_t r0 = rec.repetitions[start];
        if (l0 == 0 || r0 == 0) return false;
        for (int j = 1; j < w; ++j)
            if (rec.labels[start + static_cast<std::uint64_t>(j)] != l0 ||
                rec.repetitions[start + static_cast<std::uint64_t>(j)] != r0)
                return false;
        label = l0;
        rep = r0;
        return true;
    }
    // Majority: the dominant non-rest label must cover > w/2 samples; the
    // repetition is the dominant repetition among that label's samples.
    int label_count[kMaxLabel + 1] = {0};
    for (int j = 0; j < w; ++j) ++label_count[rec.labels[start + static_cast<std::uint64_t>(j)]];
    int best = 0, best_count = 0;
    for (int l = 1; l <= kMaxLabel; ++l)
        if (label_count[l] > best_count) {
            best = l;
            best_count = label_count[l];
        }
    if (2 * best_count <= w) return false;
    int rep_count[kMaxRepetition + 1] = {0};
    for (int j = 0; j < w; ++j) {
        const auto idx = start + static_cast<std::uint64_t>(j);
        if (rec.labels[idx] == best) ++rep_count[rec.repetitions[idx]];
    }
    int best_rep = 1;
    for (int r = 2; r <= kMaxRepetition; ++r)
        if (rep_count[r] > rep_count[best_rep]) best_rep = r;
    if (rep_count[best_rep] == 0) return false;
    label = static_cast<std::uint8_t>(best);
    rep = static_cast<std::uint8_t>(best_rep);
    return true;
}

}  // namespace detail

// Appends every admissible window of one recording; W and step come from
// the dataset header.
inline void segment_into(SegmentDataset& ds, std::shared_ptr<const EmgRecording> rec,
                         LabelPolicy policy = LabelPolicy::Pure) {
    rec->validate();
    const int w = ds.window_samples;
    const int step = ds.step_samples;
    if (w < 1) throw ContractError("window length must be at least one sample");
    if (step < 1) throw ConfigError("segmentation step must be at least one sample");
    const std::uint64_t t = rec->samples();
    if (static_cast<std::uint64_t>(w) > t)
        throw ShapeError("window of " + std::to_string(w) + " samples exceeds recording length " +
                         std::to_string(t));
    const auto source = static_cast<std::uint32_t>(ds.recordings.size());
    ds.recordings.push_back(rec);
    for (std::uint64_t start = 0; start + static_cast<std::uint64_t>(w) <= t;
         start += static_cast<std::uint64_t>(step)) {
        std::uint8_t label = 0, rep = 0;
        if (detail::classify_window(*rec, start, w, policy, label, rep))
            ds.windows.push_back({rec->subject, label, rep, source, start});
    }
}

inline SegmentDataset segment(std::shared_ptr<const EmgRecording> rec, double window_ms,
                              double step_ms, LabelPolicy policy = LabelPolicy::Pure) {
    SegmentDataset ds;
    ds.window_samples = detail::ms_to_samples(window_ms, rec->sample_rate_hz);
    ds.step_samples = detail::ms_to_samples(step_ms, rec->sample_rate_hz);
    segment_into(ds, std::move(rec), policy);
    return ds;
}

struct SplitResult {
    SegmentDataset train;
    SegmentDataset test;
    std::uint64_t dropped = 0;  // windows whose repetition is in neither set
};

inline SplitResult split_by_repetition(const SegmentDataset& ds, const std::set<int>& train_reps,
                                       const std::set<int>& test_reps) {
    for (int r : train_reps)
        if (test_reps.count(r))
            throw ContractError("repetition " + std::to_string(r) +
                                " appears in both train and test sets");
    SplitResult out;
    out.train.window_samples = out.test.window_samples = ds.window_samples;
    out.train.step_samples = out.test.step_samples = ds.step_samples;
    out.train.recordings = out.test.recordings = ds.recordings;
    for (const Window& w : ds.windows) {
        if (train_reps.count(static_cast<int>(w.repetition)))
            out.train.windows.push_back(w);
        else if (test_reps.count(static_cast<int>(w.repetition)))
            out.test.windows.push_back(w);
        else
            ++out.dropped;
    }
    return out;
}

inline const std::set<int>& default_train_reps() {
    static const std::set<int> reps{1, 3, 4, 6};
    return reps;
}

inline const std::set<int>& default_test_reps() {
    static const std::set<int> reps{2, 5};
    return reps;
}

}  // namespace temgnet
