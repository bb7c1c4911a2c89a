#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "vigicaps/dataio.hpp"
#include "vigicaps/tensor.hpp"

namespace vigicaps::features {

inline constexpr int kWindowsPerSegment = 15;  // 1 s windows, 50% overlap, over 8 s
inline constexpr int kWindowSamples = 200;
inline constexpr int kHopSamples = 100;
inline constexpr int kSegmentSamples = 1600;
inline constexpr int kBands = 25;              // [1+2k, 3+2k) Hz, k = 0..24
inline constexpr int kEegFeatureDim = dataio::kEegChannels * kBands * 2;  // log-PSD + DE = 850
inline constexpr int kEogFeatureDim = 36;
inline constexpr int kFusedDim = kEegFeatureDim + kEogFeatureDim;  // 886

/// Flat EEG feature layout within a window vector:
/// index = channel*50 + band*2 + kind, kind 0 = log-PSD, 1 = DE.
inline constexpr int eeg_feature_index(int channel, int band, int kind) {
  return channel * kBands * 2 + band * 2 + kind;
}

struct SegmentWindows {
  Tensor windows;  // [15, channels, 200]
  std::int64_t segment_index = 0;
};

/// Slices a multichannel 200 Hz array into 8 s segments of 15 Hann-ready
/// windows; the trailing partial segment is dropped.
std::vector<SegmentWindows> segment_and_window(const Tensor& channels_by_samples);

/// Log of Hann-periodogram band power, 25 bands of 2 Hz from 1 Hz; the power
/// is floored at 1e-12 before the log.
std::array<double, kBands> psd_log(std::span<const double> window);

/// Differential entropy 0.5*ln(2*pi*e*sigma^2) per band, sigma^2 taken from
/// the same periodogram's band power.
std::array<double, kBands> diff_entropy(std::span<const double> window);

double diff_entropy_from_variance(double variance);

/// Band-limited variance per band (the sigma^2 feeding diff_entropy).
std::array<double, kBands> band_variance(std::span<const double> window);

enum class EventKind { Blink, Saccade };

struct EogEvent {
  EventKind kind;
  double time_s;       // within the segment
  double amplitude;    // peak wavelet coefficient
  double duration_s;   // threshold-crossing width
};

/// Ricker-wavelet peak detection on an 8 s, 4-channel EOG segment: blinks on
/// the vertical pair (channels 0/1) at the 0.25 s scale, saccades on the
/// horizontal pair (channels 2/3) at the 0.06 s scale, thresholds 3x the
/// median absolute deviation of the coefficients.
std::vector<EogEvent> detect_eog_events(const Tensor& eog_segment);

struct EOGFeatureVector {
  std::array<double, kEogFeatureDim> values{};
};

/// Name registry for the 36 statistics, in output order.
const std::array<std::string, kEogFeatureDim>& eog_feature_names();

/// Summary statistics over an event list; order-insensitive (events are
/// sorted by time first). An empty list yields all zeros.
EOGFeatureVector eog_features_36(const std::vector<EogEvent>& events);

struct FusedSample {
  Tensor sequence;  // [15, 886]
  dataio::VigilanceLabel label;
};

/// Per timestep t: fused[t] = concat(eeg[t], eog). The EOG vector is shared
/// by all 15 timesteps of the segment.
FusedSample fuse(const std::vector<std::array<double, kEegFeatureDim>>& eeg_windows,
                 const EOGFeatureVector& eog, const dataio::VigilanceLabel& label);

/// Full extraction for one conditioned recording; labels are aligned by
/// segment index and must cover every complete segment.
std::vector<FusedSample> extract_features(const dataio::RawRecording& rec,
                                          const std::vector<dataio::VigilanceLabel>& labels);

// --- feature files ---------------------------------------------------------

struct FeatureSet {
  std::vector<std::string> participant_ids;
  std::vector<FusedSample> samples;
  std::vector<int> participant_of;  // parallel to samples
};

/// Binary sequence file holding exact [15 x 886] tensors plus labels.
void save_feature_file(const std::vector<FusedSample>& samples, const std::filesystem::path& path);
std::vector<FusedSample> load_feature_file(const std::filesystem::path& path);

/// Inspection CSV: per segment, the label and each feature averaged over the
/// 15 timesteps.
void save_feature_csv(const std::vector<FusedSample>& samples, const std::filesystem::path& path);

void save_feature_manifest(const FeatureSet& set, const std::filesystem::path& dir,
                           const std::vector<std::string>& file_names);
FeatureSet load_feature_set(const std::filesystem::path& manifest_path);

}  // namespace vigicaps::features
