#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vigicaps/errors.hpp"
#include "vigicaps/tensor.hpp"

namespace vigicaps::dataio {

inline constexpr int kEegChannels = 17;
inline constexpr int kEogChannels = 4;
inline constexpr double kSegmentSeconds = 8.0;

/// SEED-VIG montage: temporal and posterior EEG sites plus forehead EOG.
const std::array<std::string, kEegChannels>& eeg_channel_names();
const std::array<std::string, kEogChannels>& eog_channel_names();

struct RawRecording {
  std::string participant_id;
  Tensor eeg;  // [17, samples]
  Tensor eog;  // [4, samples]
  double sample_rate_hz = 0.0;

  std::int64_t samples() const { return eeg.defined() ? eeg.dim(1) : 0; }
  void validate() const;
};

/// Per-segment durations of the four eye activities, in seconds.
struct EyeEventLog {
  double blink_s = 0.0;
  double clos_s = 0.0;
  double fixation_s = 0.0;
  double saccade_s = 0.0;
};

struct VigilanceLabel {
  double perclos = 0.0;
  std::int64_t segment_index = 0;
};

struct ManifestEntry {
  std::string id;
  std::string eeg_path;
  std::string eog_path;
  std::string labels_path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> participants;
  double sample_rate_hz = 0.0;
};

/// PERCLOS = (blink + CLOS) / (blink + fixation + saccade + CLOS).
VigilanceLabel compute_perclos(const EyeEventLog& events, std::int64_t segment_index = 0);

struct SynthConfig {
  double duration_minutes = 30.0;
  double sample_rate_hz = 200.0;
  // latent vigilance process (Ornstein-Uhlenbeck, clipped to [0,1])
  double latent_tau_s = 75.0;
  double latent_mean = 0.5;
  double latent_sigma = 0.30;
  // signal composition
  double eeg_noise = 0.35;
  double line_amplitude = 0.12;  // 50 Hz interference
  double eog_noise = 0.04;

  void validate() const;
  std::int64_t segments() const;
  std::int64_t samples() const;
};

struct SynthSession {
  RawRecording recording;
  std::vector<VigilanceLabel> labels;
  std::vector<EyeEventLog> events;
  /// Segment-mean latent vigilance; test/analysis ground truth.
  std::vector<double> latent;
};

/// Pure function of (config, seed): same arguments reproduce the session
/// bit for bit. Higher latent vigilance (drowsiness) raises 5-17 Hz EEG
/// power, lowers 35-51 Hz power, and increases blink rate and duration.
SynthSession synth_session(const SynthConfig& config, std::uint64_t seed,
                           const std::string& participant_id = "p00");

/// Recording files: <base>.eeg.f32 + <base>.eog.f32 (raw little-endian
/// 32-bit floats, channel-major) described by a <base>.json sidecar.
void save_recording(const RawRecording& rec, const std::filesystem::path& base);
RawRecording load_recording(const std::filesystem::path& base);

void save_labels(const std::vector<VigilanceLabel>& labels, const std::filesystem::path& csv_path);
std::vector<VigilanceLabel> load_labels(const std::filesystem::path& csv_path);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace vigicaps::dataio
