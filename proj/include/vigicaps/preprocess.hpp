#pragma once

#include <span>
#include <vector>

#include "vigicaps/dataio.hpp"

namespace vigicaps::preprocess {

inline constexpr double kTargetRateHz = 200.0;

enum class FilterKind { Notch, Bandpass };

struct FilterSpec {
  FilterKind kind = FilterKind::Notch;
  double center_hz = 50.0;   // notch
  double low_hz = 1.0;       // bandpass edges
  double high_hz = 70.0;
  int order = 2;
  double quality = 30.0;     // notch only
  void validate(double sample_rate_hz) const;
};

/// Normalized second-order section (a0 == 1).
struct Biquad {
  double b0, b1, b2, a1, a2;
};

/// Butterworth cascades designed from the analog prototype Q ladder.
std::vector<Biquad> butterworth_lowpass(double cutoff_hz, double sample_rate_hz, int order);
std::vector<Biquad> butterworth_highpass(double cutoff_hz, double sample_rate_hz, int order);
Biquad notch_biquad(double center_hz, double sample_rate_hz, double quality);

/// Zero-phase (forward-backward) cascade application with odd reflection
/// padding; output length equals input length.
std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> x);

/// Integer decimation to 200 Hz after an 80 Hz anti-alias low-pass.
/// A 200 Hz recording is returned unchanged.
dataio::RawRecording resample_to_200hz(const dataio::RawRecording& rec);

/// Zero-phase 50 Hz notch (Q = 30); requires 200 Hz input.
dataio::RawRecording notch_50hz(const dataio::RawRecording& rec);

/// Zero-phase 1-70 Hz band-pass; requires 200 Hz input.
dataio::RawRecording bandpass_1_70(const dataio::RawRecording& rec);

/// Per-channel map of [min, max] onto [-1, 1]; constant channels become zeros.
dataio::RawRecording minmax_normalize(const dataio::RawRecording& rec);

/// resample -> notch -> band-pass -> min-max, the full conditioning chain.
dataio::RawRecording preprocess_recording(const dataio::RawRecording& rec);

}  // namespace vigicaps::preprocess
