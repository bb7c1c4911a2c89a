#include "vigicaps/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace vigicaps::preprocess {

namespace {

constexpr double kPi = std::numbers::pi;

void apply_biquad_forward(const Biquad& s, std::vector<double>& x) {
  double w1 = 0.0, w2 = 0.0;  // direct form II transposed
  for (auto& v : x) {
    const double in = v;
    const double out = s.b0 * in + w1;
    w1 = s.b1 * in - s.a1 * out + w2;
    w2 = s.b2 * in - s.a2 * out;
    v = out;
  }
}

dataio::RawRecording map_channels(const dataio::RawRecording& rec,
                                  const std::function<std::vector<double>(std::span<const double>)>& fn) {
  dataio::RawRecording out;
  out.participant_id = rec.participant_id;
  out.sample_rate_hz = rec.sample_rate_hz;
  auto transform = [&](const Tensor& in) {
    const std::int64_t channels = in.dim(0), n = in.dim(1);
    std::vector<double> first = fn(std::span<const double>(in.data().data(), static_cast<std::size_t>(n)));
    const auto out_n = static_cast<std::int64_t>(first.size());
    Tensor t({channels, out_n});
    auto dst = t.mutable_data();
    std::copy(first.begin(), first.end(), dst.begin());
    for (std::int64_t ch = 1; ch < channels; ++ch) {
      auto row = fn(std::span<const double>(in.data().data() + ch * n, static_cast<std::size_t>(n)));
      std::copy(row.begin(), row.end(), dst.begin() + static_cast<std::ptrdiff_t>(ch * out_n));
    }
    return t;
  };
  out.eeg = transform(rec.eeg);
  out.eog = transform(rec.eog);
  return out;
}

}  // namespace

void FilterSpec::validate(double sample_rate_hz) const {
  const double nyquist = sample_rate_hz / 2.0;
  if (order < 1) throw InvalidConfig("filter order must be >= 1");
  if (kind == FilterKind::Notch) {
    if (!(center_hz > 0.0 && center_hz < nyquist)) throw InvalidConfig("notch center outside (0, Nyquist)");
    if (!(quality > 0.0)) throw InvalidConfig("notch quality must be positive");
  } else {
    if (!(low_hz > 0.0 && high_hz > low_hz && high_hz < nyquist))
      throw InvalidConfig("band edges must satisfy 0 < low < high < Nyquist");
  }
}

std::vector<Biquad> butterworth_lowpass(double cutoff_hz, double sample_rate_hz, int order) {
  if (order < 2 || order % 2 != 0) throw InvalidConfig("even Butterworth order required");
  std::vector<Biquad> sections;
  const double w0 = 2.0 * kPi * cutoff_hz / sample_rate_hz;
  const double cw = std::cos(w0), sw = std::sin(w0);
  for (int k = 0; k < order / 2; ++k) {
    const double q = 1.0 / (2.0 * std::cos(kPi * (2.0 * k + 1.0) / (2.0 * order)));
    const double alpha = sw / (2.0 * q);
    const double a0 = 1.0 + alpha;
    sections.push_back({(1.0 - cw) / 2.0 / a0, (1.0 - cw) / a0, (1.0 - cw) / 2.0 / a0,
                        -2.0 * cw / a0, (1.0 - alpha) / a0});
  }
  return sections;
}

std::vector<Biquad> butterworth_highpass(double cutoff_hz, double sample_rate_hz, int order) {
  if (order < 2 || order % 2 != 0) throw InvalidConfig("even Butterworth order required");
  std::vector<Biquad> sections;
  const double w0 = 2.0 * kPi * cutoff_hz / sample_rate_hz;
  const double cw = std::cos(w0), sw = std::sin(w0);
  for (int k = 0; k < order / 2; ++k) {
    const double q = 1.0 / (2.0 * std::cos(kPi * (2.0 * k + 1.0) / (2.0 * order)));
    const double alpha = sw / (2.0 * q);
    const double a0 = 1.0 + alpha;
    sections.push_back({(1.0 + cw) / 2.0 / a0, -(1.0 + cw) / a0, (1.0 + cw) / 2.0 / a0,
                        -2.0 * cw / a0, (1.0 - alpha) / a0});
  }
  return sections;
}

Biquad notch_biquad(double center_hz, double sample_rate_hz, double quality) {
  const double w0 = 2.0 * kPi * center_hz / sample_rate_hz;
  const double alpha = std::sin(w0) / (2.0 * quality);
  const double a0 = 1.0 + alpha;
  return {1.0 / a0, -2.0 * std::cos(w0) / a0, 1.0 / a0, -2.0 * std::cos(w0) / a0, (1.0 - alpha) / a0};
}

std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  // odd reflection about the endpoints damps startup transients
  const std::size_t pad = std::min(n - 1, std::size_t{3} * (2 * sections.size() + 1) * 4);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x[0] - x[pad - i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 2 - i]);

  for (const auto& s : sections) apply_biquad_forward(s, ext);
  std::reverse(ext.begin(), ext.end());
  for (const auto& s : sections) apply_biquad_forward(s, ext);
  std::reverse(ext.begin(), ext.end());

  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

dataio::RawRecording resample_to_200hz(const dataio::RawRecording& rec) {
  rec.validate();
  const double ratio = rec.sample_rate_hz / kTargetRateHz;
  const auto factor = static_cast<std::int64_t>(std::llround(ratio));
  if (ratio < 1.0 || std::abs(ratio - static_cast<double>(factor)) > 1e-9)
    throw NonIntegerDecimation("sample rate " + std::to_string(rec.sample_rate_hz) +
                               " is not an integer multiple of 200");
  if (factor == 1) return rec;

  const auto antialias = butterworth_lowpass(80.0, rec.sample_rate_hz, 8);
  dataio::RawRecording out = map_channels(rec, [&](std::span<const double> x) {
    auto filtered = filtfilt(antialias, x);
    std::vector<double> decimated;
    decimated.reserve((filtered.size() + static_cast<std::size_t>(factor) - 1) / static_cast<std::size_t>(factor));
    for (std::size_t i = 0; i < filtered.size(); i += static_cast<std::size_t>(factor))
      decimated.push_back(filtered[i]);
    return decimated;
  });
  out.sample_rate_hz = kTargetRateHz;
  return out;
}

dataio::RawRecording notch_50hz(const dataio::RawRecording& rec) {
  rec.validate();
  if (rec.sample_rate_hz != kTargetRateHz)
    throw WrongSampleRate("notch expects 200 Hz input, got " + std::to_string(rec.sample_rate_hz));
  const Biquad section = notch_biquad(50.0, kTargetRateHz, 30.0);
  const std::vector<Biquad> cascade{section};
  return map_channels(rec, [&](std::span<const double> x) { return filtfilt(cascade, x); });
}

dataio::RawRecording bandpass_1_70(const dataio::RawRecording& rec) {
  rec.validate();
  if (rec.sample_rate_hz != kTargetRateHz)
    throw WrongSampleRate("band-pass expects 200 Hz input, got " + std::to_string(rec.sample_rate_hz));
  // high-pass at 1 Hz (order 4) cascaded with low-pass at 70 Hz (order 8);
  // the steeper low-pass keeps the 10-60 Hz ripple inside 1 dB after the
  // zero-phase double application.
  auto cascade = butterworth_highpass(1.0, kTargetRateHz, 4);
  auto lp = butterworth_lowpass(70.0, kTargetRateHz, 8);
  cascade.insert(cascade.end(), lp.begin(), lp.end());
  return map_channels(rec, [&](std::span<const double> x) { return filtfilt(cascade, x); });
}

dataio::RawRecording minmax_normalize(const dataio::RawRecording& rec) {
  rec.validate();
  return map_channels(rec, [](std::span<const double> x) {
    const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<double> out(x.size());
    if (hi == lo) return out;  // constant channel -> zeros
    const double scale = 2.0 / (hi - lo);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - lo) * scale - 1.0;
    return out;
  });
}

dataio::RawRecording preprocess_recording(const dataio::RawRecording& rec) {
  return minmax_normalize(bandpass_1_70(notch_50hz(resample_to_200hz(rec))));
}

}  // namespace vigicaps::preprocess
