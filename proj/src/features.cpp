#include "vigicaps/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace vigicaps::features {

namespace {

using json = nlohmann::json;
constexpr double kPi = std::numbers::pi;
constexpr double kPowerFloor = 1e-12;

/// Hann window (periodic) and the DFT projection tables for bins 1..50.
struct SpectralTables {
  std::array<double, kWindowSamples> hann;
  double window_energy;  // sum of hann^2
  // cos/sin for bin k at sample n, bins 1..50
  std::vector<double> cos_table, sin_table;

  SpectralTables() {
    window_energy = 0.0;
    for (int n = 0; n < kWindowSamples; ++n) {
      hann[static_cast<std::size_t>(n)] = 0.5 * (1.0 - std::cos(2.0 * kPi * n / kWindowSamples));
      window_energy += hann[static_cast<std::size_t>(n)] * hann[static_cast<std::size_t>(n)];
    }
    const int max_bin = 2 * kBands;  // 50
    cos_table.resize(static_cast<std::size_t>(max_bin) * kWindowSamples);
    sin_table.resize(static_cast<std::size_t>(max_bin) * kWindowSamples);
    for (int k = 1; k <= max_bin; ++k)
      for (int n = 0; n < kWindowSamples; ++n) {
        const double arg = 2.0 * kPi * k * n / kWindowSamples;
        cos_table[static_cast<std::size_t>((k - 1) * kWindowSamples + n)] = std::cos(arg);
        sin_table[static_cast<std::size_t>((k - 1) * kWindowSamples + n)] = std::sin(arg);
      }
  }
};

const SpectralTables& tables() {
  static const SpectralTables t;
  return t;
}

/// Two-sided periodogram power of bin k (1..50), normalized so that summing
/// 2*P over positive bins recovers the signal variance.
std::array<double, 2 * kBands> bin_power(std::span<const double> window) {
  if (window.size() != kWindowSamples)
    throw DimensionMismatch("spectral window must have " + std::to_string(kWindowSamples) + " samples");
  const auto& t = tables();
  std::array<double, kWindowSamples> wx;
  for (int n = 0; n < kWindowSamples; ++n)
    wx[static_cast<std::size_t>(n)] = window[static_cast<std::size_t>(n)] * t.hann[static_cast<std::size_t>(n)];
  std::array<double, 2 * kBands> power;
  for (int k = 1; k <= 2 * kBands; ++k) {
    double re = 0.0, im = 0.0;
    const double* ct = t.cos_table.data() + (k - 1) * kWindowSamples;
    const double* st = t.sin_table.data() + (k - 1) * kWindowSamples;
    for (int n = 0; n < kWindowSamples; ++n) {
      re += wx[static_cast<std::size_t>(n)] * ct[n];
      im -= wx[static_cast<std::size_t>(n)] * st[n];
    }
    power[static_cast<std::size_t>(k - 1)] = (re * re + im * im) / (kWindowSamples * t.window_energy);
  }
  return power;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid) - 1, v.end());
    m = 0.5 * (m + v[mid - 1]);
  }
  return m;
}

}  // namespace

std::vector<SegmentWindows> segment_and_window(const Tensor& channels_by_samples) {
  if (channels_by_samples.ndim() != 2) throw DimensionMismatch("expected [channels, samples]");
  const std::int64_t channels = channels_by_samples.dim(0);
  const std::int64_t n = channels_by_samples.dim(1);
  if (n < kSegmentSamples)
    throw TooShort("need at least " + std::to_string(kSegmentSamples) + " samples, got " + std::to_string(n));
  const std::int64_t n_segments = n / kSegmentSamples;
  auto src = channels_by_samples.data();
  std::vector<SegmentWindows> out;
  out.reserve(static_cast<std::size_t>(n_segments));
  for (std::int64_t s = 0; s < n_segments; ++s) {
    SegmentWindows seg;
    seg.segment_index = s;
    seg.windows = Tensor({kWindowsPerSegment, channels, kWindowSamples});
    auto dst = seg.windows.mutable_data();
    for (std::int64_t w = 0; w < kWindowsPerSegment; ++w) {
      const std::int64_t start = s * kSegmentSamples + w * kHopSamples;
      for (std::int64_t ch = 0; ch < channels; ++ch)
        std::copy_n(src.data() + ch * n + start, kWindowSamples,
                    dst.data() + (w * channels + ch) * kWindowSamples);
    }
    out.push_back(std::move(seg));
  }
  return out;
}

std::array<double, kBands> band_variance(std::span<const double> window) {
  const auto power = bin_power(window);
  std::array<double, kBands> variance;
  for (int b = 0; b < kBands; ++b) {
    // band [1+2b, 3+2b) covers bins 1+2b and 2+2b; factor 2 folds in the
    // negative-frequency half
    variance[static_cast<std::size_t>(b)] =
        2.0 * (power[static_cast<std::size_t>(2 * b)] + power[static_cast<std::size_t>(2 * b + 1)]);
  }
  return variance;
}

std::array<double, kBands> psd_log(std::span<const double> window) {
  const auto power = bin_power(window);
  std::array<double, kBands> out;
  for (int b = 0; b < kBands; ++b) {
    const double mean_power =
        0.5 * (power[static_cast<std::size_t>(2 * b)] + power[static_cast<std::size_t>(2 * b + 1)]);
    out[static_cast<std::size_t>(b)] = std::log(std::max(mean_power, kPowerFloor));
  }
  return out;
}

double diff_entropy_from_variance(double variance) {
  return 0.5 * std::log(2.0 * kPi * std::numbers::e * std::max(variance, kPowerFloor));
}

std::array<double, kBands> diff_entropy(std::span<const double> window) {
  const auto variance = band_variance(window);
  std::array<double, kBands> out;
  for (int b = 0; b < kBands; ++b)
    out[static_cast<std::size_t>(b)] = diff_entropy_from_variance(variance[static_cast<std::size_t>(b)]);
  return out;
}

namespace {

struct PeakSearch {
  double scale_sigma_s;
  double min_separation_s;
  bool bipolar;  // search |c| instead of c
};

std::vector<double> ricker_cwt(std::span<const double> x, double sigma_samples) {
  const int half = static_cast<int>(std::ceil(4.0 * sigma_samples));
  std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
  double norm = 0.0;
  for (int m = -half; m <= half; ++m) {
    const double z = static_cast<double>(m) / sigma_samples;
    const double v = (1.0 - z * z) * std::exp(-0.5 * z * z);
    kernel[static_cast<std::size_t>(m + half)] = v;
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : kernel) v /= norm;

  const auto n = static_cast<std::int64_t>(x.size());
  std::vector<double> c(x.size(), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const std::int64_t m0 = std::max<std::int64_t>(-half, -i);
    const std::int64_t m1 = std::min<std::int64_t>(half, n - 1 - i);
    for (std::int64_t m = m0; m <= m1; ++m)
      acc += x[static_cast<std::size_t>(i + m)] * kernel[static_cast<std::size_t>(m + half)];
    c[static_cast<std::size_t>(i)] = acc;
  }
  return c;
}

struct RawPeak {
  std::int64_t index;
  double value;      // signed coefficient at the peak
  double duration_s;
};

std::vector<RawPeak> find_peaks(const std::vector<double>& coeff, const PeakSearch& spec, double fs) {
  std::vector<double> mag(coeff.size());
  for (std::size_t i = 0; i < coeff.size(); ++i) mag[i] = spec.bipolar ? std::abs(coeff[i]) : coeff[i];

  const double med = median_of(mag);
  std::vector<double> dev(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) dev[i] = std::abs(mag[i] - med);
  const double threshold = std::max(3.0 * median_of(dev), kPowerFloor);

  std::vector<RawPeak> peaks;
  const auto n = static_cast<std::int64_t>(mag.size());
  for (std::int64_t i = 1; i + 1 < n; ++i) {
    const double v = mag[static_cast<std::size_t>(i)];
    if (v <= threshold) continue;
    if (!(v > mag[static_cast<std::size_t>(i - 1)] && v >= mag[static_cast<std::size_t>(i + 1)])) continue;
    std::int64_t lo = i, hi = i;
    while (lo > 0 && mag[static_cast<std::size_t>(lo - 1)] > threshold) --lo;
    while (hi + 1 < n && mag[static_cast<std::size_t>(hi + 1)] > threshold) ++hi;
    peaks.push_back({i, coeff[static_cast<std::size_t>(i)], static_cast<double>(hi - lo + 1) / fs});
  }

  // non-maximum suppression inside the minimum separation
  std::sort(peaks.begin(), peaks.end(),
            [&](const RawPeak& a, const RawPeak& b) { return std::abs(a.value) > std::abs(b.value); });
  const auto min_sep = static_cast<std::int64_t>(spec.min_separation_s * fs);
  std::vector<RawPeak> kept;
  for (const auto& p : peaks) {
    bool close = false;
    for (const auto& k : kept)
      if (std::llabs(p.index - k.index) < min_sep) {
        close = true;
        break;
      }
    if (!close) kept.push_back(p);
  }
  std::sort(kept.begin(), kept.end(), [](const RawPeak& a, const RawPeak& b) { return a.index < b.index; });
  return kept;
}

}  // namespace

std::vector<EogEvent> detect_eog_events(const Tensor& eog_segment) {
  if (eog_segment.ndim() != 2 || eog_segment.dim(0) != dataio::kEogChannels ||
      eog_segment.dim(1) != kSegmentSamples)
    throw DimensionMismatch("expected a [4, 1600] EOG segment");
  const double fs = 200.0;
  const std::int64_t n = eog_segment.dim(1);
  auto src = eog_segment.data();
  std::vector<double> vertical(static_cast<std::size_t>(n)), horizontal(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    vertical[static_cast<std::size_t>(i)] = 0.5 * (src[i] + src[n + i]);
    horizontal[static_cast<std::size_t>(i)] = 0.5 * (src[2 * n + i] + src[3 * n + i]);
  }

  // blink scale 0.25 s, saccade scale 0.06 s (full main-lobe widths)
  const auto blink_coeff = ricker_cwt(vertical, 0.125 * fs);
  const auto sacc_coeff = ricker_cwt(horizontal, 0.03 * fs);

  // the saccade suppression window spans both lobes of the biphasic response
  const auto blink_peaks = find_peaks(blink_coeff, {0.25, 0.30, false}, fs);
  const auto sacc_peaks = find_peaks(sacc_coeff, {0.06, 0.15, true}, fs);

  std::vector<EogEvent> events;
  for (const auto& p : blink_peaks)
    events.push_back({EventKind::Blink, static_cast<double>(p.index) / fs, p.value, p.duration_s});
  for (const auto& p : sacc_peaks) {
    const double t = static_cast<double>(p.index) / fs;
    bool inside_blink = false;
    for (const auto& b : blink_peaks)
      if (std::abs(t - static_cast<double>(b.index) / fs) < 0.5 * b.duration_s + 0.05) {
        inside_blink = true;  // blink bleed-through on the horizontal pair
        break;
      }
    if (!inside_blink)
      events.push_back({EventKind::Saccade, t, std::abs(p.value), p.duration_s});
  }
  std::sort(events.begin(), events.end(),
            [](const EogEvent& a, const EogEvent& b) { return a.time_s < b.time_s; });
  return events;
}

namespace {

double vec_max(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }
double vec_min(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()); }
double vec_mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}
double vec_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

double population_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

/// Variance over consecutive triples; empty when fewer than 3 values.
std::vector<double> sliding_variance(const std::vector<double>& v) {
  std::vector<double> out;
  for (std::size_t i = 0; i + 3 <= v.size(); ++i)
    out.push_back(population_variance({v.data() + i, 3}));
  return out;
}

struct EventSeries {
  std::vector<double> times, amplitudes, durations;
  std::vector<double> window_rates;     // events per 1 s sub-window
  std::vector<double> window_dur_var;   // duration variance per sub-window
};

EventSeries collect(const std::vector<EogEvent>& events, EventKind kind) {
  EventSeries s;
  std::vector<std::vector<double>> per_window_durations(8);
  s.window_rates.assign(8, 0.0);
  for (const auto& e : events) {
    if (e.kind != kind) continue;
    s.times.push_back(e.time_s);
    s.amplitudes.push_back(e.amplitude);
    s.durations.push_back(e.duration_s);
    const auto w = std::min<std::size_t>(7, static_cast<std::size_t>(std::max(0.0, e.time_s)));
    s.window_rates[w] += 1.0;
    per_window_durations[w].push_back(e.duration_s);
  }
  for (const auto& durs : per_window_durations)
    s.window_dur_var.push_back(population_variance({durs.data(), durs.size()}));
  return s;
}

}  // namespace

const std::array<std::string, kEogFeatureDim>& eog_feature_names() {
  static const std::array<std::string, kEogFeatureDim> names = {
      "blink_rate_max",      "blink_rate_mean",      "blink_rate_sum",
      "blink_rate_var_max",  "blink_rate_var_mean",  "blink_amp_max",
      "blink_amp_min",       "blink_amp_mean",       "blink_amp_var_max",
      "blink_amp_var_mean",  "blink_amp_power",      "blink_amp_mean_power",
      "sacc_rate_max",       "sacc_rate_mean",       "sacc_rate_min",
      "sacc_rate_var_max",   "sacc_rate_var_mean",   "sacc_amp_max",
      "sacc_amp_min",        "sacc_amp_mean",        "sacc_amp_var_max",
      "sacc_amp_var_mean",   "sacc_amp_power",       "sacc_amp_mean_power",
      "blink_count",         "sacc_count",           "blink_dur_var_max",
      "blink_dur_var_mean",  "sacc_dur_var_max",     "sacc_dur_var_mean",
      "blink_dur_win_var_max", "blink_dur_win_var_mean", "blink_dur_win_var_min",
      "sacc_dur_win_var_max",  "sacc_dur_win_var_mean",  "sacc_dur_win_var_min"};
  return names;
}

EOGFeatureVector eog_features_36(const std::vector<EogEvent>& events) {
  std::vector<EogEvent> sorted = events;
  std::sort(sorted.begin(), sorted.end(),
            [](const EogEvent& a, const EogEvent& b) { return a.time_s < b.time_s; });
  const EventSeries blink = collect(sorted, EventKind::Blink);
  const EventSeries sacc = collect(sorted, EventKind::Saccade);

  auto amp_block = [](const EventSeries& s, double* out) {
    const auto var = sliding_variance(s.amplitudes);
    const double power = [&] {
      double p = 0.0;
      for (double a : s.amplitudes) p += a * a;
      return p;
    }();
    out[0] = vec_max(s.amplitudes);
    out[1] = vec_min(s.amplitudes);
    out[2] = vec_mean(s.amplitudes);
    out[3] = vec_max(var);
    out[4] = vec_mean(var);
    out[5] = power;
    out[6] = s.amplitudes.empty() ? 0.0 : power / static_cast<double>(s.amplitudes.size());
  };

  EOGFeatureVector f;
  double* v = f.values.data();
  const auto blink_rate_var = sliding_variance(blink.window_rates);
  v[0] = vec_max(blink.window_rates);
  v[1] = vec_mean(blink.window_rates);
  v[2] = vec_sum(blink.window_rates);
  v[3] = vec_max(blink_rate_var);
  v[4] = vec_mean(blink_rate_var);
  amp_block(blink, v + 5);

  const auto sacc_rate_var = sliding_variance(sacc.window_rates);
  v[12] = vec_max(sacc.window_rates);
  v[13] = vec_mean(sacc.window_rates);
  v[14] = vec_min(sacc.window_rates);
  v[15] = vec_max(sacc_rate_var);
  v[16] = vec_mean(sacc_rate_var);
  amp_block(sacc, v + 17);

  v[24] = static_cast<double>(blink.times.size());
  v[25] = static_cast<double>(sacc.times.size());
  const auto blink_dur_var = sliding_variance(blink.durations);
  const auto sacc_dur_var = sliding_variance(sacc.durations);
  v[26] = vec_max(blink_dur_var);
  v[27] = vec_mean(blink_dur_var);
  v[28] = vec_max(sacc_dur_var);
  v[29] = vec_mean(sacc_dur_var);
  v[30] = vec_max(blink.window_dur_var);
  v[31] = vec_mean(blink.window_dur_var);
  v[32] = vec_min(blink.window_dur_var);
  v[33] = vec_max(sacc.window_dur_var);
  v[34] = vec_mean(sacc.window_dur_var);
  v[35] = vec_min(sacc.window_dur_var);
  return f;
}

FusedSample fuse(const std::vector<std::array<double, kEegFeatureDim>>& eeg_windows,
                 const EOGFeatureVector& eog, const dataio::VigilanceLabel& label) {
  if (eeg_windows.size() != kWindowsPerSegment)
    throw DimensionMismatch("expected " + std::to_string(kWindowsPerSegment) + " EEG window vectors, got " +
                            std::to_string(eeg_windows.size()));
  FusedSample sample;
  sample.label = label;
  sample.sequence = Tensor({kWindowsPerSegment, kFusedDim});
  auto dst = sample.sequence.mutable_data();
  for (int t = 0; t < kWindowsPerSegment; ++t) {
    std::copy(eeg_windows[static_cast<std::size_t>(t)].begin(), eeg_windows[static_cast<std::size_t>(t)].end(),
              dst.begin() + static_cast<std::ptrdiff_t>(t * kFusedDim));
    std::copy(eog.values.begin(), eog.values.end(),
              dst.begin() + static_cast<std::ptrdiff_t>(t * kFusedDim + kEegFeatureDim));
  }
  return sample;
}

std::vector<FusedSample> extract_features(const dataio::RawRecording& rec,
                                          const std::vector<dataio::VigilanceLabel>& labels) {
  rec.validate();
  if (rec.sample_rate_hz != 200.0)
    throw WrongSampleRate("feature extraction expects 200 Hz input, got " +
                          std::to_string(rec.sample_rate_hz));
  const auto segments = segment_and_window(rec.eeg);

  std::vector<FusedSample> out;
  auto eog_data = rec.eog.data();
  const std::int64_t n = rec.eog.dim(1);
  for (const auto& seg : segments) {
    if (seg.segment_index >= static_cast<std::int64_t>(labels.size())) break;
    const auto& label = labels[static_cast<std::size_t>(seg.segment_index)];

    std::vector<std::array<double, kEegFeatureDim>> eeg_windows(kWindowsPerSegment);
    auto win = seg.windows.data();
    for (int w = 0; w < kWindowsPerSegment; ++w)
      for (int ch = 0; ch < dataio::kEegChannels; ++ch) {
        std::span<const double> window{win.data() + (w * dataio::kEegChannels + ch) * kWindowSamples,
                                       kWindowSamples};
        const auto psd = psd_log(window);
        const auto de = diff_entropy(window);
        for (int b = 0; b < kBands; ++b) {
          eeg_windows[static_cast<std::size_t>(w)][static_cast<std::size_t>(eeg_feature_index(ch, b, 0))] =
              psd[static_cast<std::size_t>(b)];
          eeg_windows[static_cast<std::size_t>(w)][static_cast<std::size_t>(eeg_feature_index(ch, b, 1))] =
              de[static_cast<std::size_t>(b)];
        }
      }

    Tensor eog_segment({dataio::kEogChannels, kSegmentSamples});
    auto eog_dst = eog_segment.mutable_data();
    for (int ch = 0; ch < dataio::kEogChannels; ++ch)
      std::copy_n(eog_data.data() + ch * n + seg.segment_index * kSegmentSamples, kSegmentSamples,
                  eog_dst.data() + ch * kSegmentSamples);
    const auto eog_vec = eog_features_36(detect_eog_events(eog_segment));

    out.push_back(fuse(eeg_windows, eog_vec, label));
  }
  return out;
}

namespace {

constexpr std::uint32_t kFeatureMagic = 0x42464356;  // "VCFB"
constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const std::filesystem::path& path) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw FormatError("short read on " + path.string());
  return v;
}

}  // namespace

void save_feature_file(const std::vector<FusedSample>& samples, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  write_pod(f, kFeatureMagic);
  write_pod(f, kFeatureVersion);
  write_pod(f, static_cast<std::uint32_t>(samples.size()));
  write_pod(f, static_cast<std::uint32_t>(kWindowsPerSegment));
  write_pod(f, static_cast<std::uint32_t>(kFusedDim));
  for (const auto& s : samples) {
    write_pod(f, s.label.segment_index);
    write_pod(f, s.label.perclos);
    auto d = s.sequence.data();
    f.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<FusedSample> load_feature_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  if (read_pod<std::uint32_t>(f, path) != kFeatureMagic) throw FormatError(path.string() + ": bad magic");
  if (read_pod<std::uint32_t>(f, path) != kFeatureVersion) throw FormatError(path.string() + ": bad version");
  const auto count = read_pod<std::uint32_t>(f, path);
  const auto timesteps = read_pod<std::uint32_t>(f, path);
  const auto dim = read_pod<std::uint32_t>(f, path);
  if (timesteps != kWindowsPerSegment || dim != kFusedDim)
    throw FormatError(path.string() + ": unexpected tensor shape");
  std::vector<FusedSample> samples;
  samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    FusedSample s;
    s.label.segment_index = read_pod<std::int64_t>(f, path);
    s.label.perclos = read_pod<double>(f, path);
    s.sequence = Tensor({kWindowsPerSegment, kFusedDim});
    auto d = s.sequence.mutable_data();
    f.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!f) throw FormatError("short read on " + path.string());
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_feature_csv(const std::vector<FusedSample>& samples, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "segment_index,perclos";
  for (int i = 0; i < kFusedDim; ++i) f << ",f_" << i;
  f << '\n';
  f.precision(10);
  for (const auto& s : samples) {
    f << s.label.segment_index << ',' << s.label.perclos;
    auto d = s.sequence.data();
    for (int i = 0; i < kFusedDim; ++i) {
      double acc = 0.0;
      for (int t = 0; t < kWindowsPerSegment; ++t) acc += d[t * kFusedDim + i];
      f << ',' << acc / kWindowsPerSegment;
    }
    f << '\n';
  }
}

void save_feature_manifest(const FeatureSet& set, const std::filesystem::path& dir,
                           const std::vector<std::string>& file_names) {
  json j;
  j["timesteps"] = kWindowsPerSegment;
  j["feature_dim"] = kFusedDim;
  j["participants"] = json::array();
  for (std::size_t i = 0; i < set.participant_ids.size(); ++i)
    j["participants"].push_back({{"id", set.participant_ids[i]},
                                 {"sequences_path", file_names[i]},
                                 {"csv_path", set.participant_ids[i] + "_features.csv"}});
  std::ofstream f(dir / "features_manifest.json");
  if (!f) throw IoError("cannot write features manifest in " + dir.string());
  f << j.dump(2) << "\n";
}

FeatureSet load_feature_set(const std::filesystem::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw FormatError("cannot open " + manifest_path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError("malformed features manifest: " + std::string(e.what()));
  }
  FeatureSet set;
  const auto dir = manifest_path.parent_path();
  try {
    for (const auto& p : j.at("participants")) {
      const auto id = p.at("id").get<std::string>();
      const auto rel = p.at("sequences_path").get<std::string>();
      const int participant = static_cast<int>(set.participant_ids.size());
      set.participant_ids.push_back(id);
      for (auto& sample : load_feature_file(dir / rel)) {
        set.samples.push_back(std::move(sample));
        set.participant_of.push_back(participant);
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("features manifest missing fields: " + std::string(e.what()));
  }
  return set;
}

}  // namespace vigicaps::features
