#include "vigicaps/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "vigicaps/rng.hpp"

namespace vigicaps::dataio {

namespace {

using json = nlohmann::json;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

const std::array<std::string, kEegChannels>& eeg_channel_names() {
  static const std::array<std::string, kEegChannels> names = {
      "FT7", "FT8", "T7", "T8", "TP7", "TP8", "CP1", "CP2", "P1",
      "PZ",  "P2",  "PO3", "POZ", "PO4", "O1",  "OZ",  "O2"};
  return names;
}

const std::array<std::string, kEogChannels>& eog_channel_names() {
  static const std::array<std::string, kEogChannels> names = {"EOG1", "EOG2", "EOG3", "EOG4"};
  return names;
}

void RawRecording::validate() const {
  if (!eeg.defined() || !eog.defined() || eeg.ndim() != 2 || eog.ndim() != 2)
    throw ChannelMismatch("recording must hold 2-D eeg and eog arrays");
  if (eeg.dim(0) != kEegChannels)
    throw ChannelMismatch("expected " + std::to_string(kEegChannels) + " EEG channels, got " +
                          std::to_string(eeg.dim(0)));
  if (eog.dim(0) != kEogChannels)
    throw ChannelMismatch("expected " + std::to_string(kEogChannels) + " EOG channels, got " +
                          std::to_string(eog.dim(0)));
  if (eeg.dim(1) != eog.dim(1)) throw ChannelMismatch("eeg and eog sample counts differ");
  if (!(sample_rate_hz > 0.0)) throw InvalidConfig("sample rate must be positive");
}

VigilanceLabel compute_perclos(const EyeEventLog& events, std::int64_t segment_index) {
  if (events.blink_s < 0 || events.clos_s < 0 || events.fixation_s < 0 || events.saccade_s < 0)
    throw InvalidConfig("eye-event durations must be nonnegative");
  const double total = events.blink_s + events.clos_s + events.fixation_s + events.saccade_s;
  if (total <= 0.0) throw ZeroTotalDuration("all four eye-event durations are zero");
  return VigilanceLabel{(events.blink_s + events.clos_s) / total, segment_index};
}

void SynthConfig::validate() const {
  if (duration_minutes * 60.0 < kSegmentSeconds)
    throw InvalidConfig("duration must cover at least one 8 s segment");
  if (!(sample_rate_hz > 0.0)) throw InvalidConfig("sample rate must be positive");
  if (!(latent_tau_s > 0.0) || !(latent_sigma > 0.0))
    throw InvalidConfig("latent process rates must be positive");
  if (eeg_noise < 0.0 || eog_noise < 0.0 || line_amplitude < 0.0)
    throw InvalidConfig("noise amplitudes must be nonnegative");
}

std::int64_t SynthConfig::segments() const {
  return static_cast<std::int64_t>(std::floor(duration_minutes * 60.0 / kSegmentSeconds));
}

std::int64_t SynthConfig::samples() const {
  return static_cast<std::int64_t>(std::llround(duration_minutes * 60.0 * sample_rate_hz));
}

namespace {

struct Oscillator {
  double freq;
  double phase;
  double gain;
};

/// Deterministic per-segment event schedule derived from the latent level.
struct SegmentEvents {
  std::vector<double> blink_time, blink_dur, blink_amp;
  std::vector<double> sacc_time, sacc_dur, sacc_amp;
};

SegmentEvents schedule_segment_events(double latent, Rng& rng) {
  SegmentEvents ev;
  const double margin = 0.45;
  auto place = [&](int count, std::vector<double>& times) {
    for (int i = 0; i < count; ++i) times.push_back(rng.uniform(margin, kSegmentSeconds - margin));
    std::sort(times.begin(), times.end());
    // keep pulses separated so detection sees distinct peaks
    for (std::size_t i = 1; i < times.size(); ++i)
      times[i] = std::max(times[i], times[i - 1] + 0.45);
    while (!times.empty() && times.back() > kSegmentSeconds - margin) times.pop_back();
  };

  const int blinks =
      std::max(0, static_cast<int>(std::lround(1.5 + 5.5 * latent + rng.normal(0.0, 0.3))));
  place(blinks, ev.blink_time);
  for (std::size_t i = 0; i < ev.blink_time.size(); ++i) {
    ev.blink_dur.push_back(std::clamp(0.12 + 0.45 * latent + rng.normal(0.0, 0.02), 0.06, 0.9));
    ev.blink_amp.push_back(1.0 + 0.4 * rng.uniform());
  }

  const int saccades =
      std::max(0, static_cast<int>(std::lround(6.0 - 4.0 * latent + rng.normal(0.0, 0.3))));
  place(saccades, ev.sacc_time);
  for (std::size_t i = 0; i < ev.sacc_time.size(); ++i) {
    ev.sacc_dur.push_back(std::clamp(0.045 + 0.02 * rng.uniform(), 0.03, 0.09));
    ev.sacc_amp.push_back(0.55 + 0.3 * rng.uniform());
  }
  return ev;
}

}  // namespace

SynthSession synth_session(const SynthConfig& config, std::uint64_t seed, const std::string& participant_id) {
  config.validate();
  const double fs = config.sample_rate_hz;
  const std::int64_t n = config.samples();
  const std::int64_t n_segments = config.segments();
  const auto seg_samples = static_cast<std::int64_t>(std::llround(kSegmentSeconds * fs));

  Rng latent_rng(Rng::derive(seed, 0));
  Rng eeg_rng(Rng::derive(seed, 1));
  Rng eog_rng(Rng::derive(seed, 2));
  Rng event_rng(Rng::derive(seed, 3));

  // latent vigilance: exact OU discretization, clipped to [0,1]
  std::vector<double> latent(static_cast<std::size_t>(n));
  {
    const double dt = 1.0 / fs;
    const double decay = std::exp(-dt / config.latent_tau_s);
    const double diffuse = config.latent_sigma * std::sqrt(1.0 - decay * decay);
    double v = std::clamp(config.latent_mean + config.latent_sigma * latent_rng.normal(), 0.05, 0.95);
    for (std::int64_t i = 0; i < n; ++i) {
      latent[static_cast<std::size_t>(i)] = v;
      v = config.latent_mean + (v - config.latent_mean) * decay + diffuse * latent_rng.normal();
      v = std::clamp(v, 0.0, 1.0);
    }
  }

  SynthSession out;
  out.recording.participant_id = participant_id;
  out.recording.sample_rate_hz = fs;
  out.recording.eeg = Tensor({kEegChannels, n});
  out.recording.eog = Tensor({kEogChannels, n});

  // EEG: per channel, drowsiness-tracking oscillators plus noise and 50 Hz
  // line. 5-17 Hz gain rises with the latent level, 35-48 Hz gain falls
  // with it, and a fixed mid-band tone keeps 17-35 Hz uncorrelated.
  {
    auto eeg = out.recording.eeg.mutable_data();
    for (int ch = 0; ch < kEegChannels; ++ch) {
      const bool temporal = ch < 6;  // FT7..TP8 in the montage order
      const Oscillator slow[3] = {
          {6.0 + eeg_rng.uniform(-0.5, 0.5), eeg_rng.uniform(0.0, kTwoPi), 0.8},
          {10.0 + eeg_rng.uniform(-0.8, 0.8), eeg_rng.uniform(0.0, kTwoPi), 1.0},
          {14.0 + eeg_rng.uniform(-0.8, 0.8), eeg_rng.uniform(0.0, kTwoPi), 0.6},
      };
      const Oscillator fast[3] = {
          {38.0 + eeg_rng.uniform(-1.0, 1.0), eeg_rng.uniform(0.0, kTwoPi), temporal ? 1.0 : 0.45},
          {43.0 + eeg_rng.uniform(-1.0, 1.0), eeg_rng.uniform(0.0, kTwoPi), temporal ? 0.8 : 0.35},
          {47.0 + eeg_rng.uniform(-1.0, 1.0), eeg_rng.uniform(0.0, kTwoPi), temporal ? 0.6 : 0.3},
      };
      const Oscillator mid{25.0 + eeg_rng.uniform(-1.5, 1.5), eeg_rng.uniform(0.0, kTwoPi), 0.35};
      const double slow_gain = temporal ? 0.7 : 1.0;
      const double line_phase = eeg_rng.uniform(0.0, kTwoPi);
      double* row = eeg.data() + ch * n;
      for (std::int64_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        const double v = latent[static_cast<std::size_t>(i)];
        double x = 0.0;
        for (const auto& o : slow)
          x += slow_gain * o.gain * (0.25 + 0.75 * v) * std::sin(kTwoPi * o.freq * t + o.phase);
        for (const auto& o : fast)
          x += o.gain * (1.0 - 0.75 * v) * std::sin(kTwoPi * o.freq * t + o.phase);
        x += mid.gain * std::sin(kTwoPi * mid.freq * t + mid.phase);
        x += config.line_amplitude * std::sin(kTwoPi * 50.0 * t + line_phase);
        x += config.eeg_noise * eeg_rng.normal();
        row[i] = x;
      }
    }
  }

  // EOG: noise floor, then blink pulses (vertical pair) and biphasic
  // saccades (horizontal pair) per segment; the same events become labels.
  {
    auto eog = out.recording.eog.mutable_data();
    eog_rng.fill_normal(eog, 0.0, config.eog_noise);
    // blinks land on channels 0/1 and bleed onto 2/3; saccades mirrored
    const double blink_gain[kEogChannels] = {1.0, 0.9, 0.15, 0.13};
    const double sacc_gain[kEogChannels] = {0.12, 0.10, 1.0, 0.9};

    for (std::int64_t s = 0; s < n_segments; ++s) {
      const std::int64_t seg_start = s * seg_samples;
      double latent_sum = 0.0;
      for (std::int64_t i = 0; i < seg_samples; ++i)
        latent_sum += latent[static_cast<std::size_t>(seg_start + i)];
      const double seg_latent = latent_sum / static_cast<double>(seg_samples);
      out.latent.push_back(seg_latent);

      SegmentEvents ev = schedule_segment_events(seg_latent, event_rng);

      EyeEventLog log;
      for (std::size_t b = 0; b < ev.blink_time.size(); ++b) {
        const double dur = ev.blink_dur[b];
        if (dur > 0.4)
          log.clos_s += dur;  // extended closure
        else
          log.blink_s += dur;
        const double center = ev.blink_time[b];
        const double sigma = dur / 4.0;
        const auto i0 = std::max<std::int64_t>(0, static_cast<std::int64_t>((center - 3 * sigma) * fs));
        const auto i1 = std::min(seg_samples, static_cast<std::int64_t>((center + 3 * sigma) * fs) + 1);
        for (std::int64_t i = i0; i < i1; ++i) {
          const double t = static_cast<double>(i) / fs - center;
          const double pulse = ev.blink_amp[b] * std::exp(-t * t / (2.0 * sigma * sigma));
          for (int ch = 0; ch < kEogChannels; ++ch) eog[ch * n + seg_start + i] += blink_gain[ch] * pulse;
        }
      }
      for (std::size_t q = 0; q < ev.sacc_time.size(); ++q) {
        const double dur = ev.sacc_dur[q];
        log.saccade_s += dur;
        const double center = ev.sacc_time[q];
        const double sigma = dur / 4.0;
        const auto i0 = std::max<std::int64_t>(0, static_cast<std::int64_t>((center - 4 * sigma) * fs));
        const auto i1 = std::min(seg_samples, static_cast<std::int64_t>((center + 4 * sigma) * fs) + 1);
        for (std::int64_t i = i0; i < i1; ++i) {
          const double t = static_cast<double>(i) / fs - center;
          // derivative-of-Gaussian: sharp biphasic deflection
          const double pulse = -ev.sacc_amp[q] * (t / sigma) * std::exp(-t * t / (2.0 * sigma * sigma));
          for (int ch = 0; ch < kEogChannels; ++ch) eog[ch * n + seg_start + i] += sacc_gain[ch] * pulse;
        }
      }
      log.fixation_s = std::max(0.5, kSegmentSeconds - log.blink_s - log.clos_s - log.saccade_s);
      out.events.push_back(log);
      out.labels.push_back(compute_perclos(log, s));
    }
  }

  // quantize to the on-disk f32 precision so save/load round-trips exactly
  for (Tensor* t : {&out.recording.eeg, &out.recording.eog})
    for (auto& v : t->mutable_data()) v = static_cast<double>(static_cast<float>(v));

  return out;
}

namespace {

void write_f32(const std::filesystem::path& path, const Tensor& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  std::vector<float> buf(static_cast<std::size_t>(data.numel()));
  auto src = data.data();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(src[static_cast<std::int64_t>(i)]);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw IoError("write failed for " + path.string());
}

Tensor read_f32(const std::filesystem::path& path, std::int64_t channels, std::int64_t samples) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw FormatError("cannot open " + path.string());
  const auto bytes = static_cast<std::int64_t>(f.tellg());
  const std::int64_t expected = channels * samples * static_cast<std::int64_t>(sizeof(float));
  if (bytes != expected)
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(bytes));
  f.seekg(0);
  std::vector<float> buf(static_cast<std::size_t>(channels * samples));
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw FormatError("short read on " + path.string());
  Tensor t({channels, samples});
  auto dst = t.mutable_data();
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<double>(buf[i]);
  return t;
}

}  // namespace

void save_recording(const RawRecording& rec, const std::filesystem::path& base) {
  rec.validate();
  write_f32(base.string() + ".eeg.f32", rec.eeg);
  write_f32(base.string() + ".eog.f32", rec.eog);
  json sidecar;
  sidecar["participant_id"] = rec.participant_id;
  sidecar["sample_rate_hz"] = rec.sample_rate_hz;
  sidecar["samples"] = rec.samples();
  sidecar["eeg_channels"] = eeg_channel_names();
  sidecar["eog_channels"] = eog_channel_names();
  std::ofstream f(base.string() + ".json");
  if (!f) throw IoError("cannot open sidecar for writing: " + base.string() + ".json");
  f << sidecar.dump(2) << "\n";
}

RawRecording load_recording(const std::filesystem::path& base_in) {
  std::string base = base_in.string();
  for (const char* suffix : {".json", ".eeg.f32", ".eog.f32"})
    if (base.ends_with(suffix)) base.resize(base.size() - std::strlen(suffix));
  const std::filesystem::path sidecar_path = base + ".json";
  std::ifstream f(sidecar_path);
  if (!f) throw FormatError("missing sidecar " + sidecar_path.string());
  json sidecar;
  try {
    f >> sidecar;
  } catch (const json::exception& e) {
    throw FormatError("malformed sidecar " + sidecar_path.string() + ": " + e.what());
  }
  RawRecording rec;
  try {
    rec.participant_id = sidecar.at("participant_id").get<std::string>();
    rec.sample_rate_hz = sidecar.at("sample_rate_hz").get<double>();
    const auto samples = sidecar.at("samples").get<std::int64_t>();
    const auto n_eeg = static_cast<std::int64_t>(sidecar.at("eeg_channels").size());
    const auto n_eog = static_cast<std::int64_t>(sidecar.at("eog_channels").size());
    if (n_eeg != kEegChannels)
      throw ChannelMismatch("sidecar declares " + std::to_string(n_eeg) + " EEG channels");
    if (n_eog != kEogChannels)
      throw ChannelMismatch("sidecar declares " + std::to_string(n_eog) + " EOG channels");
    if (samples <= 0) throw FormatError("sidecar declares no samples");
    rec.eeg = read_f32(base + ".eeg.f32", n_eeg, samples);
    rec.eog = read_f32(base + ".eog.f32", n_eog, samples);
  } catch (const json::exception& e) {
    throw FormatError("sidecar " + sidecar_path.string() + " missing fields: " + e.what());
  }
  rec.validate();
  return rec;
}

void save_labels(const std::vector<VigilanceLabel>& labels, const std::filesystem::path& csv_path) {
  std::ofstream f(csv_path);
  if (!f) throw IoError("cannot open " + csv_path.string() + " for writing");
  f << "segment_index,perclos\n";
  f.precision(17);
  for (const auto& l : labels) f << l.segment_index << ',' << l.perclos << '\n';
}

std::vector<VigilanceLabel> load_labels(const std::filesystem::path& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw FormatError("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(f, line) || line.rfind("segment_index,perclos", 0) != 0)
    throw FormatError(csv_path.string() + ": bad header");
  std::vector<VigilanceLabel> labels;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    VigilanceLabel l;
    char comma = 0;
    if (!(row >> l.segment_index >> comma >> l.perclos) || comma != ',')
      throw FormatError(csv_path.string() + ": bad row '" + line + "'");
    labels.push_back(l);
  }
  return labels;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  json j;
  j["sample_rate_hz"] = manifest.sample_rate_hz;
  j["participants"] = json::array();
  for (const auto& p : manifest.participants)
    j["participants"].push_back(
        {{"id", p.id}, {"eeg_path", p.eeg_path}, {"eog_path", p.eog_path}, {"labels_path", p.labels_path}});
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open manifest " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest: " + std::string(e.what()));
  }
  DatasetManifest m;
  try {
    m.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    for (const auto& p : j.at("participants")) {
      ManifestEntry e;
      e.id = p.at("id").get<std::string>();
      e.eeg_path = p.at("eeg_path").get<std::string>();
      e.eog_path = p.at("eog_path").get<std::string>();
      e.labels_path = p.at("labels_path").get<std::string>();
      m.participants.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest missing fields: " + std::string(e.what()));
  }
  std::vector<std::string> ids;
  for (const auto& p : m.participants) ids.push_back(p.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw FormatError("manifest has duplicate participant ids");
  return m;
}

}  // namespace vigicaps::dataio
