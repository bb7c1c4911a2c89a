#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "vigicaps/dataio.hpp"
#include "vigicaps/rng.hpp"

using namespace vigicaps;
using namespace vigicaps::dataio;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vigicaps_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace

TEST_CASE("compute_perclos") {
  CHECK(compute_perclos({1, 1, 1, 1}).perclos == doctest::Approx(0.5));
  CHECK(compute_perclos({0, 0, 3, 1}).perclos == doctest::Approx(0.0));
  CHECK(compute_perclos({2, 1, 1, 0}).perclos == doctest::Approx(0.75));
  CHECK_THROWS_AS(compute_perclos({0, 0, 0, 0}), ZeroTotalDuration);

  // scale invariance under k > 0
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    EyeEventLog e{rng.uniform(0, 2), rng.uniform(0, 1), rng.uniform(0.1, 4), rng.uniform(0, 1)};
    const double k = rng.uniform(0.1, 10.0);
    EyeEventLog scaled{k * e.blink_s, k * e.clos_s, k * e.fixation_s, k * e.saccade_s};
    CHECK(compute_perclos(e).perclos == doctest::Approx(compute_perclos(scaled).perclos).epsilon(1e-12));
  }
}

TEST_CASE("synth_session determinism and label range") {
  SynthConfig cfg;
  cfg.duration_minutes = 2.0;
  auto a = synth_session(cfg, 1234, "pX");
  auto b = synth_session(cfg, 1234, "pX");
  REQUIRE(a.recording.samples() == b.recording.samples());
  for (std::int64_t i = 0; i < a.recording.eeg.numel(); ++i)
    CHECK(a.recording.eeg[i] == b.recording.eeg[i]);
  for (std::int64_t i = 0; i < a.recording.eog.numel(); ++i)
    CHECK(a.recording.eog[i] == b.recording.eog[i]);
  REQUIRE(a.labels.size() == b.labels.size());
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    CHECK(a.labels[i].perclos == b.labels[i].perclos);
    CHECK(a.labels[i].perclos >= 0.0);
    CHECK(a.labels[i].perclos <= 1.0);
  }

  auto c = synth_session(cfg, 99, "pX");
  bool any_diff = false;
  for (std::int64_t i = 0; i < a.recording.eeg.numel() && !any_diff; ++i)
    any_diff = a.recording.eeg[i] != c.recording.eeg[i];
  CHECK(any_diff);
}

TEST_CASE("synth_session duration arithmetic") {
  SynthConfig cfg;
  cfg.duration_minutes = 120.0;
  cfg.sample_rate_hz = 200.0;
  CHECK(cfg.samples() == 1'440'000);
  CHECK(cfg.segments() == 900);

  cfg.duration_minutes = 2.0;
  auto session = synth_session(cfg, 7);
  CHECK(session.recording.samples() == 24'000);
  CHECK(session.labels.size() == 15);
  CHECK(session.recording.eeg.dim(0) == 17);
  CHECK(session.recording.eog.dim(0) == 4);
}

TEST_CASE("synth_session rejects invalid configs") {
  SynthConfig cfg;
  cfg.duration_minutes = 0.05;
  CHECK_THROWS_AS(synth_session(cfg, 1), InvalidConfig);
  cfg = SynthConfig{};
  cfg.sample_rate_hz = -1;
  CHECK_THROWS_AS(synth_session(cfg, 1), InvalidConfig);
  cfg = SynthConfig{};
  cfg.latent_sigma = 0.0;
  CHECK_THROWS_AS(synth_session(cfg, 1), InvalidConfig);
}

TEST_CASE("labels track the latent vigilance process") {
  SynthConfig cfg;
  cfg.duration_minutes = 20.0;
  auto session = synth_session(cfg, 2024);
  REQUIRE(session.latent.size() == session.labels.size());
  std::vector<double> perclos;
  for (const auto& l : session.labels) perclos.push_back(l.perclos);
  CHECK(pearson(session.latent, perclos) > 0.9);
}

TEST_CASE("recording save/load round trip") {
  auto dir = temp_dir("dataio_roundtrip");
  SynthConfig cfg;
  cfg.duration_minutes = 0.5;
  auto session = synth_session(cfg, 5, "p42");
  save_recording(session.recording, dir / "p42");
  auto loaded = load_recording(dir / "p42");
  CHECK(loaded.participant_id == "p42");
  CHECK(loaded.sample_rate_hz == session.recording.sample_rate_hz);
  REQUIRE(loaded.samples() == session.recording.samples());
  for (std::int64_t i = 0; i < loaded.eeg.numel(); ++i)
    CHECK(loaded.eeg[i] == session.recording.eeg[i]);
  for (std::int64_t i = 0; i < loaded.eog.numel(); ++i)
    CHECK(loaded.eog[i] == session.recording.eog[i]);

  // loading via any of the three file names resolves the same base
  auto via_json = load_recording(dir / "p42.json");
  CHECK(via_json.participant_id == "p42");
}

TEST_CASE("recording load failure modes") {
  auto dir = temp_dir("dataio_failures");

  SUBCASE("missing sidecar") { CHECK_THROWS_AS(load_recording(dir / "nope"), FormatError); }

  SUBCASE("empty sidecar file") {
    std::ofstream(dir / "bad.json").close();
    CHECK_THROWS_AS(load_recording(dir / "bad"), FormatError);
  }

  SUBCASE("sixteen EEG channels") {
    std::ofstream f(dir / "short.json");
    f << R"({"participant_id":"x","sample_rate_hz":200,"samples":10,)"
      << R"("eeg_channels":["a","b","c","d","e","f","g","h","i","j","k","l","m","n","o","p"],)"
      << R"("eog_channels":["1","2","3","4"]})";
    f.close();
    CHECK_THROWS_AS(load_recording(dir / "short"), ChannelMismatch);
  }

  SUBCASE("truncated data file") {
    SynthConfig cfg;
    cfg.duration_minutes = 0.25;
    auto session = synth_session(cfg, 5, "t");
    save_recording(session.recording, dir / "t");
    std::ofstream(dir / "t.eeg.f32", std::ios::binary).close();  // now empty
    CHECK_THROWS_AS(load_recording(dir / "t"), FormatError);
  }
}

TEST_CASE("labels csv round trip") {
  auto dir = temp_dir("dataio_labels");
  std::vector<VigilanceLabel> labels{{0.25, 0}, {0.5, 1}, {0.125, 2}};
  save_labels(labels, dir / "labels.csv");
  auto loaded = load_labels(dir / "labels.csv");
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].perclos == labels[i].perclos);
    CHECK(loaded[i].segment_index == labels[i].segment_index);
  }
  std::ofstream(dir / "bad.csv") << "nope\n";
  CHECK_THROWS_AS(load_labels(dir / "bad.csv"), FormatError);
}

TEST_CASE("manifest round trip and duplicate detection") {
  auto dir = temp_dir("dataio_manifest");
  DatasetManifest m;
  m.sample_rate_hz = 200.0;
  m.participants = {{"p00", "p00.eeg.f32", "p00.eog.f32", "p00_labels.csv"},
                    {"p01", "p01.eeg.f32", "p01.eog.f32", "p01_labels.csv"}};
  save_manifest(m, dir / "manifest.json");
  auto loaded = load_manifest(dir / "manifest.json");
  CHECK(loaded.sample_rate_hz == 200.0);
  REQUIRE(loaded.participants.size() == 2);
  CHECK(loaded.participants[1].labels_path == "p01_labels.csv");

  m.participants.push_back({"p00", "x", "y", "z"});
  save_manifest(m, dir / "dup.json");
  CHECK_THROWS_AS(load_manifest(dir / "dup.json"), FormatError);
}
