#include "stemsep/synth.hpp"

#include <cmath>
#include <filesystem>

#include "stemsep/rng.hpp"

namespace stemsep {

void SynthSpec::validate() const {
    if (duration_s < 2.0) throw ContractError("synth: duration must be >= 2 s");
    if (sample_rate <= 0) throw ContractError("synth: bad sample rate");
}

namespace {

constexpr double kTau = 6.283185307179586;

// Decaying white-noise bursts every 0.4 s.
void render_drums(float* x, int n, int rate, Rng& rng) {
    const int period = static_cast<int>(0.4 * rate);
    const int burst = static_cast<int>(0.06 * rate);
    const float amp = 0.5f;
    for (int start = 0; start < n; start += period) {
        for (int i = 0; i < burst && start + i < n; ++i) {
            const float env = std::exp(-6.0f * static_cast<float>(i) / burst);
            x[start + i] += amp * env * (2.0f * rng.uniform() - 1.0f);
        }
    }
}

// Low sine with a slow tremolo that never fully closes.
void render_bass(float* x, int n, int rate, Rng& rng) {
    const double f0 = 40.0 + 80.0 * rng.uniform();
    const double phase0 = kTau * rng.uniform();
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        const double env = 0.7 + 0.3 * std::sin(kTau * 0.3 * t);
        x[i] += static_cast<float>(0.35 * env * std::sin(kTau * f0 * t + phase0));
    }
}

// Mid-range sine with 5 Hz vibrato.
void render_vocals(float* x, int n, int rate, Rng& rng) {
    const double fc = 200.0 + 600.0 * rng.uniform();
    const double phase0 = kTau * rng.uniform();
    double phase = phase0;
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        const double f = fc * (1.0 + 0.02 * std::sin(kTau * 5.0 * t));
        phase += kTau * f / rate;
        x[i] += static_cast<float>(0.25 * std::sin(phase));
    }
}

// White noise through a narrow two-pole resonator.
void render_other(float* x, int n, int rate, Rng& rng) {
    const double f0 = 1500.0 + 2000.0 * rng.uniform();
    const double r = 0.99;
    const double a1 = 2.0 * r * std::cos(kTau * f0 / rate);
    const double a2 = -r * r;
    double y1 = 0.0, y2 = 0.0;
    std::vector<float> buf(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double in = 2.0 * rng.uniform() - 1.0;
        const double y = in + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        buf[static_cast<std::size_t>(i)] = static_cast<float>(y);
    }
    // normalize the resonator ring to a fixed RMS
    double ss = 0.0;
    for (float v : buf) ss += static_cast<double>(v) * v;
    const float norm = static_cast<float>(0.15 / std::sqrt(std::max(ss / n, 1e-12)));
    for (int i = 0; i < n; ++i) x[i] += buf[static_cast<std::size_t>(i)] * norm;
}

}  // namespace

SongStems generate_song(const SynthSpec& spec) {
    spec.validate();
    const int n = static_cast<int>(spec.duration_s * spec.sample_rate);
    SongStems song;
    song.song_id = "synth-" + std::to_string(spec.seed);
    song.sources = {"drums", "bass", "other", "vocals"};

    Tensor mix = Tensor::zeros({2, n});
    for (std::size_t s = 0; s < song.sources.size(); ++s) {
        Tensor stem = Tensor::zeros({2, n});
        for (int ch = 0; ch < 2; ++ch) {
            Rng rng(derive_seed(spec.seed, song.sources[s], static_cast<std::uint64_t>(ch)));
            float* row = stem.data() + static_cast<std::size_t>(ch) * n;
            if (song.sources[s] == "drums") render_drums(row, n, spec.sample_rate, rng);
            if (song.sources[s] == "bass") render_bass(row, n, spec.sample_rate, rng);
            if (song.sources[s] == "vocals") render_vocals(row, n, spec.sample_rate, rng);
            if (song.sources[s] == "other") render_other(row, n, spec.sample_rate, rng);
        }
        float* pm = mix.data();
        const float* ps = stem.data();
        for (std::size_t i = 0; i < mix.numel(); ++i) pm[i] += ps[i];
        song.stems.emplace_back(std::move(stem), spec.sample_rate);
    }
    song.mixture = AudioClip(std::move(mix), spec.sample_rate);
    return song;
}

void write_song(const SongStems& song, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t s = 0; s < song.sources.size(); ++s)
        save_audio(song.stems[s], dir + "/" + song.sources[s] + ".wav");
    save_audio(song.mixture, dir + "/mixture.wav");
}

SongStems read_song(const std::string& dir, const std::vector<std::string>& sources) {
    SongStems song;
    song.song_id = std::filesystem::path(dir).filename().string();
    song.sources = sources;
    for (const auto& s : sources) {
        const std::string path = dir + "/" + s + ".wav";
        if (!std::filesystem::exists(path)) throw IoError("missing stem " + path);
        song.stems.push_back(load_audio(path));
    }
    const int n = song.stems.front().frames();
    const int rate = song.stems.front().sample_rate;
    for (const auto& st : song.stems)
        if (st.frames() != n || st.sample_rate != rate)
            throw FormatError("stems disagree on length or rate in " + dir);
    Tensor mix = Tensor::zeros({2, n});
    for (const auto& st : song.stems) {
        if (st.channels() != 2) throw FormatError("stems must be stereo in " + dir);
        const float* ps = st.samples.data();
        float* pm = mix.data();
        for (std::size_t i = 0; i < mix.numel(); ++i) pm[i] += ps[i];
    }
    song.mixture = AudioClip(std::move(mix), rate);
    return song;
}

}  // namespace stemsep
