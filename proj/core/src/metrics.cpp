#include "stemsep/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "stemsep/rng.hpp"
#include "stemsep/threading.hpp"

namespace stemsep {

Tensor sdr_chunks(const AudioClip& ref, const AudioClip& est, bool skip_silent) {
    if (ref.channels() != est.channels() || ref.frames() != est.frames())
        throw DimensionError("sdr_chunks: clips disagree in shape");
    if (ref.sample_rate != est.sample_rate) throw DimensionError("sdr_chunks: rate mismatch");
    const int seg = ref.sample_rate;
    const int n_chunks = ref.frames() / seg;
    if (n_chunks < 1) throw LengthError("sdr_chunks: clips shorter than one second");

    const int C = ref.channels();
    const int T = ref.frames();
    const float* pr = ref.samples.data();
    const float* pe = est.samples.data();
    constexpr double kEps = 1e-10;

    std::vector<float> vals;
    vals.reserve(static_cast<std::size_t>(n_chunks));
    std::vector<float> ref_sq(static_cast<std::size_t>(seg) * C), err_sq(static_cast<std::size_t>(seg) * C);
    for (int s = 0; s < n_chunks; ++s) {
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < seg; ++i) {
                const std::size_t src = static_cast<std::size_t>(c) * T + static_cast<std::size_t>(s) * seg + i;
                const std::size_t dst = static_cast<std::size_t>(c) * seg + i;
                const float r = pr[src];
                const float d = r - pe[src];
                ref_sq[dst] = r * r;
                err_sq[dst] = d * d;
            }
        const double num = static_cast<double>(reduce_sum(ref_sq.data(), ref_sq.size())) + kEps;
        const double den = static_cast<double>(reduce_sum(err_sq.data(), err_sq.size())) + kEps;
        if (skip_silent && num - kEps < 1e-10 * ref_sq.size()) continue;
        const double sdr = std::clamp(10.0 * std::log10(num / den), -100.0, 100.0);
        vals.push_back(static_cast<float>(sdr));
    }
    if (vals.empty()) throw ContractError("sdr_chunks: every chunk was skipped as silent");
    return Tensor::from_data({static_cast<int>(vals.size())}, std::move(vals));
}

double median(std::vector<double> values) {
    if (values.empty()) throw ContractError("median: empty input");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

SdrResult aggregate(
    const std::map<std::string, std::map<std::string, std::vector<double>>>& chunk_sdrs) {
    if (chunk_sdrs.empty()) throw ContractError("aggregate: no songs");
    SdrResult res;
    std::map<std::string, std::vector<double>> per_source_medians;
    for (const auto& [song, sources] : chunk_sdrs) {
        if (sources.empty()) throw ContractError("aggregate: song without sources: " + song);
        for (const auto& [source, chunks] : sources) {
            const double m = median(chunks);
            res.per_song[song][source] = m;
            per_source_medians[source].push_back(m);
        }
    }
    double total = 0.0;
    for (auto& [source, meds] : per_source_medians) {
        res.per_source[source] = median(meds);
        total += res.per_source[source];
    }
    res.all = total / static_cast<double>(per_source_medians.size());
    return res;
}

std::string render_report(const SdrResult& result) {
    std::ostringstream out;
    out << "SDR (dB), median over 1 s chunks then over songs\n";
    for (const auto& [song, sources] : result.per_song) {
        out << "  " << song << ":";
        for (const auto& [source, v] : sources) out << "  " << source << "=" << v;
        out << "\n";
    }
    out << "per-source:";
    for (const auto& [source, v] : result.per_source) out << "  " << source << "=" << v;
    out << "\nAll: " << result.all << "\n";
    return out.str();
}

std::string report_to_json(const SdrResult& result) {
    nlohmann::json j;
    j["per_song"] = result.per_song;
    j["per_source"] = result.per_source;
    j["all"] = result.all;
    return j.dump();
}

double rtf_bench(const std::function<void(const AudioClip&)>& pipeline, double input_seconds,
                 int runs, std::uint64_t seed) {
    const int rate = 44100;
    const int n = static_cast<int>(input_seconds * rate);
    Rng rng(derive_seed(seed, "rtf_noise"));
    Tensor noise = Tensor::zeros({2, n});
    for (float& v : noise.vec()) v = rng.normal();
    const AudioClip clip(std::move(noise), rate);

    ThreadCountGuard single(1);
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(runs));
    for (int r = 0; r < runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        pipeline(clip);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return median(times) / input_seconds;
}

}  // namespace stemsep
