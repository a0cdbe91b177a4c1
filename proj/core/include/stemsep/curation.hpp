#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stemsep/audio.hpp"
#include "stemsep/synth.hpp"

namespace stemsep {

// Dataset preprocessing: stem labeling, silence gating, the 4x4 leakage
// matrix P and the song accept/reject decision.

constexpr double kActivityGateDb = -40.0;  // 1 s segment counts as silent below this
constexpr double kActivityMinFraction = 0.30;
constexpr double kLeakGateDb = -10.0;  // V(y_ij) - V(x_i) above this marks leakage
constexpr double kDiagMin = 0.70;      // strict: P[i,i] must exceed this
constexpr double kOffDiagMax = 0.30;   // strict: P[i,j] must stay below this

// Case-insensitive keyword table from producer labels to canonical sources.
struct StemNameTable {
    // (keyword, source) pairs, checked in order by substring match.
    std::vector<std::pair<std::string, std::string>> keywords;

    static StemNameTable defaults();
    static StemNameTable load(const std::string& path);  // lines: keyword=source
};

// nullopt when nothing matches.
std::optional<std::string> map_stem_name(const std::string& raw_name, const StemNameTable& table);

// Fraction of 1 s segments at or above the -40 dB gate.
double activity_fraction(const AudioClip& stem);

struct LeakageReport {
    std::string song_id;
    std::array<double, 4> activity{};  // per source, canonical order
    std::array<std::array<double, 4>, 4> P{};  // NaN rows mark "no active segments"
    bool accepted = false;
    std::vector<std::string> reasons;
};

// Maps an isolated stem to the four separated outputs, canonical order.
using CurationSeparator = std::function<std::vector<AudioClip>(const AudioClip&)>;

// Runs the separator on each isolated stem and fills activity and P. Rows
// without any active segment become NaN (select_song rejects them).
LeakageReport leakage_matrix(const SongStems& song, const CurationSeparator& separator_fn);

// Applies the activity and P thresholds; fills accepted and reasons.
void select_song(LeakageReport& report);

// One JSON line per report: song_id, activity[4], P[16], accepted, reasons.
std::string report_to_json_line(const LeakageReport& report);

// Optional per-song manual override: lines of "<song_id> accept|reject".
struct OverrideTable {
    std::vector<std::pair<std::string, bool>> entries;

    static OverrideTable load(const std::string& path);
    std::optional<bool> lookup(const std::string& song_id) const;
};

}  // namespace stemsep
