#include "stemsep/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stemsep/dsp.hpp"

namespace stemsep {

StemNameTable StemNameTable::defaults() {
    StemNameTable t;
    t.keywords = {
        {"vocal", "vocals"}, {"vox", "vocals"},  {"lead", "vocals"},
        {"drum", "drums"},   {"kick", "drums"},  {"snare", "drums"}, {"perc", "drums"},
        {"bass", "bass"},    {"sub", "bass"},
        {"fx", "other"},     {"synth", "other"}, {"gtr", "other"},   {"guitar", "other"},
        {"keys", "other"},   {"piano", "other"}, {"other", "other"},
    };
    return t;
}

StemNameTable StemNameTable::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open keyword table " + path);
    StemNameTable t;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("bad keyword line: " + line);
        t.keywords.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return t;
}

std::optional<std::string> map_stem_name(const std::string& raw_name, const StemNameTable& table) {
    std::string lower(raw_name.size(), '\0');
    std::transform(raw_name.begin(), raw_name.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const auto& [kw, source] : table.keywords)
        if (lower.find(kw) != std::string::npos) return source;
    return std::nullopt;
}

double activity_fraction(const AudioClip& stem) {
    const std::vector<double> v = volume_db_segments(stem);
    int active = 0;
    for (double db : v)
        if (db >= kActivityGateDb) ++active;
    return static_cast<double>(active) / static_cast<double>(v.size());
}

LeakageReport leakage_matrix(const SongStems& song, const CurationSeparator& separator_fn) {
    if (song.stems.size() != 4) throw ContractError("leakage_matrix: expects 4 stems");
    LeakageReport rep;
    rep.song_id = song.song_id;

    for (int i = 0; i < 4; ++i) {
        const AudioClip& stem = song.stems[static_cast<std::size_t>(i)];
        const std::vector<double> vx = volume_db_segments(stem);
        rep.activity[static_cast<std::size_t>(i)] = activity_fraction(stem);

        std::vector<int> active_segments;
        for (std::size_t s = 0; s < vx.size(); ++s)
            if (vx[s] >= kActivityGateDb) active_segments.push_back(static_cast<int>(s));
        if (active_segments.empty()) {
            for (int j = 0; j < 4; ++j)
                rep.P[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    std::numeric_limits<double>::quiet_NaN();
            continue;
        }

        std::vector<AudioClip> outs = separator_fn(stem);
        if (outs.size() != 4) throw ContractError("leakage_matrix: separator must emit 4 outputs");
        for (int j = 0; j < 4; ++j) {
            const std::vector<double> vy = volume_db_segments(outs[static_cast<std::size_t>(j)]);
            if (vy.size() != vx.size())
                throw DimensionError("leakage_matrix: separator changed the segment count");
            int leaked = 0;
            for (int s : active_segments)
                if (vy[static_cast<std::size_t>(s)] - vx[static_cast<std::size_t>(s)] > kLeakGateDb)
                    ++leaked;
            rep.P[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                static_cast<double>(leaked) / static_cast<double>(active_segments.size());
        }
    }
    return rep;
}

void select_song(LeakageReport& report) {
    static const char* kNames[4] = {"drums", "bass", "other", "vocals"};
    report.reasons.clear();
    std::ostringstream r;
    for (int i = 0; i < 4; ++i) {
        if (report.activity[static_cast<std::size_t>(i)] < kActivityMinFraction) {
            r.str("");
            r << kNames[i] << " activity " << report.activity[static_cast<std::size_t>(i)] << " < "
              << kActivityMinFraction;
            report.reasons.push_back(r.str());
        }
    }
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            const double p = report.P[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (std::isnan(p)) {
                if (j == 0) {
                    r.str("");
                    r << kNames[i] << " has no active segments";
                    report.reasons.push_back(r.str());
                }
                continue;
            }
            if (i == j && !(p > kDiagMin)) {
                r.str("");
                r << "P[" << kNames[i] << "," << kNames[j] << "] " << p << " <= " << kDiagMin;
                report.reasons.push_back(r.str());
            }
            if (i != j && !(p < kOffDiagMax)) {
                r.str("");
                r << "P[" << kNames[i] << "," << kNames[j] << "] " << p << " >= " << kOffDiagMax;
                report.reasons.push_back(r.str());
            }
        }
    report.accepted = report.reasons.empty();
}

std::string report_to_json_line(const LeakageReport& report) {
    nlohmann::json j;
    j["song_id"] = report.song_id;
    j["activity"] = report.activity;
    std::vector<double> flat;
    flat.reserve(16);
    for (const auto& row : report.P)
        for (double p : row) flat.push_back(std::isnan(p) ? -1.0 : p);
    j["P"] = flat;
    j["accepted"] = report.accepted;
    j["reasons"] = report.reasons;
    return j.dump();
}

OverrideTable OverrideTable::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open override file " + path);
    OverrideTable t;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string id, verdict;
        is >> id >> verdict;
        if (verdict == "accept")
            t.entries.emplace_back(id, true);
        else if (verdict == "reject")
            t.entries.emplace_back(id, false);
        else
            throw FormatError("bad override line: " + line);
    }
    return t;
}

std::optional<bool> OverrideTable::lookup(const std::string& song_id) const {
    for (const auto& [id, v] : entries)
        if (id == song_id) return v;
    return std::nullopt;
}

}  // namespace stemsep
