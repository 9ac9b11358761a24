#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvgt/errors.hpp"

namespace mvgt::spatial {

using Vec3 = std::array<double, 3>;

struct ElectrodeLayout {
    std::vector<std::string> names;
    std::vector<Vec3> coords; // unit-sphere head model, dimensionless

    std::size_t size() const { return names.size(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw ConfigError("layout: unknown channel '" + name + "'");
    }

    void validate() const {
        if (names.size() != coords.size())
            throw ConfigError("layout: " + std::to_string(names.size()) +
                              " names vs " + std::to_string(coords.size()) +
                              " coordinates");
        std::set<std::string> seen;
        for (const auto& n : names)
            if (!seen.insert(n).second)
                throw ConfigError("layout: duplicate channel '" + n + "'");
    }
};

inline std::vector<std::vector<double>> pairwise_distances(
    const ElectrodeLayout& layout) {
    layout.validate();
    const std::size_t n = layout.size();
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double diff = layout.coords[i][k] - layout.coords[j][k];
                acc += diff * diff;
            }
            d[i][j] = std::sqrt(acc);
        }
    return d;
}

struct RegionScheme {
    std::string name;
    std::map<std::string, std::string> tags; // channel -> region tag

    // distinct tags in lexicographic order; index into this list is the
    // region id used by the embedding table
    std::vector<std::string> region_tags() const {
        std::set<std::string> s;
        for (const auto& [ch, tag] : tags) s.insert(tag);
        return {s.begin(), s.end()};
    }

    std::size_t n_regions() const { return region_tags().size(); }

    const std::string& tag_of(const std::string& channel) const {
        auto it = tags.find(channel);
        if (it == tags.end())
            throw ConfigError("scheme '" + name + "': channel '" + channel +
                              "' has no region tag");
        return it->second;
    }

    // region index per layout channel, in layout order
    std::vector<std::size_t> region_indices(const ElectrodeLayout& layout) const {
        const auto all = region_tags();
        std::map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < all.size(); ++i) pos[all[i]] = i;
        std::vector<std::size_t> idx;
        idx.reserve(layout.size());
        for (const auto& ch : layout.names) idx.push_back(pos.at(tag_of(ch)));
        return idx;
    }

    void validate_covers(const ElectrodeLayout& layout) const {
        for (const auto& ch : layout.names) (void)tag_of(ch);
        if (n_regions() < 2)
            throw ConfigError("scheme '" + name + "' has fewer than 2 regions");
    }
};

// ---------------------------------------------------------------------------
// JSON config files
// ---------------------------------------------------------------------------

inline nlohmann::json layout_to_json(const ElectrodeLayout& layout) {
    nlohmann::json channels = nlohmann::json::array();
    for (std::size_t i = 0; i < layout.size(); ++i)
        channels.push_back({{"name", layout.names[i]},
                            {"xyz",
                             {layout.coords[i][0], layout.coords[i][1],
                              layout.coords[i][2]}}});
    return nlohmann::json{{"channels", channels}};
}

inline ElectrodeLayout layout_from_json(const nlohmann::json& j) {
    ElectrodeLayout layout;
    for (const auto& ch : j.at("channels")) {
        layout.names.push_back(ch.at("name").get<std::string>());
        const auto& xyz = ch.at("xyz");
        layout.coords.push_back({xyz.at(0).get<double>(), xyz.at(1).get<double>(),
                                 xyz.at(2).get<double>()});
    }
    layout.validate();
    return layout;
}

inline ElectrodeLayout load_layout(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open layout file " + path.string());
    nlohmann::json j;
    try {
        f >> j;
        return layout_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("layout file " + path.string() + ": " + e.what());
    }
}

inline nlohmann::json scheme_to_json(const RegionScheme& scheme) {
    return nlohmann::json{{"name", scheme.name}, {"tags", scheme.tags}};
}

inline RegionScheme scheme_from_json(const nlohmann::json& j) {
    RegionScheme s;
    s.name = j.at("name").get<std::string>();
    s.tags = j.at("tags").get<std::map<std::string, std::string>>();
    return s;
}

inline RegionScheme load_scheme(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open scheme file " + path.string());
    nlohmann::json j;
    try {
        f >> j;
        return scheme_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scheme file " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// bundled 62-channel 10-10 layout (idealized spherical positions)
// ---------------------------------------------------------------------------

namespace detail {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// point on the unit sphere: inclination from the vertex, azimuth measured
// from the nasion direction, positive toward the left ear.
// axes: +x right, +y front, +z up
inline Vec3 sphere_point(double inclination_deg, double azimuth_deg) {
    const double th = deg2rad(inclination_deg);
    const double az = deg2rad(azimuth_deg);
    return {-std::sin(th) * std::sin(az), std::sin(th) * std::cos(az),
            std::cos(th)};
}

inline Vec3 mirror_x(const Vec3& p) { return {-p[0], p[1], p[2]}; }

inline Vec3 sub3(const Vec3& a, const Vec3& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 add3(const Vec3& a, const Vec3& b) {
    return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 mul3(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot3(const Vec3& a, const Vec3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline Vec3 cross3(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]};
}
inline double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }

// Interpolate at fraction t along the circle through (a, m, a_mirrored),
// starting at a (t=0) and reaching the midline point m (t=1). Electrode rows
// follow such small circles rather than great circles.
inline Vec3 row_interp(const Vec3& a, const Vec3& m, double t) {
    const Vec3 b = mirror_x(a);
    // circumcenter of the triangle (a, m, b) lies on the row circle's axis
    const Vec3 u = sub3(a, b), v = sub3(m, b);
    const Vec3 uxv = cross3(u, v);
    const double denom = 2.0 * dot3(uxv, uxv);
    const Vec3 center = add3(
        b, mul3(cross3(sub3(mul3(v, dot3(u, u)), mul3(u, dot3(v, v))), uxv),
                1.0 / denom));
    const Vec3 ra = sub3(a, center);
    const Vec3 rm = sub3(m, center);
    const double r = norm3(ra);
    const Vec3 e1 = mul3(ra, 1.0 / r);
    Vec3 w = sub3(rm, mul3(e1, dot3(rm, e1)));
    const Vec3 e2 = mul3(w, 1.0 / norm3(w));
    const double angle = std::atan2(dot3(rm, e2), dot3(rm, e1));
    const double ta = t * angle;
    return add3(center,
                add3(mul3(e1, r * std::cos(ta)), mul3(e2, r * std::sin(ta))));
}

} // namespace detail

// Idealized spherical 10-10 positions for the 62-channel montage. Midline
// electrodes sit on the nasion-inion arc at 10% (18 degree) steps, the outer
// ring at 72 degrees inclination, and intermediate electrodes at equal
// fractions along their row circles. CB1/CB2 sit below the parieto-occipital
// ring. These are standard-construction approximations, not measured caps;
// the layout JSON is editable if better coordinates are available.
inline ElectrodeLayout builtin_layout_seed62() {
    using detail::mirror_x;
    using detail::row_interp;
    using detail::sphere_point;

    std::map<std::string, Vec3> pos;
    // midline (azimuth 0 = front, 180 = back)
    pos["FPZ"] = sphere_point(72, 0);
    pos["FZ"] = sphere_point(36, 0);
    pos["FCZ"] = sphere_point(18, 0);
    pos["CZ"] = sphere_point(0, 0);
    pos["CPZ"] = sphere_point(18, 180);
    pos["PZ"] = sphere_point(36, 180);
    pos["POZ"] = sphere_point(54, 180);
    pos["OZ"] = sphere_point(72, 180);
    const Vec3 afz = sphere_point(54, 0); // row anchor only, not a channel

    // outer ring at 72 degrees inclination, left side
    pos["FP1"] = sphere_point(72, 18);
    const Vec3 af7 = sphere_point(72, 36); // row anchor only
    pos["F7"] = sphere_point(72, 54);
    pos["FT7"] = sphere_point(72, 72);
    pos["T7"] = sphere_point(72, 90);
    pos["TP7"] = sphere_point(72, 108);
    pos["P7"] = sphere_point(72, 126);
    pos["PO7"] = sphere_point(72, 144);
    pos["O1"] = sphere_point(72, 162);
    pos["CB1"] = sphere_point(90, 153);

    // row interpolation, lateral endpoint -> midline
    pos["AF3"] = row_interp(af7, afz, 0.5);
    pos["F5"] = row_interp(pos["F7"], pos["FZ"], 0.25);
    pos["F3"] = row_interp(pos["F7"], pos["FZ"], 0.5);
    pos["F1"] = row_interp(pos["F7"], pos["FZ"], 0.75);
    pos["FC5"] = row_interp(pos["FT7"], pos["FCZ"], 0.25);
    pos["FC3"] = row_interp(pos["FT7"], pos["FCZ"], 0.5);
    pos["FC1"] = row_interp(pos["FT7"], pos["FCZ"], 0.75);
    pos["C5"] = row_interp(pos["T7"], pos["CZ"], 0.25);
    pos["C3"] = row_interp(pos["T7"], pos["CZ"], 0.5);
    pos["C1"] = row_interp(pos["T7"], pos["CZ"], 0.75);
    pos["CP5"] = row_interp(pos["TP7"], pos["CPZ"], 0.25);
    pos["CP3"] = row_interp(pos["TP7"], pos["CPZ"], 0.5);
    pos["CP1"] = row_interp(pos["TP7"], pos["CPZ"], 0.75);
    pos["P5"] = row_interp(pos["P7"], pos["PZ"], 0.25);
    pos["P3"] = row_interp(pos["P7"], pos["PZ"], 0.5);
    pos["P1"] = row_interp(pos["P7"], pos["PZ"], 0.75);
    pos["PO5"] = row_interp(pos["PO7"], pos["POZ"], 1.0 / 3.0);
    pos["PO3"] = row_interp(pos["PO7"], pos["POZ"], 2.0 / 3.0);

    // right side mirrors the left
    const std::vector<std::pair<std::string, std::string>> mirrors = {
        {"FP1", "FP2"}, {"AF3", "AF4"}, {"F7", "F8"},   {"F5", "F6"},
        {"F3", "F4"},   {"F1", "F2"},   {"FT7", "FT8"}, {"FC5", "FC6"},
        {"FC3", "FC4"}, {"FC1", "FC2"}, {"T7", "T8"},   {"C5", "C6"},
        {"C3", "C4"},   {"C1", "C2"},   {"TP7", "TP8"}, {"CP5", "CP6"},
        {"CP3", "CP4"}, {"CP1", "CP2"}, {"P7", "P8"},   {"P5", "P6"},
        {"P3", "P4"},   {"P1", "P2"},   {"PO7", "PO8"}, {"PO5", "PO6"},
        {"PO3", "PO4"}, {"O1", "O2"},   {"CB1", "CB2"}};
    for (const auto& [l, r] : mirrors) pos[r] = mirror_x(pos.at(l));

    static const std::vector<std::string> order = {
        "FP1", "FPZ", "FP2", "AF3", "AF4", "F7",  "F5",  "F3",  "F1",  "FZ",
        "F2",  "F4",  "F6",  "F8",  "FT7", "FC5", "FC3", "FC1", "FCZ", "FC2",
        "FC4", "FC6", "FT8", "T7",  "C5",  "C3",  "C1",  "CZ",  "C2",  "C4",
        "C6",  "T8",  "TP7", "CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6",
        "TP8", "P7",  "P5",  "P3",  "P1",  "PZ",  "P2",  "P4",  "P6",  "P8",
        "PO7", "PO5", "PO3", "POZ", "PO4", "PO6", "PO8", "CB1", "O1",  "OZ",
        "O2",  "CB2"};

    ElectrodeLayout layout;
    for (const auto& name : order) {
        layout.names.push_back(name);
        layout.coords.push_back(pos.at(name));
    }
    layout.validate();
    return layout;
}

// Small synthetic cap: 16 channels in four spatially coherent quadrant
// clusters. Used for desk-scale experiments where 62 channels would be
// needlessly slow.
inline ElectrodeLayout builtin_layout_synth16() {
    using detail::sphere_point;
    ElectrodeLayout layout;
    const std::array<double, 4> quad_az = {45, -45, 135, -135}; // fl, fr, bl, br
    int ch = 1;
    for (double az : quad_az) {
        for (const auto& [inc, daz] :
             std::vector<std::pair<double, double>>{
                 {40, -12}, {40, 12}, {68, -12}, {68, 12}}) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "CH%02d", ch++);
            layout.names.emplace_back(buf);
            layout.coords.push_back(sphere_point(inc, az + daz));
        }
    }
    layout.validate();
    return layout;
}

inline RegionScheme builtin_scheme_synth16() {
    RegionScheme s;
    s.name = "QUADRANTS";
    const std::array<const char*, 4> tags = {"front_left", "front_right",
                                             "back_left", "back_right"};
    int ch = 1;
    for (const auto* tag : tags)
        for (int i = 0; i < 4; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "CH%02d", ch++);
            s.tags[buf] = tag;
        }
    return s;
}

// ---------------------------------------------------------------------------
// built-in region schemes for 10-10 channel names
// ---------------------------------------------------------------------------

namespace detail {

struct ParsedChannel {
    std::string row; // e.g. "FC"
    bool midline = false;
    bool left = false; // odd index
};

inline ParsedChannel parse_channel(const std::string& name) {
    std::size_t i = 0;
    while (i < name.size() && std::isalpha(static_cast<unsigned char>(name[i])))
        ++i;
    if (i == 0) throw ConfigError("cannot parse channel name '" + name + "'");
    ParsedChannel p;
    if (name.back() == 'Z' || name.back() == 'z') {
        p.row = name.substr(0, name.size() - 1);
        p.midline = true;
        return p;
    }
    if (i == name.size())
        throw ConfigError("cannot parse channel name '" + name + "'");
    p.row = name.substr(0, i);
    const int idx = std::stoi(name.substr(i));
    p.left = (idx % 2) == 1;
    return p;
}

inline const std::map<std::string, std::string>& lobe_rows() {
    static const std::map<std::string, std::string> m = {
        {"FP", "frontal"},  {"AF", "frontal"},   {"F", "frontal"},
        {"FT", "temporal"}, {"FC", "central"},   {"T", "temporal"},
        {"C", "central"},   {"TP", "temporal"},  {"CP", "central"},
        {"P", "parietal"},  {"PO", "occipital"}, {"O", "occipital"},
        {"CB", "occipital"}};
    return m;
}

inline const std::map<std::string, std::string>& general_rows() {
    static const std::map<std::string, std::string> m = {
        {"FP", "prefrontal"},      {"AF", "prefrontal"},
        {"F", "frontal"},          {"FT", "temporal"},
        {"FC", "fronto_central"},  {"T", "temporal"},
        {"C", "central"},          {"TP", "temporal"},
        {"CP", "centro_parietal"}, {"P", "parietal"},
        {"PO", "parieto_occipital"}, {"O", "occipital"},
        {"CB", "cerebellar"}};
    return m;
}

inline std::string general_tag(const std::string& name) {
    const auto p = parse_channel(name);
    auto it = general_rows().find(p.row);
    if (it == general_rows().end())
        throw ConfigError("channel '" + name + "' has no 10-10 row mapping");
    // FZ sits on the frontal / fronto-central border; keeping it with the
    // fronto-central group leaves the frontal region purely lateral, which is
    // what the FRONTAL scheme's left/right split needs
    if (p.midline && it->second == "frontal") return "fronto_central";
    return it->second;
}

} // namespace detail

// Four partitions, coarse to fine: LOBE (5 lobes), GENERAL (10 sub-lobe
// regions), FRONTAL (GENERAL with the frontal region split left/right),
// HEMISPHERE (every lateral region split left/right plus one midline region).
inline std::vector<RegionScheme> builtin_schemes(const ElectrodeLayout& layout) {
    layout.validate();
    RegionScheme lobe{"LOBE", {}};
    RegionScheme general{"GENERAL", {}};
    RegionScheme frontal{"FRONTAL", {}};
    RegionScheme hemisphere{"HEMISPHERE", {}};
    for (const auto& name : layout.names) {
        const auto p = detail::parse_channel(name);
        auto lit = detail::lobe_rows().find(p.row);
        if (lit == detail::lobe_rows().end())
            throw ConfigError("channel '" + name + "' has no 10-10 row mapping");
        lobe.tags[name] = lit->second;

        const std::string g = detail::general_tag(name);
        general.tags[name] = g;

        frontal.tags[name] =
            (g == "frontal") ? (p.left ? "frontal_left" : "frontal_right") : g;

        hemisphere.tags[name] =
            p.midline ? "midline" : g + (p.left ? "_left" : "_right");
    }
    for (auto* s : {&lobe, &general, &frontal, &hemisphere})
        s->validate_covers(layout);
    return {lobe, general, frontal, hemisphere};
}

inline RegionScheme builtin_scheme(const ElectrodeLayout& layout,
                                   const std::string& name) {
    std::string upper;
    for (char c : name) upper.push_back(static_cast<char>(std::toupper(c)));
    if (upper == "QUADRANTS") {
        auto s = builtin_scheme_synth16();
        s.validate_covers(layout);
        return s;
    }
    for (auto& s : builtin_schemes(layout))
        if (s.name == upper) return s;
    throw ConfigError("unknown builtin scheme '" + name + "'");
}

} // namespace mvgt::spatial
