#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvgt/dsp.hpp"
#include "mvgt/errors.hpp"
#include "mvgt/rng.hpp"

namespace mvgt::eegsig {

// The five analysis bands in Hz: delta, theta, alpha, beta, gamma.
inline constexpr std::array<std::pair<double, double>, 5> kBands{
    {{1.0, 4.0}, {4.0, 8.0}, {8.0, 14.0}, {14.0, 31.0}, {31.0, 50.0}}};

inline constexpr int kBandpassOrder = 4;
inline constexpr double kVarianceClamp = 1e-12;

struct EEGRecording {
    std::vector<std::string> channel_names;
    double sample_rate_hz = 0.0;
    // channel-major: samples[c][t]
    std::vector<std::vector<double>> samples;
    int label = -1; // -1 = unlabeled

    std::size_t n_channels() const { return samples.size(); }
    std::size_t n_samples() const { return samples.empty() ? 0 : samples[0].size(); }

    void validate() const {
        if (channel_names.size() != samples.size())
            throw DataError("recording: " + std::to_string(channel_names.size()) +
                            " names for " + std::to_string(samples.size()) +
                            " channels");
        for (const auto& ch : samples)
            if (ch.size() != n_samples())
                throw DataError("recording: ragged channel lengths");
        if (!(sample_rate_hz > 2.0 * kBands.back().second))
            throw DataError("recording: sample rate " +
                            std::to_string(sample_rate_hz) +
                            " Hz violates Nyquist for the 50 Hz band edge");
    }
};

struct FeatureTensor {
    // values[w][c][b], in nats
    std::vector<std::vector<std::array<double, 5>>> values;
    double window_seconds = 0.0;

    std::size_t n_windows() const { return values.size(); }
    std::size_t n_channels() const { return values.empty() ? 0 : values[0].size(); }
    static constexpr std::size_t n_bands() { return 5; }
};

struct SegmentBatch {
    std::size_t n_channels = 0;
    std::size_t T = 0;
    std::size_t n_bands = 5;
    std::size_t stride = 1;
    // each segment is [n_channels x T*n_bands], row-major
    std::vector<std::vector<double>> segments;
    std::vector<int> labels;

    std::size_t size() const { return segments.size(); }
    std::size_t token_width() const { return T * n_bands; }
};

// ---------------------------------------------------------------------------
// signal ops
// ---------------------------------------------------------------------------

inline std::vector<double> bandpass_channel(const std::vector<double>& x,
                                            double low_hz, double high_hz,
                                            double fs) {
    auto sos = butter_bandpass(kBandpassOrder, low_hz, high_hz, fs);
    return sosfiltfilt(sos, x);
}

// Differential entropy of one window under the Gaussian model:
// 0.5 * ln(2*pi*e*var), unbiased sample variance, clamped below.
inline double differential_entropy(const double* window, std::size_t len) {
    if (len < 2)
        throw DataError("differential_entropy: window length " +
                        std::to_string(len) + " < 2");
    double mean = 0.0;
    for (std::size_t i = 0; i < len; ++i) mean += window[i];
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
        const double c = window[i] - mean;
        var += c * c;
    }
    var /= static_cast<double>(len - 1);
    var = std::max(var, kVarianceClamp);
    return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * var);
}

inline double differential_entropy(const std::vector<double>& window) {
    return differential_entropy(window.data(), window.size());
}

// Per-window, per-channel, per-band DE features over non-overlapping
// windows; a trailing partial window is dropped.
inline FeatureTensor extract_features(const EEGRecording& rec,
                                      double window_seconds) {
    rec.validate();
    const auto win = static_cast<std::size_t>(
        std::llround(window_seconds * rec.sample_rate_hz));
    if (win < 2)
        throw ConfigError("extract_features: window of " +
                          std::to_string(window_seconds) +
                          " s is too short at this sample rate");
    const std::size_t n_win = rec.n_samples() / win;
    if (n_win == 0)
        throw DataError("extract_features: recording of " +
                        std::to_string(rec.n_samples()) +
                        " samples is shorter than one window");
    FeatureTensor ft;
    ft.window_seconds = window_seconds;
    ft.values.assign(n_win, std::vector<std::array<double, 5>>(
                                rec.n_channels(), std::array<double, 5>{}));
    for (std::size_t c = 0; c < rec.n_channels(); ++c) {
        for (std::size_t b = 0; b < kBands.size(); ++b) {
            const auto filtered = bandpass_channel(
                rec.samples[c], kBands[b].first, kBands[b].second,
                rec.sample_rate_hz);
            for (std::size_t w = 0; w < n_win; ++w)
                ft.values[w][c][b] =
                    differential_entropy(filtered.data() + w * win, win);
        }
    }
    return ft;
}

// Overlapping sliding window over feature windows. Token i of segment s is
// channel i's T consecutive window-feature rows flattened time-major:
// (w0 bands..., w1 bands..., ...).
inline SegmentBatch segment(const FeatureTensor& ft, std::size_t T,
                            std::size_t stride, int label) {
    if (T < 1 || stride < 1)
        throw ConfigError("segment: T and stride must be >= 1");
    if (ft.n_windows() < T)
        throw DataError("segment: " + std::to_string(ft.n_windows()) +
                        " windows < segment size " + std::to_string(T));
    SegmentBatch sb;
    sb.n_channels = ft.n_channels();
    sb.T = T;
    sb.stride = stride;
    const std::size_t S = (ft.n_windows() - T) / stride + 1;
    sb.segments.reserve(S);
    for (std::size_t s = 0; s < S; ++s) {
        std::vector<double> seg(sb.n_channels * T * 5);
        for (std::size_t c = 0; c < sb.n_channels; ++c)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t b = 0; b < 5; ++b)
                    seg[c * T * 5 + t * 5 + b] =
                        ft.values[s * stride + t][c][b];
        sb.segments.push_back(std::move(seg));
        sb.labels.push_back(label);
    }
    return sb;
}

// ---------------------------------------------------------------------------
// synthetic dataset
// ---------------------------------------------------------------------------

struct SynthSpec {
    int n_classes = 3;
    int trials_per_class = 6;
    double duration_seconds = 12.0;
    double sample_rate_hz = 160.0;
    double noise_scale = 1.0; // base amplitude of the band-limited noise
    double offset_db = 6.0;   // default per-class region variance shift
    // explicit per-class offsets: class -> region tag -> dB; empty = default
    // pattern (class c boosts region (c mod n_regions))
    std::map<int, std::map<std::string, double>> class_offsets_db;
    std::uint64_t seed = 0;
};

// Region-structured variance shifts on band-limited noise: each class gets a
// spatial variance signature, so DE features carry a class signal that the
// spatial encodings can exploit.
template <typename TagLookup>
std::vector<EEGRecording> synth_dataset(
    const std::vector<std::string>& channel_names, const TagLookup& tag_of,
    const std::vector<std::string>& region_tags, const SynthSpec& spec) {
    if (spec.n_classes < 2) throw ConfigError("synth: need >= 2 classes");
    for (const auto& [cls, offsets] : spec.class_offsets_db) {
        if (cls < 0 || cls >= spec.n_classes)
            throw ConfigError("synth: offset class " + std::to_string(cls) +
                              " out of range");
        for (const auto& [tag, db] : offsets) {
            (void)db;
            bool known = false;
            for (const auto& t : region_tags) known = known || t == tag;
            if (!known)
                throw ConfigError("synth: unknown region tag '" + tag + "'");
        }
    }
    const auto n_samples = static_cast<std::size_t>(
        std::llround(spec.duration_seconds * spec.sample_rate_hz));
    std::vector<EEGRecording> out;
    out.reserve(static_cast<std::size_t>(spec.n_classes) *
                static_cast<std::size_t>(spec.trials_per_class));
    for (int cls = 0; cls < spec.n_classes; ++cls) {
        // per-class gain per region tag
        std::map<std::string, double> gain;
        for (const auto& t : region_tags) gain[t] = 1.0;
        if (auto it = spec.class_offsets_db.find(cls);
            it != spec.class_offsets_db.end()) {
            for (const auto& [tag, db] : it->second)
                gain[tag] = std::pow(10.0, db / 20.0);
        } else if (spec.class_offsets_db.empty()) {
            const auto& boosted =
                region_tags[static_cast<std::size_t>(cls) % region_tags.size()];
            gain[boosted] = std::pow(10.0, spec.offset_db / 20.0);
        }
        for (int trial = 0; trial < spec.trials_per_class; ++trial) {
            Rng rng(Rng::derive(spec.seed,
                                (static_cast<std::uint64_t>(cls) << 32) |
                                    static_cast<std::uint64_t>(trial)));
            EEGRecording rec;
            rec.channel_names = channel_names;
            rec.sample_rate_hz = spec.sample_rate_hz;
            rec.label = cls;
            rec.samples.resize(channel_names.size());
            for (std::size_t c = 0; c < channel_names.size(); ++c) {
                std::vector<double> white(n_samples);
                for (auto& v : white) v = spec.noise_scale * rng.normal();
                auto shaped = bandpass_channel(white, 1.0, 50.0,
                                               spec.sample_rate_hz);
                const double g = gain.at(tag_of(channel_names[c]));
                for (auto& v : shaped) v *= g;
                rec.samples[c] = std::move(shaped);
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// binary formats (.eegr / .deft), little-endian throughout
// ---------------------------------------------------------------------------

namespace io {

inline void put_u16(std::string& b, std::uint16_t v) {
    b.push_back(static_cast<char>(v & 0xFF));
    b.push_back(static_cast<char>((v >> 8) & 0xFF));
}
inline void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& b, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(b, u);
}

class Reader {
public:
    Reader(const std::string& data, const std::string& what)
        : data_(data), what_(what) {}
    std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t u = u32();
        float f;
        std::memcpy(&f, &u, 4);
        return f;
    }
    std::string bytes(std::size_t n) {
        if (pos_ + n > data_.size())
            throw DataError(what_ + ": truncated file");
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool exhausted() const { return pos_ == data_.size(); }

private:
    std::uint32_t u8() {
        if (pos_ >= data_.size()) throw DataError(what_ + ": truncated file");
        return static_cast<unsigned char>(data_[pos_++]);
    }
    const std::string& data_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot open " + p.string());
    std::string s((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
    return s;
}

inline void write_file(const std::filesystem::path& p, const std::string& data) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + p.string());
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!f) throw DataError("write failed for " + p.string());
}

} // namespace io

inline std::string encode_eegr(const EEGRecording& rec) {
    rec.validate();
    std::string b;
    b += "EEGR";
    io::put_u16(b, 1);
    io::put_u16(b, static_cast<std::uint16_t>(rec.n_channels()));
    io::put_f32(b, static_cast<float>(rec.sample_rate_hz));
    io::put_u64(b, rec.n_samples());
    for (const auto& ch : rec.samples)
        for (double v : ch) io::put_f32(b, static_cast<float>(v));
    return b;
}

inline nlohmann::json eegr_manifest(const EEGRecording& rec,
                                    const std::string& filename) {
    return nlohmann::json{{"channels", rec.channel_names},
                          {"label", rec.label},
                          {"file", filename}};
}

inline void save_eegr(const std::filesystem::path& path,
                      const EEGRecording& rec) {
    io::write_file(path, encode_eegr(rec));
    auto manifest = path;
    manifest.replace_extension(".json");
    io::write_file(manifest,
                   eegr_manifest(rec, path.filename().string()).dump(2) + "\n");
}

inline EEGRecording load_eegr(const std::filesystem::path& path) {
    const std::string blob = io::read_file(path);
    io::Reader r(blob, path.string());
    if (r.bytes(4) != "EEGR") throw DataError(path.string() + ": bad magic");
    const auto version = r.u16();
    if (version != 1)
        throw DataError(path.string() + ": unsupported version " +
                        std::to_string(version));
    EEGRecording rec;
    const std::size_t n_ch = r.u16();
    rec.sample_rate_hz = r.f32();
    const std::size_t n_s = r.u64();
    rec.samples.assign(n_ch, std::vector<double>(n_s));
    for (std::size_t c = 0; c < n_ch; ++c)
        for (std::size_t t = 0; t < n_s; ++t) rec.samples[c][t] = r.f32();
    if (!r.exhausted()) throw DataError(path.string() + ": trailing bytes");

    auto manifest = path;
    manifest.replace_extension(".json");
    if (!std::filesystem::exists(manifest))
        throw DataError("missing sidecar manifest " + manifest.string());
    auto j = nlohmann::json::parse(io::read_file(manifest));
    rec.channel_names = j.at("channels").get<std::vector<std::string>>();
    rec.label = j.value("label", -1);
    if (rec.channel_names.size() != n_ch)
        throw DataError(manifest.string() + ": channel count mismatch");
    rec.validate();
    return rec;
}

inline std::string encode_deft(const FeatureTensor& ft) {
    std::string b;
    b += "DEFT";
    io::put_u16(b, 1);
    io::put_u32(b, static_cast<std::uint32_t>(ft.n_windows()));
    io::put_u16(b, static_cast<std::uint16_t>(ft.n_channels()));
    io::put_u16(b, static_cast<std::uint16_t>(FeatureTensor::n_bands()));
    io::put_f32(b, static_cast<float>(ft.window_seconds));
    for (const auto& win : ft.values)
        for (const auto& ch : win)
            for (double v : ch) io::put_f32(b, static_cast<float>(v));
    return b;
}

inline void save_deft(const std::filesystem::path& path, const FeatureTensor& ft,
                      const std::vector<std::string>& channels, int label) {
    io::write_file(path, encode_deft(ft));
    auto manifest = path;
    manifest.replace_extension(".json");
    nlohmann::json j{{"channels", channels},
                     {"label", label},
                     {"file", path.filename().string()}};
    io::write_file(manifest, j.dump(2) + "\n");
}

struct FeatureFile {
    FeatureTensor features;
    std::vector<std::string> channels;
    int label = -1;
    std::string id; // stem, used for trial-level splits
};

inline FeatureFile load_deft(const std::filesystem::path& path) {
    const std::string blob = io::read_file(path);
    io::Reader r(blob, path.string());
    if (r.bytes(4) != "DEFT") throw DataError(path.string() + ": bad magic");
    const auto version = r.u16();
    if (version != 1)
        throw DataError(path.string() + ": unsupported version " +
                        std::to_string(version));
    FeatureFile ff;
    const std::size_t n_w = r.u32();
    const std::size_t n_c = r.u16();
    const std::size_t n_b = r.u16();
    if (n_b != 5)
        throw DataError(path.string() + ": expected 5 bands, found " +
                        std::to_string(n_b));
    ff.features.window_seconds = r.f32();
    ff.features.values.assign(
        n_w, std::vector<std::array<double, 5>>(n_c, std::array<double, 5>{}));
    for (std::size_t w = 0; w < n_w; ++w)
        for (std::size_t c = 0; c < n_c; ++c)
            for (std::size_t b = 0; b < n_b; ++b) {
                const double v = r.f32();
                if (!std::isfinite(v))
                    throw DataError(path.string() + ": non-finite feature");
                ff.features.values[w][c][b] = v;
            }
    if (!r.exhausted()) throw DataError(path.string() + ": trailing bytes");

    auto manifest = path;
    manifest.replace_extension(".json");
    if (!std::filesystem::exists(manifest))
        throw DataError("missing sidecar manifest " + manifest.string());
    auto j = nlohmann::json::parse(io::read_file(manifest));
    ff.channels = j.at("channels").get<std::vector<std::string>>();
    ff.label = j.value("label", -1);
    ff.id = path.stem().string();
    if (ff.channels.size() != n_c)
        throw DataError(manifest.string() + ": channel count mismatch");
    return ff;
}

// deterministic (sorted) directory scan
inline std::vector<std::filesystem::path> list_files(
    const std::filesystem::path& dir, const std::string& extension) {
    if (!std::filesystem::is_directory(dir))
        throw DataError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == extension)
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace mvgt::eegsig
