#include "stemsep/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace stemsep {

AudioClip::AudioClip(Tensor s, int rate) : samples(std::move(s)), sample_rate(rate) {
    if (samples.ndim() != 2) throw DimensionError("AudioClip: samples must be [channels, frames]");
    if (samples.dim(0) < 1 || samples.dim(0) > 2)
        throw FormatError("AudioClip: channel count must be 1 or 2");
    if (rate <= 0) throw FormatError("AudioClip: sample rate must be positive");
}

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void write_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void write_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void write_tag(std::vector<std::uint8_t>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

}  // namespace

AudioClip load_audio(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw IoError("truncated wav file: " + path);
    if (std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw FormatError("not a RIFF/WAVE file: " + path);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const std::uint8_t* data_ptr = nullptr;
    std::size_t data_size = 0;
    bool have_fmt = false;

    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const char* tag = reinterpret_cast<const char*>(buf.data() + pos);
        const std::uint32_t chunk_size = read_u32(buf.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + chunk_size > buf.size()) throw IoError("truncated chunk in " + path);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (chunk_size < 16) throw FormatError("malformed fmt chunk in " + path);
            format = read_u16(buf.data() + body);
            channels = read_u16(buf.data() + body + 2);
            rate = read_u32(buf.data() + body + 4);
            bits = read_u16(buf.data() + body + 14);
            if (format == kFormatExtensible) {
                if (chunk_size < 40) throw FormatError("malformed extensible fmt in " + path);
                format = read_u16(buf.data() + body + 24);  // first bytes of the sub-format GUID
            }
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            data_ptr = buf.data() + body;
            data_size = chunk_size;
        }
        pos = body + chunk_size + (chunk_size & 1);
    }
    if (!have_fmt || !data_ptr) throw FormatError("missing fmt/data chunk in " + path);
    if (channels < 1 || channels > 2)
        throw FormatError("unsupported channel count in " + path);
    if (rate == 0) throw FormatError("bad sample rate in " + path);

    const bool is_float = format == kFormatFloat;
    if (!is_float && format != kFormatPcm)
        throw FormatError("unsupported codec in " + path);
    if (is_float && bits != 32) throw FormatError("unsupported float depth in " + path);
    if (!is_float && bits != 16 && bits != 24) throw FormatError("unsupported PCM depth in " + path);

    const std::size_t bytes_per = bits / 8;
    const std::size_t n_values = data_size / (bytes_per * channels);
    if (n_values == 0) throw FormatError("empty data chunk in " + path);

    Tensor samples = Tensor::zeros({channels, static_cast<int>(n_values)});
    float* out = samples.data();
    for (std::size_t i = 0; i < n_values; ++i) {
        for (int c = 0; c < channels; ++c) {
            const std::uint8_t* p = data_ptr + (i * channels + static_cast<std::size_t>(c)) * bytes_per;
            float v;
            if (is_float) {
                std::uint32_t u = read_u32(p);
                std::memcpy(&v, &u, 4);
            } else if (bits == 16) {
                const std::int16_t s = static_cast<std::int16_t>(p[0] | (p[1] << 8));
                v = static_cast<float>(s) / 32768.0f;
            } else {
                std::int32_t s = static_cast<std::int32_t>(p[0]) | (static_cast<std::int32_t>(p[1]) << 8) |
                                 (static_cast<std::int32_t>(p[2]) << 16);
                if (s & 0x800000) s |= ~0xFFFFFF;  // sign extend
                v = static_cast<float>(s) / 8388608.0f;
            }
            out[static_cast<std::size_t>(c) * n_values + i] = v;
        }
    }
    return AudioClip(std::move(samples), static_cast<int>(rate));
}

void save_audio(const AudioClip& clip, const std::string& path, SampleFormat format) {
    const int ch = clip.channels();
    const int n = clip.frames();
    const bool is_float = format == SampleFormat::kFloat32;
    const std::uint16_t bits = is_float ? 32 : 16;
    const std::uint32_t data_size = static_cast<std::uint32_t>(n) * ch * (bits / 8);

    std::vector<std::uint8_t> out;
    out.reserve(44 + data_size);
    write_tag(out, "RIFF");
    write_u32(out, 36 + data_size);
    write_tag(out, "WAVE");
    write_tag(out, "fmt ");
    write_u32(out, 16);
    write_u16(out, is_float ? kFormatFloat : kFormatPcm);
    write_u16(out, static_cast<std::uint16_t>(ch));
    write_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
    write_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * ch * (bits / 8));
    write_u16(out, static_cast<std::uint16_t>(ch * (bits / 8)));
    write_u16(out, bits);
    write_tag(out, "data");
    write_u32(out, data_size);

    const float* x = clip.samples.data();
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < ch; ++c) {
            const float v = x[static_cast<std::size_t>(c) * n + i];
            if (is_float) {
                std::uint32_t u;
                std::memcpy(&u, &v, 4);
                write_u32(out, u);
            } else {
                const long s = std::lround(static_cast<double>(v) * 32768.0);
                write_u16(out, static_cast<std::uint16_t>(
                                   static_cast<std::int16_t>(std::clamp<long>(s, -32768, 32767))));
            }
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path);
}

}  // namespace stemsep
