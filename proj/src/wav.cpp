#include "dropdef/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace dropdef {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

}  // namespace

std::int16_t quantize_sample(double s) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const double scaled = std::nearbyint(clipped * 32767.0);
    return static_cast<std::int16_t>(scaled);
}

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_wav: cannot open " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw FormatError("read_wav: corrupt header in " + path.string());

    bool have_fmt = false;
    int rate = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::uint32_t size = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) throw FormatError("read_wav: truncated chunk in " + path.string());
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16) throw FormatError("read_wav: short fmt chunk");
            const auto format = read_u16(bytes.data() + body);
            const auto channels = read_u16(bytes.data() + body + 2);
            rate = static_cast<int>(read_u32(bytes.data() + body + 4));
            const auto bits = read_u16(bytes.data() + body + 14);
            if (format != 1 || channels != 1 || bits != 16)
                throw FormatError("read_wav: only 16-bit PCM mono is supported (" + path.string() + ")");
            if (rate <= 0) throw FormatError("read_wav: invalid sample rate");
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) throw FormatError("read_wav: data chunk before fmt chunk");
            const std::size_t count = size / 2;
            Vector samples(static_cast<Eigen::Index>(count));
            for (std::size_t i = 0; i < count; ++i) {
                const auto raw = static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i));
                samples[static_cast<Eigen::Index>(i)] = raw / 32767.0;
            }
            return Waveform(std::move(samples), rate);
        }
        pos = body + size + (size & 1u);
    }
    throw FormatError("read_wav: no data chunk in " + path.string());
}

std::size_t write_wav(const std::filesystem::path& path, const Waveform& x) {
    std::size_t clipped = 0;
    std::vector<unsigned char> out;
    const auto data_bytes = static_cast<std::uint32_t>(x.size() * 2);
    out.reserve(44 + data_bytes);
    put_tag(out, "RIFF");
    put_u32(out, 36 + data_bytes);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, 1);
    put_u16(out, 1);
    put_u32(out, static_cast<std::uint32_t>(x.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(x.sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    put_tag(out, "data");
    put_u32(out, data_bytes);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double s = x.samples[i];
        if (s > 1.0 || s < -1.0) ++clipped;
        put_u16(out, static_cast<std::uint16_t>(quantize_sample(s)));
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("write_wav: cannot open " + path.string());
    file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!file) throw std::runtime_error("write_wav: write failed for " + path.string());
    return clipped;
}

}  // namespace dropdef
