#ifndef DROPDEF_WAV_HPP
#define DROPDEF_WAV_HPP

#include "dropdef/types.hpp"

#include <filesystem>

namespace dropdef {

/// Reads RIFF/WAVE, PCM 16-bit signed little-endian, mono.
Waveform read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples outside [-1, 1] are saturated; the
/// return value counts how many were.
std::size_t write_wav(const std::filesystem::path& path, const Waveform& x);

/// The exact 16-bit code a sample is written as.
std::int16_t quantize_sample(double s);

}  // namespace dropdef

#endif
