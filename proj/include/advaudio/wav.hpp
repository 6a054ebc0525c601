#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advaudio/audio.hpp"

namespace advaudio {

// 16-bit PCM RIFF/WAVE. Multi-channel input is averaged to mono and integer
// samples are scaled by 1/32768. Throws FormatError for malformed headers and
// UnsupportedFormat for anything other than 16-bit PCM.
AudioClip load_wav(const std::filesystem::path& path);
AudioClip decode_wav(std::span<const std::uint8_t> bytes);

// Writes 16-bit PCM mono. Throws IoError when the file cannot be written.
void save_wav(const AudioClip& clip, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);

// Round-to-nearest int16 conversion used by the encoder and the quantizer.
std::int16_t to_int16(float sample);

}  // namespace advaudio
