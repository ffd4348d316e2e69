#pragma once

// Minimal RIFF/WAVE reader and writer: 16-bit PCM and 32-bit IEEE float,
// little-endian, one or two channels.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "binaural/dsp.hpp"
#include "binaural/errors.hpp"

namespace binaural::wav {

enum class Encoding { kPcm16, kFloat32 };

namespace detail {

static_assert(std::endian::native == std::endian::little, "wav io assumes a little-endian host");

inline std::uint32_t u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

template <typename T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

}  // namespace detail

inline Waveform parse(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>") {
  auto fail = [&](const std::string& why) { return InputError("wav " + origin + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = detail::u32(chunk + 4);
    if (pos + 8 + size > bytes.size()) throw fail("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw fail("fmt chunk too small");
      format = detail::u16(chunk + 8);
      channels = detail::u16(chunk + 10);
      rate = detail::u32(chunk + 12);
      bits = detail::u16(chunk + 22);
      if (format == 0xFFFE) {
        if (size < 40) throw fail("extensible fmt chunk too small");
        format = detail::u16(chunk + 8 + 24);  // first two bytes of the subformat GUID
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (format == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels < 1 || channels > 2) throw fail("unsupported channel count " + std::to_string(channels));
  if (rate == 0) throw fail("sample rate is zero");
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    throw fail("unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
               " bits); only 16-bit PCM and 32-bit float are accepted");

  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  Waveform wave;
  wave.sample_rate = static_cast<int>(rate);
  wave.channels.assign(channels, Channel(frames));
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * width;
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        wave.channels[c][i] = static_cast<double>(s) / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        if (!std::isfinite(s)) throw fail("non-finite float sample");
        wave.channels[c][i] = static_cast<double>(s);
      }
    }
  }
  return wave;
}

inline Waveform read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("wav: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes, path.string());
}

inline std::string serialize(const Waveform& wave, Encoding encoding = Encoding::kFloat32) {
  wave.validate();
  const std::uint16_t channels = static_cast<std::uint16_t>(wave.num_channels());
  const std::uint16_t bits = encoding == Encoding::kPcm16 ? 16 : 32;
  const std::uint16_t format = encoding == Encoding::kPcm16 ? 1 : 3;
  const std::uint32_t block = channels * bits / 8;
  const std::uint32_t data_size = static_cast<std::uint32_t>(wave.num_samples() * block);

  std::string out;
  out.reserve(44 + data_size);
  out.append("RIFF");
  detail::put<std::uint32_t>(out, 36 + data_size);
  out.append("WAVEfmt ");
  detail::put<std::uint32_t>(out, 16);
  detail::put<std::uint16_t>(out, format);
  detail::put<std::uint16_t>(out, channels);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate) * block);
  detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(block));
  detail::put<std::uint16_t>(out, bits);
  out.append("data");
  detail::put<std::uint32_t>(out, data_size);
  for (std::size_t i = 0; i < wave.num_samples(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = wave.channels[c][i];
      if (encoding == Encoding::kPcm16) {
        const double scaled = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        detail::put<std::int16_t>(out, static_cast<std::int16_t>(scaled));
      } else {
        detail::put<float>(out, static_cast<float>(v));
      }
    }
  }
  return out;
}

inline void write(const std::filesystem::path& path, const Waveform& wave, Encoding encoding = Encoding::kFloat32) {
  const auto bytes = serialize(wave, encoding);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("wav: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace binaural::wav
