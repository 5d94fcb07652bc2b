#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "binaural/core/error.hpp"

namespace binaural::signal {

/// Planar time-domain audio: one sample vector per channel (0 = left).
struct Waveform {
  int sample_rate = 16000;
  std::vector<std::vector<double>> channels;

  Waveform() = default;
  Waveform(int rate, std::vector<std::vector<double>> ch) : sample_rate(rate), channels(std::move(ch)) {
    validate();
  }

  static Waveform mono(int rate, std::vector<double> samples) {
    std::vector<std::vector<double>> ch;
    ch.push_back(std::move(samples));
    return Waveform(rate, std::move(ch));
  }

  static Waveform stereo(int rate, std::vector<double> left, std::vector<double> right) {
    std::vector<std::vector<double>> ch;
    ch.push_back(std::move(left));
    ch.push_back(std::move(right));
    return Waveform(rate, std::move(ch));
  }

  std::size_t num_channels() const { return channels.size(); }
  std::size_t num_samples() const { return channels.empty() ? 0 : channels[0].size(); }
  bool is_mono() const { return channels.size() == 1; }
  bool is_stereo() const { return channels.size() == 2; }
  const std::vector<double>& left() const { return channels.at(0); }
  const std::vector<double>& right() const { return channels.at(1); }

  void validate() const {
    if (channels.empty() || channels.size() > 2)
      throw DataError("waveform must have 1 or 2 channels, got " + std::to_string(channels.size()));
    if (sample_rate <= 0) throw DataError("waveform sample rate must be positive");
    const std::size_t n = channels[0].size();
    if (n == 0) throw DataError("waveform has no samples");
    for (const auto& c : channels) {
      if (c.size() != n) throw DataError("waveform channels differ in length");
      for (double v : c)
        if (!std::isfinite(v)) throw DataError("waveform contains non-finite samples");
    }
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

inline std::uint32_t read_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

inline std::uint16_t read_u16(const unsigned char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

template <typename V>
void put(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

}  // namespace detail

/// Reads RIFF/WAVE with 16-bit PCM or 32-bit float samples, mono or stereo.
/// 16-bit samples are scaled by 1/32768 into [-1, 1).
inline Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* hdr = buf.data() + pos;
    const std::uint32_t len = detail::read_u32(hdr + 4);
    if (pos + 8 + len > buf.size()) throw fail("chunk at offset " + std::to_string(pos) + " overruns file");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16) throw fail("fmt chunk too short");
      format = detail::read_u16(hdr + 8);
      channels = detail::read_u16(hdr + 10);
      rate = detail::read_u32(hdr + 12);
      bits = detail::read_u16(hdr + 22);
      if (format == 0xFFFE) {
        if (len < 26) throw fail("extensible fmt chunk too short");
        format = detail::read_u16(hdr + 32);
      }
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = hdr + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1u);
  }
  if (channels == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels > 2) throw fail("unsupported channel count " + std::to_string(channels));
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw fail("unsupported sample format (tag " + std::to_string(format) + ", " + std::to_string(bits) + " bits)");

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t n = data_len / frame_bytes;
  std::vector<std::vector<double>> ch(channels, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * (bits / 8);
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        ch[c][i] = static_cast<double>(s) / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        ch[c][i] = static_cast<double>(s);
      }
    }
  try {
    return Waveform(static_cast<int>(rate), std::move(ch));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Writes 32-bit float WAV. Samples are rounded to float.
inline void save_wav(const std::filesystem::path& path, const Waveform& w) {
  w.validate();
  const auto nch = static_cast<std::uint16_t>(w.num_channels());
  const auto n = static_cast<std::uint32_t>(w.num_samples());
  const std::uint32_t data_len = n * nch * 4u;
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put<std::uint32_t>(out, 36u + data_len);
  out += "WAVEfmt ";
  detail::put<std::uint32_t>(out, 16);
  detail::put<std::uint16_t>(out, 3);
  detail::put<std::uint16_t>(out, nch);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(w.sample_rate) * nch * 4u);
  detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(nch * 4));
  detail::put<std::uint16_t>(out, 32);
  out += "data";
  detail::put<std::uint32_t>(out, data_len);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint16_t c = 0; c < nch; ++c) detail::put<float>(out, static_cast<float>(w.channels[c][i]));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to " + path.string());
}

}  // namespace binaural::signal
