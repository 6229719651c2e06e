#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ergl/errors.hpp"
#include "ergl/features.hpp"

namespace ergl::features {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError(path.string() + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      // Some writers leave a bogus length on a trailing data chunk.
      if (std::memcmp(chunk, "data", 4) != 0) throw IoError(path.string() + ": truncated chunk");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0 && len >= 16) {
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = std::min(len, bytes.size() - body);
      break;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt || !data) throw IoError(path.string() + ": missing fmt or data chunk");
  if (format != 1 || bits != 16 || channels != 1) {
    throw InputError(path.string() + ": expected mono 16-bit PCM, got format " +
                     std::to_string(format) + ", " + std::to_string(channels) + " channel(s), " +
                     std::to_string(bits) + " bits");
  }
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    throw InputError(path.string() + ": sample rate " + std::to_string(rate) + " Hz, expected " +
                     std::to_string(kSampleRate));
  }
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.clip_id = path.stem().string();
  clip.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    const auto s = static_cast<std::int16_t>(read_u16(data + 2 * i));
    clip.samples[i] = static_cast<float>(s) / 32768.0f;
  }
  if (clip.samples.empty()) throw InputError(path.string() + ": no samples");
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  for (float s : clip.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    const auto q = static_cast<std::int16_t>(std::lrint(std::min(c * 32768.0f, 32767.0f)));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write wav file " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace ergl::features
