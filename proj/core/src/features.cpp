#include "ergl/features.hpp"

#include <fftw3.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>

#include "ergl/errors.hpp"

namespace ergl::features {

namespace {

constexpr double kTwoPi = 6.283185307179586;

// FFTW plans are created once; planning is not thread-safe but executing an
// existing plan on caller-owned buffers is.
class RealFft {
 public:
  static const RealFft& instance() {
    static RealFft fft;
    return fft;
  }

  // in: kWindow reals, out: kFftBins complex values.
  void run(double* in, fftw_complex* out) const { fftw_execute_dft_r2c(plan_, in, out); }

 private:
  RealFft() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    double* in = fftw_alloc_real(kWindow);
    fftw_complex* out = fftw_alloc_complex(kFftBins);
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(kWindow), in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
  }
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  fftw_plan plan_;
};

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

std::size_t reflect_index(std::ptrdiff_t pos, std::size_t len) {
  if (len == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
  pos %= period;
  if (pos < 0) pos += period;
  if (pos >= static_cast<std::ptrdiff_t>(len)) pos = period - pos;
  return static_cast<std::size_t>(pos);
}

void validate(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) {
    throw InputError("clip '" + clip.clip_id + "': sample rate " +
                     std::to_string(clip.sample_rate) + " Hz, expected " +
                     std::to_string(kSampleRate) + " (no resampling is performed)");
  }
  if (clip.samples.empty()) throw InputError("clip '" + clip.clip_id + "' has no samples");
}

void put_u32(std::ofstream& f, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  f.write(b.data(), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr char kMelMagic[8] = {'E', 'R', 'G', 'L', 'M', 'E', 'L', '1'};

}  // namespace

std::size_t num_frames(std::size_t num_samples) {
  return (num_samples + 2 * (kWindow / 2) - kWindow) / kHop + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor<float> stft_power(const AudioClip& clip) {
  validate(clip);
  const std::size_t len = clip.samples.size();
  const std::size_t frames = num_frames(len);
  std::array<double, kWindow> window{};
  for (std::size_t k = 0; k < kWindow; ++k) {
    window[k] = 0.54 - 0.46 * std::cos(kTwoPi * static_cast<double>(k) / kWindow);
  }
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(kWindow));
  std::unique_ptr<fftw_complex, FftwDeleter> out(fftw_alloc_complex(kFftBins));
  const RealFft& fft = RealFft::instance();

  Tensor<float> power(Shape{frames, kFftBins});
  const auto half = static_cast<std::ptrdiff_t>(kWindow / 2);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto start = static_cast<std::ptrdiff_t>(t * kHop) - half;
    for (std::size_t k = 0; k < kWindow; ++k) {
      const std::size_t src = reflect_index(start + static_cast<std::ptrdiff_t>(k), len);
      in.get()[k] = window[k] * static_cast<double>(clip.samples[src]);
    }
    fft.run(in.get(), out.get());
    float* row = power.data() + t * kFftBins;
    for (std::size_t f = 0; f < kFftBins; ++f) {
      const double re = out.get()[f][0];
      const double im = out.get()[f][1];
      row[f] = static_cast<float>(re * re + im * im);
    }
  }
  return power;
}

std::vector<double> mel_center_frequencies(std::size_t n_mels, double f_min, double f_max) {
  const double lo = hz_to_mel(f_min);
  const double hi = hz_to_mel(f_max);
  std::vector<double> centers(n_mels);
  for (std::size_t m = 0; m < n_mels; ++m) {
    centers[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(n_mels + 1));
  }
  return centers;
}

Tensor<float> mel_filterbank(std::size_t n_mels, double f_min, double f_max) {
  if (n_mels == 0 || !(f_max > f_min) || f_min < 0.0) {
    throw ConfigError("mel_filterbank: invalid band layout");
  }
  const double lo = hz_to_mel(f_min);
  const double hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  Tensor<float> fb(Shape{kFftBins, n_mels});
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    const double norm = 2.0 / (right - left);
    for (std::size_t k = 0; k < kFftBins; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / static_cast<double>(kWindow);
      const double rising = (f - left) / (center - left);
      const double falling = (right - f) / (right - center);
      const double w = std::max(0.0, std::min(rising, falling));
      fb[k * n_mels + m] = static_cast<float>(w * norm);
    }
  }
  return fb;
}

MelSpectrogram log_mel(const AudioClip& clip) {
  const Tensor<float> power = stft_power(clip);
  static const Tensor<float> fb = mel_filterbank();
  const std::size_t frames = power.extent(0);
  MelSpectrogram mel;
  mel.values = Tensor<float>(Shape{frames, kMelBins});
  for (std::size_t t = 0; t < frames; ++t) {
    const float* prow = power.data() + t * kFftBins;
    for (std::size_t m = 0; m < kMelBins; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kFftBins; ++k) {
        acc += static_cast<double>(prow[k]) * static_cast<double>(fb[k * kMelBins + m]);
      }
      mel.values[t * kMelBins + m] =
          acc <= kPowerFloor ? kLogFloorDb : static_cast<float>(10.0 * std::log10(acc));
    }
  }
  return mel;
}

void write_mel_file(const std::filesystem::path& path, const MelSpectrogram& mel) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write feature file " + path.string());
  f.write(kMelMagic, sizeof(kMelMagic));
  put_u32(f, static_cast<std::uint32_t>(mel.frames()));
  put_u32(f, static_cast<std::uint32_t>(mel.bins()));
  for (float v : mel.values.values()) put_u32(f, std::bit_cast<std::uint32_t>(v));
  if (!f) throw IoError("failed writing feature file " + path.string());
}

MelSpectrogram read_mel_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open feature file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMelMagic, 8) != 0) {
    throw IoError(path.string() + ": not an ERGLMEL1 feature file");
  }
  const std::size_t frames = get_u32(bytes.data() + 8);
  const std::size_t bins = get_u32(bytes.data() + 12);
  if (frames == 0 || bins == 0 || bytes.size() != 16 + 4 * frames * bins) {
    throw IoError(path.string() + ": feature file size does not match its header");
  }
  MelSpectrogram mel;
  mel.values = Tensor<float>(Shape{frames, bins});
  for (std::size_t i = 0; i < frames * bins; ++i) {
    mel.values[i] = std::bit_cast<float>(get_u32(bytes.data() + 16 + 4 * i));
  }
  return mel;
}

MelSpectrogram load_features(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".wav") return log_mel(read_wav(path));
  return read_mel_file(path);
}

}  // namespace ergl::features
