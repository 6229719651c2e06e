#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "ergl/tensor.hpp"

namespace ergl::features {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kWindow = 1024;
inline constexpr std::size_t kHop = 320;
inline constexpr std::size_t kFftBins = kWindow / 2 + 1;  // 513
inline constexpr std::size_t kMelBins = 64;
inline constexpr double kPowerFloor = 1e-10;
inline constexpr float kLogFloorDb = -100.0f;

struct AudioClip {
  std::vector<float> samples;  // mono, in [-1, 1]
  int sample_rate = kSampleRate;
  std::string clip_id;
};

// Log-mel features of one clip: values is [frames x mel_bins].
struct MelSpectrogram {
  Tensor<float> values;
  std::size_t hop = kHop;
  std::size_t window = kWindow;

  std::size_t frames() const { return values.extent(0); }
  std::size_t bins() const { return values.extent(1); }
};

// Frames under reflect-centred framing: floor(len / hop) + 1.
std::size_t num_frames(std::size_t num_samples);

// Squared magnitude of the 1024-point real FFT of each periodic-Hamming
// windowed, reflect-padded centred frame: [frames x 513].
Tensor<float> stft_power(const AudioClip& clip);

// Triangular, area-normalised filters on mel = 2595 log10(1 + f/700): [513 x n_mels].
Tensor<float> mel_filterbank(std::size_t n_mels = kMelBins, double f_min = 0.0,
                             double f_max = kSampleRate / 2.0);

// Centre frequency (Hz) of each filter of mel_filterbank().
std::vector<double> mel_center_frequencies(std::size_t n_mels = kMelBins, double f_min = 0.0,
                                           double f_max = kSampleRate / 2.0);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// 10 log10(max(power . filterbank, 1e-10)).
MelSpectrogram log_mel(const AudioClip& clip);

// Mono 16-bit PCM WAV. Reading rejects other formats and sample rates.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

// Cached feature file: "ERGLMEL1", u32 frames, u32 bins, frames*bins f32,
// all little-endian.
void write_mel_file(const std::filesystem::path& path, const MelSpectrogram& mel);
MelSpectrogram read_mel_file(const std::filesystem::path& path);

// Reads a .wav (computing features) or a cached feature file.
MelSpectrogram load_features(const std::filesystem::path& path);

}  // namespace ergl::features
