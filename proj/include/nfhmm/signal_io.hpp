#pragma once

// WAV input/output, short-time Fourier analysis and overlap-add synthesis,
// and conversion of magnitude spectrograms into sound-quanta counts.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "nfhmm/binary_io.hpp"
#include "nfhmm/error.hpp"
#include "nfhmm/matrix.hpp"

namespace nfhmm {

struct TimeSignal {
  std::vector<double> samples;
  double sample_rate = 16000.0;

  std::size_t size() const noexcept { return samples.size(); }

  void validate() const {
    detail::require(sample_rate > 0.0 && std::isfinite(sample_rate),
                    "sample rate must be positive");
    for (double s : samples)
      if (!std::isfinite(s)) throw ValidationError("signal contains non-finite samples");
  }
};

enum class WindowKind : std::int64_t { hann = 0, rectangular = 1 };

struct StftConfig {
  std::size_t window_length = 1024;
  std::size_t hop_length = 256;
  WindowKind window = WindowKind::hann;
  std::size_t fft_length = 1024;

  // 64 ms windows with a 16 ms hop, i.e. 1024/256 at 16 kHz.
  static StftConfig for_rate(double sample_rate) {
    const auto win = static_cast<std::size_t>(std::lround(0.064 * sample_rate));
    const auto hop = static_cast<std::size_t>(std::lround(0.016 * sample_rate));
    return {win, hop, WindowKind::hann, win};
  }

  // Rectangular windows with no overlap: every frame is analysed
  // independently, so any complex spectrogram is consistent.
  static StftConfig rectangular_for_bins(std::size_t bins) {
    detail::require(bins >= 2, "need at least two frequency bins");
    const std::size_t n = 2 * (bins - 1);
    return {n, n, WindowKind::rectangular, n};
  }

  std::size_t bins() const noexcept { return fft_length / 2 + 1; }

  void validate() const {
    detail::require(hop_length > 0, "hop length must be positive");
    detail::require(hop_length <= window_length, "hop length exceeds window length");
    detail::require(window_length <= fft_length, "window length exceeds FFT length");
    detail::require(window_length >= 2, "window length must be at least 2");
    if (window == WindowKind::hann)
      detail::require(window_length % hop_length == 0 && window_length / hop_length >= 2,
                      "Hann window needs a hop that divides the window with >= 2x overlap");
    else if (window != WindowKind::rectangular)
      throw ValidationError("unknown window kind");
  }

  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

// Periodic Hann (constant overlap-add at hop = window/2, window/4, ...) or
// rectangular taper.
inline std::vector<double> make_window(WindowKind kind, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (kind == WindowKind::hann) {
    for (std::size_t n = 0; n < length; ++n)
      w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                  static_cast<double>(length));
  }
  return w;
}

struct ComplexSpectrogram {
  Matrix<std::complex<double>> bins;  // L x T
  StftConfig config;
  double sample_rate = 16000.0;
  std::size_t signal_length = 0;  // samples of the analysed signal; 0 = unknown

  std::size_t frequencies() const noexcept { return bins.rows(); }
  std::size_t frames() const noexcept { return bins.cols(); }

  Matrix<double> magnitude() const {
    Matrix<double> mag(bins.rows(), bins.cols());
    for (std::size_t i = 0; i < bins.size(); ++i) mag.data()[i] = std::abs(bins.data()[i]);
    return mag;
  }
};

struct CountSpectrogram {
  Matrix<double> values;            // L x T
  std::vector<double> frame_totals;  // v_t

  CountSpectrogram() = default;
  explicit CountSpectrogram(Matrix<double> v) : values(std::move(v)) { recompute_totals(); }

  std::size_t frequencies() const noexcept { return values.rows(); }
  std::size_t frames() const noexcept { return values.cols(); }

  void recompute_totals() {
    frame_totals.assign(values.cols(), 0.0);
    for (std::size_t l = 0; l < values.rows(); ++l)
      for (std::size_t t = 0; t < values.cols(); ++t) frame_totals[t] += values(l, t);
  }

  double total() const {
    double s = 0.0;
    for (double v : frame_totals) s += v;
    return s;
  }

  void validate() const {
    detail::require(values.rows() > 0 && values.cols() > 0, "empty spectrogram");
    detail::require(frame_totals.size() == values.cols(), "frame totals do not match frames");
    for (double v : values.storage())
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ValidationError("count spectrogram entries must be finite and non-negative");
  }
};

// ---------------------------------------------------------------------------
// WAV

enum class WavEncoding { pcm16, float32 };

namespace detail {

inline std::uint32_t read_le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

inline void put_le32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_le16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace detail

// Reads one channel of a PCM16 or float32 RIFF/WAVE file, scaled to [-1, 1].
inline TimeSignal load_wav(const std::string& path, std::size_t channel = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError("'" + path + "' is not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = detail::read_le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw IoError("'" + path + "': malformed fmt chunk");
      format = detail::read_le16(chunk + 8);
      channels = detail::read_le16(chunk + 10);
      rate = detail::read_le32(chunk + 12);
      bits = detail::read_le16(chunk + 22);
      if (format == 0xFFFE) {  // WAVE_FORMAT_EXTENSIBLE: sub-format GUID starts at offset 24
        if (avail < 26) throw IoError("'" + path + "': malformed extensible fmt chunk");
        format = detail::read_le16(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }
  if (channels == 0 || rate == 0) throw IoError("'" + path + "': missing fmt chunk");
  if (data == nullptr) throw IoError("'" + path + "': missing data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw IoError("'" + path + "': unsupported encoding (format " + std::to_string(format) +
                  ", " + std::to_string(bits) + " bits)");
  if (channel >= channels)
    throw ValidationError("'" + path + "': channel " + std::to_string(channel) +
                          " requested but file has " + std::to_string(channels));

  const std::size_t sample_bytes = bits / 8;
  const std::size_t frame_bytes = sample_bytes * channels;
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) throw ValidationError("'" + path + "': zero-length audio");

  TimeSignal signal;
  signal.sample_rate = rate;
  signal.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const unsigned char* p = data + i * frame_bytes + channel * sample_bytes;
    if (pcm16) {
      signal.samples[i] = static_cast<std::int16_t>(detail::read_le16(p)) / 32768.0;
    } else {
      const std::uint32_t raw = detail::read_le32(p);
      float f;
      std::memcpy(&f, &raw, sizeof f);
      signal.samples[i] = f;
    }
  }
  return signal;
}

inline void save_wav(const std::string& path, const TimeSignal& signal,
                     WavEncoding encoding = WavEncoding::float32) {
  signal.validate();
  const bool pcm16 = encoding == WavEncoding::pcm16;
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(signal.size() * (bits / 8));
  const auto rate = static_cast<std::uint32_t>(std::lround(signal.sample_rate));

  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  for (char c : std::string_view("RIFF")) out.push_back(static_cast<unsigned char>(c));
  detail::put_le32(out, 36 + data_bytes);
  for (char c : std::string_view("WAVEfmt ")) out.push_back(static_cast<unsigned char>(c));
  detail::put_le32(out, 16);
  detail::put_le16(out, pcm16 ? 1 : 3);
  detail::put_le16(out, 1);
  detail::put_le32(out, rate);
  detail::put_le32(out, rate * (bits / 8));
  detail::put_le16(out, bits / 8);
  detail::put_le16(out, bits);
  for (char c : std::string_view("data")) out.push_back(static_cast<unsigned char>(c));
  detail::put_le32(out, data_bytes);
  for (double s : signal.samples) {
    if (pcm16) {
      const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
      detail::put_le16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
    } else {
      const float f = static_cast<float>(s);
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      detail::put_le32(out, raw);
    }
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// STFT

namespace detail {

// Owns an FFTW real/complex plan pair for one transform length. Plan
// creation is not thread-safe in FFTW; construct these from one thread.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    real_ = fftw_alloc_real(n);
    spec_ = fftw_alloc_complex(n / 2 + 1);
    const int len = static_cast<int>(n);
    forward_ = fftw_plan_dft_r2c_1d(len, real_, spec_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(len, spec_, real_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::span<double> time() noexcept { return {real_, n_}; }
  std::complex<double>* freq() noexcept { return reinterpret_cast<std::complex<double>*>(spec_); }

  void forward() { fftw_execute(forward_); }
  // Unnormalized: result is n times the inverse DFT.
  void inverse() { fftw_execute(inverse_); }

 private:
  std::size_t n_;
  double* real_;
  fftw_complex* spec_;
  fftw_plan forward_;
  fftw_plan inverse_;
};

}  // namespace detail

inline std::size_t frame_count(std::size_t signal_length, const StftConfig& config) {
  if (signal_length <= config.window_length) return 1;
  const std::size_t rest = signal_length - config.window_length;
  return 1 + (rest + config.hop_length - 1) / config.hop_length;
}

// Column t holds the windowed DFT of the frame starting at t * hop. The last
// frame is zero-padded when the signal does not fill it.
inline ComplexSpectrogram stft(const TimeSignal& signal, const StftConfig& config) {
  config.validate();
  signal.validate();
  if (signal.size() < config.window_length)
    throw ValidationError("signal shorter than one analysis window");

  const std::size_t frames = frame_count(signal.size(), config);
  const std::size_t bins = config.bins();
  const auto window = make_window(config.window, config.window_length);

  ComplexSpectrogram spec;
  spec.bins = Matrix<std::complex<double>>(bins, frames);
  spec.config = config;
  spec.sample_rate = signal.sample_rate;
  spec.signal_length = signal.size();

  detail::RealFft fft(config.fft_length);
  auto buffer = fft.time();
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buffer.begin(), buffer.end(), 0.0);
    const std::size_t start = t * config.hop_length;
    for (std::size_t i = 0; i < config.window_length && start + i < signal.size(); ++i)
      buffer[i] = signal.samples[start + i] * window[i];
    fft.forward();
    for (std::size_t l = 0; l < bins; ++l) spec.bins(l, t) = fft.freq()[l];
  }
  return spec;
}

// Weighted overlap-add inverse. Samples whose summed squared window is zero
// (the very first sample under a periodic Hann taper) come back as 0.
inline TimeSignal istft(const ComplexSpectrogram& spec) {
  const StftConfig& config = spec.config;
  config.validate();
  if (spec.frequencies() != config.bins())
    throw ValidationError("spectrogram has " + std::to_string(spec.frequencies()) +
                          " bins, config implies " + std::to_string(config.bins()));
  detail::require(spec.frames() > 0, "spectrogram has no frames");

  const std::size_t frames = spec.frames();
  const std::size_t span_length = (frames - 1) * config.hop_length + config.window_length;
  const std::size_t out_length = spec.signal_length > 0 ? spec.signal_length : span_length;
  detail::require(out_length <= span_length, "signal length inconsistent with frame count");

  const auto window = make_window(config.window, config.window_length);
  std::vector<double> acc(span_length, 0.0), norm(span_length, 0.0);
  detail::RealFft fft(config.fft_length);
  const double scale = 1.0 / static_cast<double>(config.fft_length);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t l = 0; l < config.bins(); ++l) fft.freq()[l] = spec.bins(l, t);
    fft.inverse();
    auto buffer = fft.time();
    const std::size_t start = t * config.hop_length;
    for (std::size_t i = 0; i < config.window_length; ++i) {
      acc[start + i] += buffer[i] * scale * window[i];
      norm[start + i] += window[i] * window[i];
    }
  }
  TimeSignal out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(out_length);
  for (std::size_t n = 0; n < out_length; ++n)
    out.samples[n] = norm[n] > 1e-10 ? acc[n] / norm[n] : 0.0;
  return out;
}

inline CountSpectrogram to_counts(const ComplexSpectrogram& spec, double gain = 1.0) {
  if (!(gain > 0.0) || !std::isfinite(gain)) throw ValidationError("gain must be positive");
  Matrix<double> values = spec.magnitude();
  for (double& v : values.storage()) v *= gain;
  return CountSpectrogram(std::move(values));
}

// ---------------------------------------------------------------------------
// Spectrogram persistence (debugging aid). Header fields are 64-bit integers:
// kind, L, T, sample_rate, window_length, hop_length, window_kind,
// fft_length, signal_length. Payload is row-major float64; complex cells are
// stored as (re, im) pairs.

inline constexpr auto kSpectrogramMagic = binary::make_magic("NFSPEC01");

namespace detail {

inline void write_spec_header(binary::Writer& w, std::int64_t kind, std::size_t l,
                              std::size_t t, double rate, const StftConfig& c,
                              std::size_t signal_length) {
  if (rate != std::floor(rate)) throw ValidationError("sample rate must be integral to persist");
  w.put_i64(kind);
  w.put_i64(static_cast<std::int64_t>(l));
  w.put_i64(static_cast<std::int64_t>(t));
  w.put_i64(static_cast<std::int64_t>(rate));
  w.put_i64(static_cast<std::int64_t>(c.window_length));
  w.put_i64(static_cast<std::int64_t>(c.hop_length));
  w.put_i64(static_cast<std::int64_t>(c.window));
  w.put_i64(static_cast<std::int64_t>(c.fft_length));
  w.put_i64(static_cast<std::int64_t>(signal_length));
}

}  // namespace detail

inline void save_spectrogram(const std::string& path, const ComplexSpectrogram& spec) {
  binary::Writer w(path, kSpectrogramMagic);
  detail::write_spec_header(w, 1, spec.frequencies(), spec.frames(), spec.sample_rate,
                            spec.config, spec.signal_length);
  const auto* raw = reinterpret_cast<const double*>(spec.bins.data());
  w.put_f64s({raw, spec.bins.size() * 2});
  w.finish();
}

inline void save_spectrogram(const std::string& path, const CountSpectrogram& counts,
                             const StftConfig& config, double sample_rate) {
  binary::Writer w(path, kSpectrogramMagic);
  detail::write_spec_header(w, 0, counts.frequencies(), counts.frames(), sample_rate, config, 0);
  w.put_f64s(counts.values.storage());
  w.finish();
}

struct StoredSpectrogram {
  bool is_complex = false;
  ComplexSpectrogram complex;  // valid when is_complex
  CountSpectrogram counts;     // valid otherwise
};

inline StoredSpectrogram load_spectrogram(const std::string& path) {
  binary::Reader r(path, kSpectrogramMagic);
  const auto kind = r.get_i64();
  const auto l = static_cast<std::size_t>(r.get_i64());
  const auto t = static_cast<std::size_t>(r.get_i64());
  const auto rate = static_cast<double>(r.get_i64());
  StftConfig config;
  config.window_length = static_cast<std::size_t>(r.get_i64());
  config.hop_length = static_cast<std::size_t>(r.get_i64());
  config.window = static_cast<WindowKind>(r.get_i64());
  config.fft_length = static_cast<std::size_t>(r.get_i64());
  const auto signal_length = static_cast<std::size_t>(r.get_i64());
  if (kind != 0 && kind != 1) throw IoError("'" + path + "': unknown spectrogram kind");

  StoredSpectrogram out;
  out.is_complex = kind == 1;
  if (out.is_complex) {
    auto payload = r.get_f64s(l * t * 2);
    out.complex.bins = Matrix<std::complex<double>>(l, t);
    for (std::size_t i = 0; i < l * t; ++i)
      out.complex.bins.data()[i] = {payload[2 * i], payload[2 * i + 1]};
    out.complex.config = config;
    out.complex.sample_rate = rate;
    out.complex.signal_length = signal_length;
  } else {
    auto payload = r.get_f64s(l * t);
    Matrix<double> values(l, t);
    values.storage() = std::move(payload);
    out.counts = CountSpectrogram(std::move(values));
  }
  r.expect_end();
  return out;
}

}  // namespace nfhmm
