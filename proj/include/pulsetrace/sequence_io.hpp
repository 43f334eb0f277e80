#ifndef PULSETRACE_SEQUENCE_IO_HPP
#define PULSETRACE_SEQUENCE_IO_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "pulsetrace/errors.hpp"
#include "pulsetrace/tensor.hpp"

// One pulsatile-vessel video with exact per-frame ground truth, and its
// on-disk container:
//
//   .usq v1, little-endian:
//   "USQ1" | u32 version | u32 K | u32 N | u32 M | f32 frame_rate
//   | f32 pixel_pitch | u64 seed | K x f32 diameters | K*N*M f32 pixels

namespace pulsetrace {

struct UltrasoundSequence {
  std::vector<Tensor<float>> frames;  // 1 x N x M, values in [0, 1]
  std::vector<float> diameters_mm;    // y[t]
  float frame_rate = 47.0f;
  float pixel_pitch_mm = 0.0625f;
  std::uint64_t seed = 0;
  std::size_t true_period = 0;  // generator metadata, 0 when unknown

  std::size_t length() const { return frames.size(); }
  std::size_t rows() const { return frames.empty() ? 0 : frames[0].extent(1); }
  std::size_t cols() const { return frames.empty() ? 0 : frames[0].extent(2); }
};

inline constexpr char kUsqMagic[4] = {'U', 'S', 'Q', '1'};
inline constexpr std::uint32_t kUsqVersion = 1;

inline void write_sequence(std::ostream& out, const UltrasoundSequence& seq) {
  out.write(kUsqMagic, 4);
  io::write_pod<std::uint32_t>(out, kUsqVersion);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(seq.length()));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(seq.rows()));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(seq.cols()));
  io::write_pod<float>(out, seq.frame_rate);
  io::write_pod<float>(out, seq.pixel_pitch_mm);
  io::write_pod<std::uint64_t>(out, seq.seed);
  for (float d : seq.diameters_mm) io::write_pod<float>(out, d);
  for (const auto& f : seq.frames) {
    out.write(reinterpret_cast<const char*>(f.data()),
              static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
}

inline void write_sequence(const std::filesystem::path& path,
                           const UltrasoundSequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for write: " + path.string());
  write_sequence(out, seq);
  if (!out) throw FormatError("write failed: " + path.string());
}

// Header-only parse, returning K/N/M without the payload.
struct UsqHeader {
  std::uint32_t k = 0, n = 0, m = 0;
  float frame_rate = 0.0f;
  float pixel_pitch = 0.0f;
  std::uint64_t seed = 0;
};

inline UsqHeader read_sequence_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in) throw TruncatedError(".usq: truncated magic");
  if (std::string(magic, 4) != std::string(kUsqMagic, 4)) {
    throw BadMagicError(".usq: bad magic '" + std::string(magic, 4) + "'");
  }
  const auto version = io::read_pod<std::uint32_t>(in, ".usq version");
  if (version != kUsqVersion) {
    throw UnsupportedVersionError(".usq: unsupported version " +
                                  std::to_string(version));
  }
  UsqHeader h;
  h.k = io::read_pod<std::uint32_t>(in, ".usq frame count");
  h.n = io::read_pod<std::uint32_t>(in, ".usq rows");
  h.m = io::read_pod<std::uint32_t>(in, ".usq cols");
  h.frame_rate = io::read_pod<float>(in, ".usq frame rate");
  h.pixel_pitch = io::read_pod<float>(in, ".usq pixel pitch");
  h.seed = io::read_pod<std::uint64_t>(in, ".usq seed");
  if (h.k == 0 || h.n == 0 || h.m == 0) {
    throw FormatError(".usq: zero extent in header");
  }
  return h;
}

inline Tensor<float> read_sequence_frame(std::istream& in,
                                         const UsqHeader& h) {
  Tensor<float> frame({1, h.n, h.m});
  in.read(reinterpret_cast<char*>(frame.data()),
          static_cast<std::streamsize>(frame.size() * sizeof(float)));
  if (!in) throw TruncatedError(".usq: truncated pixel payload");
  return frame;
}

inline UltrasoundSequence read_sequence(std::istream& in) {
  const auto h = read_sequence_header(in);
  UltrasoundSequence seq;
  seq.frame_rate = h.frame_rate;
  seq.pixel_pitch_mm = h.pixel_pitch;
  seq.seed = h.seed;
  seq.diameters_mm.resize(h.k);
  for (auto& d : seq.diameters_mm) {
    d = io::read_pod<float>(in, ".usq diameter");
  }
  seq.frames.reserve(h.k);
  for (std::uint32_t t = 0; t < h.k; ++t) {
    seq.frames.push_back(read_sequence_frame(in, h));
  }
  return seq;
}

inline UltrasoundSequence read_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  return read_sequence(in);
}

// frame_index,diameter_mm rows, 1-based frames.
inline void export_diameters_csv(std::ostream& out,
                                 const UltrasoundSequence& seq) {
  out << "frame_index,diameter_mm\n";
  for (std::size_t t = 0; t < seq.length(); ++t) {
    out << (t + 1) << "," << seq.diameters_mm[t] << "\n";
  }
}

}  // namespace pulsetrace

#endif  // PULSETRACE_SEQUENCE_IO_HPP
