#pragma once

// Binary dataset container and PBM export.
//
// Layout (all integers little-endian):
//   "PSVR" | version u16 | m u16 | n u16 | k u16 | count u64
//   per sample:
//     n rows of the image, each bit-packed MSB-first and padded to a byte
//     label byte: bit0 = SD Same, bit1 = SR Vertical
//     k placements as (row u16, col u16)
//     k items, m rows each, packed like image rows

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "psvrt/error.hpp"
#include "psvrt/generator.hpp"

namespace psvrt::io {

inline constexpr std::array<char, 4> kDatasetMagic = {'P', 'S', 'V', 'R'};
inline constexpr std::uint16_t kDatasetVersion = 1;

struct DatasetHeader {
  std::uint16_t version = kDatasetVersion;
  std::uint16_t m = 0;
  std::uint16_t n = 0;
  std::uint16_t k = 0;
  std::uint64_t count = 0;
};

namespace detail {

template <typename UInt>
void put_le(std::ostream& out, UInt value) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFU);
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt get_le(std::istream& in) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError("unexpected end of dataset stream");
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
  return value;
}

inline std::uint16_t checked_u16(int v, const char* what) {
  if (v < 0 || v > 0xFFFF) throw FormatError(std::string(what) + " does not fit in u16");
  return static_cast<std::uint16_t>(v);
}

// Packs `side` rows of `side` bits, MSB-first, each row padded to a byte.
template <typename BitAt>
void put_bit_rows(std::ostream& out, int side, BitAt bit_at) {
  const int row_bytes = (side + 7) / 8;
  std::vector<char> row(row_bytes);
  for (int r = 0; r < side; ++r) {
    std::fill(row.begin(), row.end(), 0);
    for (int c = 0; c < side; ++c) {
      if (bit_at(r, c)) row[c / 8] = static_cast<char>(row[c / 8] | (0x80 >> (c % 8)));
    }
    out.write(row.data(), row_bytes);
  }
}

inline std::vector<std::uint8_t> get_bit_rows(std::istream& in, int side) {
  const int row_bytes = (side + 7) / 8;
  std::vector<unsigned char> row(row_bytes);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(side) * side);
  for (int r = 0; r < side; ++r) {
    in.read(reinterpret_cast<char*>(row.data()), row_bytes);
    if (!in) throw FormatError("unexpected end of dataset stream");
    for (int c = 0; c < side; ++c) bits[static_cast<std::size_t>(r) * side + c] = (row[c / 8] >> (7 - c % 8)) & 1U;
  }
  return bits;
}

}  // namespace detail

inline void write_header(std::ostream& out, const DatasetHeader& h) {
  out.write(kDatasetMagic.data(), kDatasetMagic.size());
  detail::put_le(out, h.version);
  detail::put_le(out, h.m);
  detail::put_le(out, h.n);
  detail::put_le(out, h.k);
  detail::put_le(out, h.count);
}

inline DatasetHeader read_header(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kDatasetMagic) throw FormatError("not a PSVR dataset (bad magic)");
  DatasetHeader h;
  h.version = detail::get_le<std::uint16_t>(in);
  if (h.version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(h.version));
  h.m = detail::get_le<std::uint16_t>(in);
  h.n = detail::get_le<std::uint16_t>(in);
  h.k = detail::get_le<std::uint16_t>(in);
  h.count = detail::get_le<std::uint64_t>(in);
  return h;
}

inline void write_sample(std::ostream& out, const Sample& s) {
  const int n = s.image.side;
  detail::put_bit_rows(out, n, [&](int r, int c) { return s.image.at(r, c) != 0; });
  std::uint8_t label = 0;
  if (s.sd_label == SdLabel::Same) label |= 1U;
  if (s.sr_label == SrLabel::Vertical) label |= 2U;
  out.put(static_cast<char>(label));
  for (const auto& p : s.placements) {
    detail::put_le(out, detail::checked_u16(p.row, "placement row"));
    detail::put_le(out, detail::checked_u16(p.col, "placement col"));
  }
  for (const auto& item : s.items) {
    detail::put_bit_rows(out, item.side(), [&](int r, int c) { return item.at(r, c) != 0; });
  }
}

inline Sample read_sample(std::istream& in, const DatasetHeader& h) {
  Sample s;
  s.image.side = h.n;
  s.image.pixels = detail::get_bit_rows(in, h.n);
  const int label = in.get();
  if (!in) throw FormatError("unexpected end of dataset stream");
  if (label & ~0x3) throw FormatError("label byte has reserved bits set");
  s.sd_label = (label & 1) ? SdLabel::Same : SdLabel::Different;
  s.sr_label = (label & 2) ? SrLabel::Vertical : SrLabel::Horizontal;
  for (int i = 0; i < h.k; ++i) {
    Placement p;
    p.row = detail::get_le<std::uint16_t>(in);
    p.col = detail::get_le<std::uint16_t>(in);
    s.placements.push_back(p);
  }
  for (int i = 0; i < h.k; ++i) s.items.emplace_back(h.m, detail::get_bit_rows(in, h.m));
  return s;
}

struct Dataset {
  DatasetHeader header;
  std::vector<Sample> samples;
};

inline void write_dataset(std::ostream& out, const ImageParams& params, const std::vector<Sample>& samples) {
  DatasetHeader h;
  h.m = detail::checked_u16(params.m(), "m");
  h.n = detail::checked_u16(params.n(), "n");
  h.k = detail::checked_u16(params.k(), "k");
  h.count = samples.size();
  write_header(out, h);
  for (const auto& s : samples) {
    if (s.image.side != params.n() || static_cast<int>(s.items.size()) != params.k()) {
      throw ShapeError("sample does not match dataset parameters");
    }
    write_sample(out, s);
  }
  if (!out) throw IoError("failed writing dataset");
}

inline Dataset read_dataset(std::istream& in) {
  Dataset d;
  d.header = read_header(in);
  for (std::uint64_t i = 0; i < d.header.count; ++i) d.samples.push_back(read_sample(in, d.header));
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after last sample");
  return d;
}

inline void write_dataset_file(const std::string& path, const ImageParams& params,
                               const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_dataset(out, params, samples);
}

inline Dataset read_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_dataset(in);
}

// Raw PBM (P4): 1 = black ink, matching the item bits.
inline void write_pbm(std::ostream& out, const BinaryImage& image) {
  out << "P4\n" << image.side << ' ' << image.side << '\n';
  detail::put_bit_rows(out, image.side, [&](int r, int c) { return image.at(r, c) != 0; });
}

inline void write_pbm_file(const std::string& path, const BinaryImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_pbm(out, image);
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace psvrt::io
