#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "unetmer/common.hpp"
#include "unetmer/tensor.hpp"

namespace unetmer {

// --- UNMA array container -------------------------------------------------
// Layout: magic "UNMA", u8 dtype code, u8 rank, rank x u64 dims, raw
// little-endian element data.

enum class Dtype : std::uint8_t { f64 = 1, f32 = 2, i32 = 3, u8 = 4, i64 = 5 };

template <class T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<double>() { return Dtype::f64; }
template <>
constexpr Dtype dtype_of<float>() { return Dtype::f32; }
template <>
constexpr Dtype dtype_of<std::int32_t>() { return Dtype::i32; }
template <>
constexpr Dtype dtype_of<std::uint8_t>() { return Dtype::u8; }
template <>
constexpr Dtype dtype_of<std::int64_t>() { return Dtype::i64; }

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

// Raw element IO assumes a little-endian host; asserted in write_array.
inline bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

template <class To, class From>
Tensor<To> convert(const Tensor<From>& in) {
  return in.template cast<To>();
}

template <class T>
Tensor<T> read_payload(std::istream& is, const std::vector<std::size_t>& dims) {
  Tensor<T> t(dims);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(T)));
  check_io(bool(is), "truncated array payload");
  return t;
}

}  // namespace detail

template <class T>
void write_array(std::ostream& os, const Tensor<T>& t) {
  check_io(detail::host_is_little_endian(), "array container requires a little-endian host");
  os.write("UNMA", 4);
  const std::uint8_t dtype = static_cast<std::uint8_t>(dtype_of<T>());
  const std::uint8_t rank = static_cast<std::uint8_t>(t.ndim());
  os.write(reinterpret_cast<const char*>(&dtype), 1);
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (std::size_t d : t.shape()) detail::write_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(T)));
  check_io(bool(os), "failed to write array");
}

// Reads an UNMA array, converting numeric payloads to T when the stored
// dtype differs (e.g. f32 checkpoints loaded into a f64 model).
template <class T>
Tensor<T> read_array(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  check_io(bool(is) && std::string(magic, 4) == "UNMA", "bad array magic");
  std::uint8_t dtype = 0, rank = 0;
  is.read(reinterpret_cast<char*>(&dtype), 1);
  is.read(reinterpret_cast<char*>(&rank), 1);
  check_io(bool(is), "truncated array header");
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = static_cast<std::size_t>(detail::read_u64(is));
  switch (static_cast<Dtype>(dtype)) {
    case Dtype::f64:
      return detail::convert<T>(detail::read_payload<double>(is, dims));
    case Dtype::f32:
      return detail::convert<T>(detail::read_payload<float>(is, dims));
    case Dtype::i32:
      return detail::convert<T>(detail::read_payload<std::int32_t>(is, dims));
    case Dtype::u8:
      return detail::convert<T>(detail::read_payload<std::uint8_t>(is, dims));
    case Dtype::i64:
      return detail::convert<T>(detail::read_payload<std::int64_t>(is, dims));
  }
  throw IoError("unknown dtype code " + std::to_string(int(dtype)));
}

template <class T>
void save_array(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  check_io(bool(os), "cannot open for write: " + path.string());
  write_array(os, t);
}

template <class T>
Tensor<T> load_array(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  check_io(bool(is), "cannot open: " + path.string());
  return read_array<T>(is);
}

// --- dataset manifest -------------------------------------------------------
// Header line:  version=1 modality=<M> num_classes=<K>
// Entry lines:  image=<relpath> mask=<relpath> split=<train|test> volume=<key|-> slice=<idx|->

enum class Modality { CT, MR, US, ENDO, SYNTH };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct ManifestEntry {
  std::string image;
  std::string mask;
  std::string split;       // "train" or "test"
  std::string volume_key;  // empty when not part of a volume
  int slice_index = -1;    // -1 when not part of a volume
};

struct DatasetManifest {
  std::filesystem::path root;
  Modality modality = Modality::SYNTH;
  int num_classes = 2;
  std::vector<ManifestEntry> entries;

  std::size_t count_split(const std::string& split) const;
};

// Parses and validates: nonempty entry list, known splits, referenced
// image/mask files exist under the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace unetmer
