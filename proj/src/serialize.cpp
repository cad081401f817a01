#include "pagen/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pagen::io {

namespace {

template <typename T>
void write_le(std::ostream& out, T v) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* field) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError(std::string("truncated input while reading ") + field);
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint8_t read_u8(std::istream& in, const char* field) { return read_le<std::uint8_t>(in, field); }
std::uint32_t read_u32(std::istream& in, const char* field) {
  return read_le<std::uint32_t>(in, field);
}
std::uint64_t read_u64(std::istream& in, const char* field) {
  return read_le<std::uint64_t>(in, field);
}
double read_f64(std::istream& in, const char* field) {
  return std::bit_cast<double>(read_le<std::uint64_t>(in, field));
}
float read_f32(std::istream& in, const char* field) {
  return std::bit_cast<float>(read_le<std::uint32_t>(in, field));
}

std::string read_string(std::istream& in, const char* field) {
  const std::uint32_t n = read_u32(in, field);
  if (n > (1u << 20)) throw FormatError(std::string("implausible length for ") + field);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw FormatError(std::string("truncated input while reading ") + field);
  }
  return s;
}

void expect_magic(std::istream& in, const char (&magic)[5]) {
  char got[4] = {};
  in.read(got, 4);
  if (in.gcount() != 4 || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("bad magic: expected \"") + magic + "\"");
  }
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("PGTN", 4);
  write_u32(out, kTensorFormatVersion);
  write_u8(out, static_cast<std::uint8_t>(t.dtype()));
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) write_u64(out, e);
  if (t.dtype() == DType::f32) {
    for (double v : t.data()) write_f32(out, static_cast<float>(v));
  } else {
    for (double v : t.data()) write_f64(out, v);
  }
}

Tensor read_tensor(std::istream& in) {
  expect_magic(in, "PGTN");
  const std::uint32_t version = read_u32(in, "PGTN version");
  if (version != kTensorFormatVersion) {
    throw FormatError("unsupported PGTN version " + std::to_string(version));
  }
  const std::uint8_t dtype_code = read_u8(in, "PGTN dtype");
  if (dtype_code > 1) throw FormatError("unknown PGTN dtype " + std::to_string(dtype_code));
  const DType dtype = static_cast<DType>(dtype_code);
  const std::uint32_t rank = read_u32(in, "PGTN rank");
  if (rank > 16) throw FormatError("implausible PGTN rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    e = read_u64(in, "PGTN extent");
    count *= e;
    if (count > kMaxElements) throw FormatError("PGTN tensor too large");
  }
  std::vector<double> values(count);
  for (auto& v : values) {
    v = dtype == DType::f32 ? static_cast<double>(read_f32(in, "PGTN payload"))
                            : read_f64(in, "PGTN payload");
  }
  return Tensor(std::move(shape), std::move(values), dtype);
}

std::string tensor_to_bytes(const Tensor& t) {
  std::ostringstream out(std::ios::binary);
  write_tensor(out, t);
  return std::move(out).str();
}

Tensor tensor_from_bytes(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_tensor(in);
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_tensor(out, t);
  if (!out) throw FormatError("write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_tensor(in);
}

}  // namespace pagen::io
