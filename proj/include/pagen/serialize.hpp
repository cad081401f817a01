#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "pagen/tensor.hpp"

// PGTN tensor container: "PGTN", u32 version (1), u8 dtype (0=f32, 1=f64),
// u32 rank, u64 extents[rank], row-major payload. All integers little-endian.
namespace pagen::io {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

std::string tensor_to_bytes(const Tensor& t);
Tensor tensor_from_bytes(const std::string& bytes);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Little-endian primitives shared by the checkpoint formats.
void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_f32(std::ostream& out, float v);
void write_string(std::ostream& out, const std::string& s);
std::uint8_t read_u8(std::istream& in, const char* field);
std::uint32_t read_u32(std::istream& in, const char* field);
std::uint64_t read_u64(std::istream& in, const char* field);
double read_f64(std::istream& in, const char* field);
float read_f32(std::istream& in, const char* field);
std::string read_string(std::istream& in, const char* field);
// Reads exactly four bytes and throws FormatError naming `magic` on mismatch.
void expect_magic(std::istream& in, const char (&magic)[5]);

}  // namespace pagen::io
