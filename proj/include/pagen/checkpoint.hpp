#pragma once

#include <istream>
#include <ostream>
#include <string>

#include "pagen/detect.hpp"
#include "pagen/generator.hpp"

// Parameter checkpoints. Both formats are little-endian: a four-byte magic,
// u32 version (1), a config block, u32 tensor count, then (name, PGTN tensor)
// pairs in declared order.
//   PAGN (generator): u32 p, d_h, heads, C, flags (bit 0 symmetrize, bit 1
//   amp_log_scale).
//   PGDT (detector): u32 in_channels, u32 n_stages, u32 channels per stage,
//   u32 head_hidden, u32 n_classes.
namespace pagen::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const generator::PAGenParams& params);
generator::PAGenParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const generator::PAGenParams& params);
generator::PAGenParams load_checkpoint(const std::string& path);

void write_detector(std::ostream& out, const detect::DetectorParams& params);
detect::DetectorParams read_detector(std::istream& in);
void save_detector(const std::string& path, const detect::DetectorParams& params);
detect::DetectorParams load_detector(const std::string& path);

}  // namespace pagen::io
