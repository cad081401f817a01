#include "pagen/checkpoint.hpp"

#include <fstream>
#include <vector>

#include "pagen/serialize.hpp"

namespace pagen::io {

namespace {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_named(std::ostream& out, const NamedTensors& named) {
  write_u32(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    write_string(out, name);
    write_tensor(out, t);
  }
}

// Reads tensors over the layout of `expected`, checking names and shapes, and
// hands each one to `assign`.
template <typename Assign>
void read_named(std::istream& in, const char* format, const NamedTensors& expected,
                Assign&& assign) {
  const std::uint32_t count = read_u32(in, "tensor count");
  if (count != expected.size()) {
    throw FormatError(std::string(format) + ": tensor count " + std::to_string(count) +
                      " does not match the config (" + std::to_string(expected.size()) + ")");
  }
  for (const auto& [name, like] : expected) {
    const std::string got = read_string(in, "tensor name");
    if (got != name) {
      throw FormatError(std::string(format) + ": expected tensor \"" + name + "\", found \"" +
                        got + "\"");
    }
    Tensor t = read_tensor(in);
    if (t.shape() != like.shape()) {
      throw FormatError(std::string(format) + ": tensor \"" + name + "\" has shape " +
                        shape_to_string(t.shape()) + ", expected " + shape_to_string(like.shape()));
    }
    t.set_requires_grad(true);
    assign(name, std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(std::string(format) + ": trailing bytes after the last tensor");
  }
}

void check_version(std::istream& in, const char* format) {
  const std::uint32_t version = read_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError(std::string(format) + ": unsupported version " + std::to_string(version));
  }
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

template <typename Write>
void save_with(const std::string& path, Write&& write) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write(out);
  if (!out) throw FormatError("write failed for " + path);
}

std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return in;
}

}  // namespace

void write_checkpoint(std::ostream& out, const generator::PAGenParams& params) {
  const generator::PAGenConfig& c = params.config;
  out.write("PAGN", 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, u32(c.patch));
  write_u32(out, u32(c.hidden));
  write_u32(out, u32(c.heads));
  write_u32(out, u32(c.channels));
  write_u32(out, (c.symmetrize ? 1u : 0u) | (c.amp_log_scale ? 2u : 0u));
  write_named(out, params.named());
}

generator::PAGenParams read_checkpoint(std::istream& in) {
  expect_magic(in, "PAGN");
  check_version(in, "PAGN");
  generator::PAGenConfig c;
  c.patch = read_u32(in, "PAGN patch");
  c.hidden = read_u32(in, "PAGN hidden");
  c.heads = read_u32(in, "PAGN heads");
  c.channels = read_u32(in, "PAGN channels");
  const std::uint32_t flags = read_u32(in, "PAGN flags");
  if (flags > 3) throw FormatError("PAGN: unknown flag bits " + std::to_string(flags));
  c.symmetrize = (flags & 1u) != 0;
  c.amp_log_scale = (flags & 2u) != 0;
  try {
    generator::validate(c);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("PAGN: invalid config block: ") + e.what());
  }
  generator::PAGenParams p = generator::init_params(c, 0);
  read_named(in, "PAGN", p.named(),
             [&](const std::string& name, Tensor t) { p.assign(name, std::move(t)); });
  return p;
}

void save_checkpoint(const std::string& path, const generator::PAGenParams& params) {
  save_with(path, [&](std::ostream& out) { write_checkpoint(out, params); });
}

generator::PAGenParams load_checkpoint(const std::string& path) {
  std::ifstream in = open_for_read(path);
  return read_checkpoint(in);
}

void write_detector(std::ostream& out, const detect::DetectorParams& params) {
  const detect::DetectorConfig& c = params.config;
  out.write("PGDT", 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, u32(c.in_channels));
  write_u32(out, u32(c.stage_channels.size()));
  for (std::size_t ch : c.stage_channels) write_u32(out, u32(ch));
  write_u32(out, u32(c.head_hidden));
  write_u32(out, u32(c.n_classes));
  write_named(out, params.named());
}

detect::DetectorParams read_detector(std::istream& in) {
  expect_magic(in, "PGDT");
  check_version(in, "PGDT");
  detect::DetectorConfig c;
  c.in_channels = read_u32(in, "PGDT in_channels");
  const std::uint32_t stages = read_u32(in, "PGDT stage count");
  if (stages > 16) throw FormatError("PGDT: implausible stage count " + std::to_string(stages));
  c.stage_channels.clear();
  for (std::uint32_t i = 0; i < stages; ++i) c.stage_channels.push_back(read_u32(in, "PGDT stage channels"));
  c.head_hidden = read_u32(in, "PGDT head_hidden");
  c.n_classes = read_u32(in, "PGDT n_classes");
  try {
    detect::validate(c);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("PGDT: invalid config block: ") + e.what());
  }
  detect::DetectorParams p = detect::init_detector(c, 0);
  read_named(in, "PGDT", p.named(),
             [&](const std::string& name, Tensor t) { p.assign(name, std::move(t)); });
  return p;
}

void save_detector(const std::string& path, const detect::DetectorParams& params) {
  save_with(path, [&](std::ostream& out) { write_detector(out, params); });
}

detect::DetectorParams load_detector(const std::string& path) {
  std::ifstream in = open_for_read(path);
  return read_detector(in);
}

}  // namespace pagen::io
