#include "pagen/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace pagen {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key " + key + ": expected a number, got \"" + v + "\"");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key " + key + ": expected a non-negative integer, got \"" + v + "\"");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true or false, got \"" + v + "\"");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Get>
Field uint_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) {
            get(c) = static_cast<std::remove_reference_t<decltype(get(c))>>(parse_uint(k, v));
          },
          [get](const RunConfig& c) {
            return std::to_string(get(c));
          }};
}

template <typename Get>
Field double_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_double(k, v); },
          [get](const RunConfig& c) { return fmt_double(get(c)); }};
}

template <typename Get>
Field bool_field(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_bool(k, v); },
          [get](const RunConfig& c) { return fmt_bool(get(c)); }};
}

using Table = std::vector<std::pair<std::string, Field>>;

const Table& table() {
  static const Table t = [] {
    Table f;
    // dataset
    f.emplace_back("n_source", uint_field([](auto& c) -> auto& { return c.dataset.n_source; }));
    f.emplace_back("n_target", uint_field([](auto& c) -> auto& { return c.dataset.n_target; }));
    f.emplace_back("height", uint_field([](auto& c) -> auto& { return c.dataset.height; }));
    f.emplace_back("width", uint_field([](auto& c) -> auto& { return c.dataset.width; }));
    f.emplace_back("n_classes",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.dataset.n_classes = parse_uint(k, v);
                           c.train.detector.n_classes = c.dataset.n_classes;
                         },
                         [](const RunConfig& c) { return std::to_string(c.dataset.n_classes); }});
    f.emplace_back("data_seed", uint_field([](auto& c) -> auto& { return c.dataset.seed; }));
    f.emplace_back("lowpass_strength",
                   double_field([](auto& c) -> auto& { return c.dataset.style.lowpass_strength; }));
    f.emplace_back("gamma", double_field([](auto& c) -> auto& { return c.dataset.style.gamma; }));
    f.emplace_back("cast_r", double_field([](auto& c) -> auto& { return c.dataset.style.color_cast[0]; }));
    f.emplace_back("cast_g", double_field([](auto& c) -> auto& { return c.dataset.style.color_cast[1]; }));
    f.emplace_back("cast_b", double_field([](auto& c) -> auto& { return c.dataset.style.color_cast[2]; }));
    f.emplace_back("noise", double_field([](auto& c) -> auto& { return c.dataset.style.noise_sigma; }));
    // generator
    f.emplace_back("patch", uint_field([](auto& c) -> auto& { return c.train.pagen.patch; }));
    f.emplace_back("hidden", uint_field([](auto& c) -> auto& { return c.train.pagen.hidden; }));
    f.emplace_back("heads", uint_field([](auto& c) -> auto& { return c.train.pagen.heads; }));
    f.emplace_back("channels", uint_field([](auto& c) -> auto& { return c.train.pagen.channels; }));
    f.emplace_back("symmetrize", bool_field([](auto& c) -> auto& { return c.train.pagen.symmetrize; }));
    f.emplace_back("amp_log_scale",
                   bool_field([](auto& c) -> auto& { return c.train.pagen.amp_log_scale; }));
    // detector
    f.emplace_back("stage_channels",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           c.train.detector.stage_channels = parse_list(k, v);
                         },
                         [](const RunConfig& c) { return fmt_list(c.train.detector.stage_channels); }});
    f.emplace_back("head_hidden", uint_field([](auto& c) -> auto& { return c.train.detector.head_hidden; }));
    // training
    f.emplace_back("mode",
                   Field{[](RunConfig& c, const std::string&, const std::string& v) {
                           c.train.mode = detect::parse_train_mode(v);
                         },
                         [](const RunConfig& c) { return detect::to_string(c.train.mode); }});
    f.emplace_back("steps", uint_field([](auto& c) -> auto& { return c.train.steps; }));
    f.emplace_back("lr", double_field([](auto& c) -> auto& { return c.train.lr; }));
    f.emplace_back("pagen_lr", double_field([](auto& c) -> auto& { return c.train.pagen_lr; }));
    f.emplace_back("pagen_clip", double_field([](auto& c) -> auto& { return c.train.pagen_clip; }));
    f.emplace_back("momentum", double_field([](auto& c) -> auto& { return c.train.momentum; }));
    f.emplace_back("lambda", double_field([](auto& c) -> auto& { return c.train.lambda; }));
    f.emplace_back("seed", uint_field([](auto& c) -> auto& { return c.train.seed; }));
    f.emplace_back("fda_beta", double_field([](auto& c) -> auto& { return c.train.fda_beta; }));
    f.emplace_back("eval_every", uint_field([](auto& c) -> auto& { return c.train.eval_every; }));
    f.emplace_back("score_thresh", double_field([](auto& c) -> auto& { return c.train.score_thresh; }));
    f.emplace_back("nms_iou", double_field([](auto& c) -> auto& { return c.train.nms_iou; }));
    // output
    f.emplace_back("out", Field{[](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
                                [](const RunConfig& c) { return c.out; }});
    return f;
  }();
  return t;
}

const Field& field(const std::string& key) {
  for (const auto& [name, f] : table()) {
    if (name == key) return f;
  }
  throw UsageError("unknown config key: " + key);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& entry : table()) k.push_back(entry.first);
    return k;
  }();
  return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, key, trim(value));
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

std::string setting_value(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

std::string resolved_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, f] : table()) out += name + "=" + f.get(cfg) + "\n";
  return out;
}

void validate(const RunConfig& cfg) {
  data::validate(cfg.dataset);
  detect::validate(cfg.train);
  if (cfg.train.detector.n_classes != cfg.dataset.n_classes) {
    throw ConfigError("detector n_classes differs from the dataset's");
  }
  if (cfg.train.pagen.channels != 3) throw ConfigError("channels must be 3 for RGB scenes");
  const std::size_t p = cfg.train.pagen.patch, s = cfg.train.detector.stride();
  if (cfg.dataset.height % p != 0 || cfg.dataset.width % p != 0) {
    throw ConfigError("height and width must be divisible by patch=" + std::to_string(p));
  }
  if (cfg.dataset.height % s != 0 || cfg.dataset.width % s != 0) {
    throw ConfigError("height and width must be divisible by the detector stride " + std::to_string(s));
  }
}

}  // namespace pagen
