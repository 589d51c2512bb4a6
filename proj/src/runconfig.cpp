#include "hfan/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hfan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": cannot parse '" + v + "' as a number");
  return out;
}

std::size_t parse_size(const std::string& v, const std::string& key) {
  if (!v.empty() && v[0] == '-') throw ConfigError(key + ": must be non-negative, got " + v);
  return parse_number<std::size_t>(v, key);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Shortest text that reads back to the same double.
std::string fmt(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

std::string fmt(bool b) { return b ? "true" : "false"; }

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value, const std::string& where) {
  const std::string& v = value;
  try {
    if (key == "model.stage_channels") {
      const auto items = split_list(v);
      if (items.size() != kNumStages) throw ConfigError(key + ": expected 4 comma-separated widths");
      for (std::size_t i = 0; i < kNumStages; ++i) model.stage_channels[i] = parse_size(items[i], key);
    } else if (key == "model.decoder_dim") {
      model.decoder_dim = parse_size(v, key);
    } else if (key == "model.attn_width") {
      model.attn_width = parse_size(v, key);
    } else if (key == "model.share_encoder") {
      model.share_encoder = parse_bool(v, key);
    } else if (key == "model.share_poc") {
      model.share_poc = parse_bool(v, key);
    } else if (key == "model.fusion") {
      model.fusion = parse_fusion(v);
    } else if (key == "model.seed") {
      model.seed = parse_number<std::uint64_t>(v, key);
    } else if (key == "train.lr0") {
      train.lr0 = parse_number<double>(v, key);
    } else if (key == "train.iters") {
      train.iters = parse_number<std::uint64_t>(v, key);
    } else if (key == "train.batch") {
      train.batch = parse_size(v, key);
    } else if (key == "train.crop") {
      train.crop = parse_size(v, key);
    } else if (key == "train.seed") {
      train.seed = parse_number<std::uint64_t>(v, key);
    } else if (key == "train.augment") {
      train.augment = parse_bool(v, key);
    } else if (key == "train.checkpoint_every") {
      checkpoint_every = parse_number<std::uint64_t>(v, key);
    } else if (key == "data.train_count") {
      data.train_count = parse_size(v, key);
    } else if (key == "data.val_count") {
      data.val_count = parse_size(v, key);
    } else if (key == "data.frames") {
      data.frames = parse_size(v, key);
    } else if (key == "data.height") {
      data.height = parse_size(v, key);
    } else if (key == "data.width") {
      data.width = parse_size(v, key);
    } else if (key == "data.seed") {
      data.seed = parse_number<std::uint64_t>(v, key);
    } else if (key == "data.noise") {
      data.noise = parse_number<double>(v, key);
    } else if (key == "data.flow_failure") {
      data.flow_failure = synth::parse_flow_failure(v);
    } else if (key == "data.flow_sigma") {
      data.flow_sigma = parse_number<double>(v, key);
    } else if (key == "data.vmax") {
      data.vmax = parse_number<double>(v, key);
    } else if (key == "eval.scales") {
      eval.scales.clear();
      for (const auto& s : split_list(v)) eval.scales.push_back(parse_number<double>(s, key));
    } else if (key == "eval.tol") {
      eval.tol = parse_number<double>(v, key);
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  }
}

void RunConfig::parse(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  const auto& c = model.stage_channels;
  os << "model.stage_channels = " << c[0] << ',' << c[1] << ',' << c[2] << ',' << c[3] << '\n'
     << "model.decoder_dim = " << model.decoder_dim << '\n'
     << "model.attn_width = " << model.attn_width << '\n'
     << "model.share_encoder = " << fmt(model.share_encoder) << '\n'
     << "model.share_poc = " << fmt(model.share_poc) << '\n'
     << "model.fusion = " << fusion_name(model.fusion) << '\n'
     << "model.seed = " << model.seed << '\n'
     << "train.lr0 = " << fmt(train.lr0) << '\n'
     << "train.iters = " << train.iters << '\n'
     << "train.batch = " << train.batch << '\n'
     << "train.crop = " << train.crop << '\n'
     << "train.seed = " << train.seed << '\n'
     << "train.augment = " << fmt(train.augment) << '\n'
     << "train.checkpoint_every = " << checkpoint_every << '\n'
     << "data.train_count = " << data.train_count << '\n'
     << "data.val_count = " << data.val_count << '\n'
     << "data.frames = " << data.frames << '\n'
     << "data.height = " << data.height << '\n'
     << "data.width = " << data.width << '\n'
     << "data.seed = " << data.seed << '\n'
     << "data.noise = " << fmt(data.noise) << '\n'
     << "data.flow_failure = " << synth::flow_failure_name(data.flow_failure) << '\n'
     << "data.flow_sigma = " << fmt(data.flow_sigma) << '\n'
     << "data.vmax = " << fmt(data.vmax) << '\n'
     << "eval.scales = ";
  for (std::size_t i = 0; i < eval.scales.size(); ++i) os << (i ? "," : "") << fmt(eval.scales[i]);
  os << '\n' << "eval.tol = " << fmt(eval.tol) << '\n';
  return os.str();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data.frames < 2) throw ConfigError("data.frames must be at least 2");
  if (data.height < 32 || data.width < 32) throw ConfigError("data.height and data.width must be at least 32");
  if (data.height % 32 || data.width % 32) throw ConfigError("data.height and data.width must be multiples of 32");
  if (data.noise < 0 || data.flow_sigma < 0) throw ConfigError("data.noise and data.flow_sigma must be non-negative");
  if (!(data.vmax > 0)) throw ConfigError("data.vmax must be positive");
  if (eval.scales.empty()) throw ConfigError("eval.scales is empty");
  for (double s : eval.scales)
    if (!(s > 0)) throw ConfigError("eval.scales must be positive");
  if (eval.tol < 0) throw ConfigError("eval.tol must be non-negative");
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  c.parse(ss.str(), path);
  return c;
}

synth::SceneSpec scene_for(const DataConfig& d, std::uint64_t seed) {
  synth::SceneSpec s = synth::random_scene(seed, d.height, d.width, d.frames);
  s.noise = d.noise;
  s.flow_failure = d.flow_failure;
  s.flow_sigma = d.flow_sigma;
  s.vmax = d.vmax;
  return s;
}

}  // namespace hfan
