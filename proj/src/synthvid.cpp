#include "hfan/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hfan/tensor_io.hpp"

namespace hfan::synth {

std::string frame_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.ten", t);
  return buf;
}

namespace {

constexpr double kTwoPi = 6.283185307179586;

}  // namespace

namespace {

Texture make_texture(Rng& rng, double min_wavelength, const double base[3], double chroma, double amp_lo,
                     double amp_hi) {
  Texture t;
  for (int c = 0; c < 3; ++c) {
    t.base[c] = static_cast<float>(base[c] + rng.uniform(-chroma, chroma));
    for (int k = 0; k < 3; ++k) {
      const double wavelength = rng.uniform(min_wavelength, 3.0 * min_wavelength);
      const double dir = rng.uniform(0.0, kTwoPi);
      t.amp[c][k] = static_cast<float>(rng.uniform(amp_lo, amp_hi));
      t.freq_x[c][k] = static_cast<float>(std::cos(dir) * kTwoPi / wavelength);
      t.freq_y[c][k] = static_cast<float>(std::sin(dir) * kTwoPi / wavelength);
      t.phase[c][k] = static_cast<float>(rng.uniform(0.0, kTwoPi));
    }
  }
  return t;
}

}  // namespace

Texture Texture::random(Rng& rng, double min_wavelength) {
  const double mid[3] = {0.5, 0.5, 0.5};
  return make_texture(rng, min_wavelength, mid, 0.3, 0.03, 0.1);
}

Texture Texture::muted(Rng& rng, double min_wavelength) {
  const double grey = rng.uniform(0.35, 0.65);
  const double base[3] = {grey, grey, grey};
  return make_texture(rng, min_wavelength, base, 0.06, 0.01, 0.04);
}

void Texture::sample(double x, double y, float out[3]) const {
  for (int c = 0; c < 3; ++c) {
    double v = base[c];
    for (int k = 0; k < 3; ++k) v += amp[c][k] * std::sin(freq_x[c][k] * x + freq_y[c][k] * y + phase[c][k]);
    out[c] = static_cast<float>(v);
  }
}

double ObjectSpec::bound() const {
  switch (kind) {
    case ShapeKind::Disk: return size;
    case ShapeKind::Rectangle: return size * std::sqrt(1.0 + aspect * aspect);
    case ShapeKind::Polygon: {
      double r = 0.0;
      for (double v : vertex_radius) r = std::max(r, v);
      return size * r;
    }
  }
  return size;
}

bool ObjectSpec::contains(double x, double y, double cx_t, double cy_t, double theta) const {
  const double dx = x - cx_t, dy = y - cy_t;
  if (kind == ShapeKind::Disk) return dx * dx + dy * dy <= size * size;
  const double c = std::cos(theta), s = std::sin(theta);
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  if (kind == ShapeKind::Rectangle) return std::abs(lx) <= size && std::abs(ly) <= size * aspect;
  // Star-shaped polygon: vertices at equal angles with per-vertex radius.
  const std::size_t n = vertex_radius.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double ai = kTwoPi * double(i) / double(n), aj = kTwoPi * double(j) / double(n);
    const double xi = size * vertex_radius[i] * std::cos(ai), yi = size * vertex_radius[i] * std::sin(ai);
    const double xj = size * vertex_radius[j] * std::cos(aj), yj = size * vertex_radius[j] * std::sin(aj);
    if ((yi > ly) != (yj > ly) && lx < (xj - xi) * (ly - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

std::string flow_failure_name(FlowFailure f) {
  switch (f) {
    case FlowFailure::None: return "none";
    case FlowFailure::Zeroed: return "zeroed";
    case FlowFailure::Noisy: return "noisy";
  }
  return "?";
}

FlowFailure parse_flow_failure(const std::string& s) {
  for (FlowFailure f : {FlowFailure::None, FlowFailure::Zeroed, FlowFailure::Noisy})
    if (flow_failure_name(f) == s) return f;
  throw ConfigError("unknown flow failure mode '" + s + "' (expected none|zeroed|noisy)");
}

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw ConfigError("scene: canvas extents must be positive");
  if (frames < 2) throw ConfigError("scene: need at least 2 frames, got " + std::to_string(frames));
  if (!(vmax > 0.0)) throw ConfigError("scene: vmax must be positive");
  if (noise < 0.0 || flow_sigma < 0.0) throw ConfigError("scene: noise levels must be non-negative");
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const ObjectSpec& o = objects[k];
    if (o.kind == ShapeKind::Polygon && o.vertex_radius.size() < 3) {
      throw ConfigError("scene: polygon object " + std::to_string(k) + " needs at least 3 vertices");
    }
    const double r = o.bound();
    for (std::size_t t = 0; t < frames; ++t) {
      const double cx = o.cx + o.vx * double(t), cy = o.cy + o.vy * double(t);
      if (cx - r < 1.0 || cy - r < 1.0 || cx + r > double(width) - 1.0 || cy + r > double(height) - 1.0) {
        throw ConfigError("scene: object " + std::to_string(k) + " leaves the canvas at frame " + std::to_string(t));
      }
    }
  }
}

namespace {

ObjectSpec random_object(Rng& rng, double size) {
  ObjectSpec o;
  const std::size_t kind = rng.index(3);
  o.kind = kind == 0 ? ShapeKind::Disk : kind == 1 ? ShapeKind::Rectangle : ShapeKind::Polygon;
  o.size = size;
  if (o.kind == ShapeKind::Rectangle) {
    o.aspect = rng.uniform(0.5, 1.0);
    o.size = size / std::sqrt(1.0 + o.aspect * o.aspect) * 1.1;
  }
  if (o.kind == ShapeKind::Polygon) {
    const std::size_t n = 5 + rng.index(4);
    for (std::size_t i = 0; i < n; ++i) o.vertex_radius.push_back(rng.uniform(0.75, 1.0));
  }
  o.angle = rng.uniform(0.0, kTwoPi);
  o.texture = Texture::random(rng, 16.0);
  return o;
}

// Integer velocity per axis, reduced until the whole path fits.
double fit_velocity(Rng& rng, double extent, double bound, std::size_t frames) {
  const double room = extent - 2.0 - 2.0 * bound;
  int v = static_cast<int>(rng.index(5)) - 2;
  while (v != 0 && std::abs(v) * double(frames - 1) > room) v += v > 0 ? -1 : 1;
  return double(v);
}

double place(Rng& rng, double extent, double bound, double v, std::size_t frames) {
  const double travel = v * double(frames - 1);
  const double lo = 1.0 + bound + std::max(0.0, -travel);
  const double hi = extent - 1.0 - bound - std::max(0.0, travel);
  // Multiples of 1/8 keep centre arithmetic exact, so translated masks keep their area.
  const double c = std::ceil(rng.uniform(lo, std::max(lo, hi)) * 8.0) / 8.0;
  return c > hi ? std::floor(hi * 8.0) / 8.0 : c;
}

}  // namespace

SceneSpec random_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t frames) {
  Rng rng(derive_seed(seed, 0x7363656e65ULL));
  SceneSpec s;
  s.height = height;
  s.width = width;
  s.frames = frames;
  s.background = Texture::muted(rng, 24.0);
  const double unit = double(std::min(height, width)) / 64.0;

  const std::size_t distractors = 2 + rng.index(2);
  for (std::size_t i = 0; i < distractors; ++i) {
    ObjectSpec d = random_object(rng, rng.uniform(6.0, 11.0) * unit);
    const double r = d.bound();
    d.cx = rng.uniform(std::min(r, double(width) / 2), std::max(double(width) - r, double(width) / 2));
    d.cy = rng.uniform(std::min(r, double(height) / 2), std::max(double(height) - r, double(height) / 2));
    s.distractors.push_back(d);
  }

  const std::size_t count = rng.bernoulli(0.3) ? 2 : 1;
  for (std::size_t i = 0; i < count; ++i) {
    ObjectSpec o = random_object(rng, rng.uniform(10.0, 15.0) * unit * (count == 2 ? 0.8 : 1.0));
    const double r = o.bound();
    // Redraw until the object translates: spin alone leaves near-zero flow at the centre.
    for (int attempt = 0; attempt < 16 && o.vx == 0.0 && o.vy == 0.0; ++attempt) {
      o.vx = fit_velocity(rng, double(width), r, frames);
      o.vy = fit_velocity(rng, double(height), r, frames);
    }
    if (rng.bernoulli(0.4)) o.spin = rng.uniform(0.015, 0.04) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    o.cx = place(rng, double(width), r, o.vx, frames);
    o.cy = place(rng, double(height), r, o.vy, frames);
    s.objects.push_back(o);
  }
  s.validate();
  return s;
}

VideoSample generate(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t T = spec.frames, H = spec.height, W = spec.width, plane = H * W;
  VideoSample out;
  out.seed = seed;
  out.frames = Tensor<float>({T, 3, H, W});
  out.masks = Tensor<float>({T, 1, H, W});
  out.flow_uv = Tensor<float>({T - 1, 2, H, W});
  Rng pixel_noise(derive_seed(seed, 1));
  Rng flow_noise(derive_seed(seed, 2));
  const std::size_t n_obj = spec.objects.size();
  std::vector<int> count(n_obj);

  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> cx(n_obj), cy(n_obj), th(n_obj);
    for (std::size_t k = 0; k < n_obj; ++k) {
      const ObjectSpec& o = spec.objects[k];
      cx[k] = o.cx + o.vx * double(t);
      cy[k] = o.cy + o.vy * double(t);
      th[k] = o.angle + o.spin * double(t);
    }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        float acc[3] = {0, 0, 0};
        std::fill(count.begin(), count.end(), 0);
        int covered = 0;
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx) {
            const double px = double(x) + 0.25 + 0.5 * sx, py = double(y) + 0.25 + 0.5 * sy;
            float rgb[3];
            bool hit = false;
            for (std::size_t k = n_obj; k-- > 0;) {
              const ObjectSpec& o = spec.objects[k];
              if (!o.contains(px, py, cx[k], cy[k], th[k])) continue;
              const double dx = px - cx[k], dy = py - cy[k];
              const double c = std::cos(th[k]), s = std::sin(th[k]);
              o.texture.sample(c * dx + s * dy, -s * dx + c * dy, rgb);
              ++count[k];
              hit = true;
              break;
            }
            if (!hit) {
              for (std::size_t k = spec.distractors.size(); k-- > 0;) {
                const ObjectSpec& d = spec.distractors[k];
                if (!d.contains(px, py, d.cx, d.cy, d.angle)) continue;
                const double dx = px - d.cx, dy = py - d.cy;
                const double c = std::cos(d.angle), s = std::sin(d.angle);
                d.texture.sample(c * dx + s * dy, -s * dx + c * dy, rgb);
                hit = true;
                break;
              }
              if (!hit) spec.background.sample(px, py, rgb);
            } else {
              ++covered;
            }
            for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
          }
        for (int c = 0; c < 3; ++c) {
          float v = acc[c] * 0.25f;
          if (spec.noise > 0.0) v += static_cast<float>(spec.noise * pixel_noise.normal());
          out.frames[(t * 3 + c) * plane + y * W + x] = std::clamp(v, 0.0f, 1.0f);
        }
        const bool fg = covered >= 2;
        out.masks[t * plane + y * W + x] = fg ? 1.0f : 0.0f;
        if (t + 1 == T) continue;
        float u = 0.0f, v = 0.0f;
        if (fg && spec.flow_failure != FlowFailure::Zeroed) {
          std::size_t owner = 0;
          for (std::size_t k = 0; k < n_obj; ++k)
            if (count[k] >= count[owner]) owner = k;
          const ObjectSpec& o = spec.objects[owner];
          const double dx = double(x) + 0.5 - cx[owner], dy = double(y) + 0.5 - cy[owner];
          const double cw = std::cos(o.spin) - 1.0, sw = std::sin(o.spin);
          u = static_cast<float>(o.vx + (cw * dx - sw * dy));
          v = static_cast<float>(o.vy + (sw * dx + cw * dy));
        }
        if (spec.flow_failure == FlowFailure::Noisy) {
          u += static_cast<float>(spec.flow_sigma * flow_noise.normal());
          v += static_cast<float>(spec.flow_sigma * flow_noise.normal());
        }
        out.flow_uv[(t * 2 + 0) * plane + y * W + x] = u;
        out.flow_uv[(t * 2 + 1) * plane + y * W + x] = v;
      }
  }
  out.flow_rgb = flow_to_rgb(out.flow_uv, spec.vmax);
  return out;
}

Tensor<float> flow_to_rgb(const Tensor<float>& flow_uv, double vmax) {
  if (!(vmax > 0.0)) throw ConfigError("flow_to_rgb: vmax must be positive");
  const Shape& s = flow_uv.shape();
  const bool seq = s.size() == 4;
  if (!((s.size() == 3 && s[0] == 2) || (seq && s[1] == 2))) {
    throw DimensionError("flow_to_rgb: expected 2 x H x W or T x 2 x H x W, got " + shape_str(s));
  }
  const std::size_t T = seq ? s[0] : 1, plane = seq ? s[2] * s[3] : s[1] * s[2];
  Tensor<float> out(seq ? Shape{T, 3, s[2], s[3]} : Shape{3, s[1], s[2]});
  // Offsets from 0.5 are rounded symmetrically, so R(-u) == 1 - R(u) bit for bit.
  auto q = [](double x) { return static_cast<float>(std::nearbyint(x * 65536.0) / 65536.0); };
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t p = 0; p < plane; ++p) {
      const double u = flow_uv[(t * 2) * plane + p], v = flow_uv[(t * 2 + 1) * plane + p];
      out[(t * 3) * plane + p] = 0.5f + q(std::clamp(u / vmax, -1.0, 1.0) / 2.0);
      out[(t * 3 + 1) * plane + p] = 0.5f + q(std::clamp(v / vmax, -1.0, 1.0) / 2.0);
      out[(t * 3 + 2) * plane + p] = q(std::clamp(std::sqrt(u * u + v * v) / vmax, 0.0, 1.0));
    }
  return out;
}

std::size_t flow_index(std::size_t frame, std::size_t length) {
  if (length < 2) throw ContractError("flow_index: sequence has fewer than 2 frames");
  return std::min(frame, length - 2);
}

Tensor<float> frame_at(const Tensor<float>& seq, std::size_t t) {
  const Shape& s = seq.shape();
  if (s.size() != 4 || t >= s[0]) throw DimensionError("frame_at: index " + std::to_string(t) + " of " + shape_str(s));
  const std::size_t n = s[1] * s[2] * s[3];
  std::vector<float> data(seq.data().begin() + long(t * n), seq.data().begin() + long((t + 1) * n));
  return Tensor<float>({s[1], s[2], s[3]}, std::move(data));
}

namespace {

void put_frame(Tensor<float>& seq, std::size_t t, const Tensor<float>& f, std::size_t first_channel = 0) {
  const std::size_t c = seq.dim(1), plane = seq.dim(2) * seq.dim(3);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < plane; ++p) seq[(t * c + k) * plane + p] = f[(first_channel + k) * plane + p];
}

std::map<std::string, std::string> read_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing meta file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::size_t meta_size(const std::map<std::string, std::string>& kv, const std::string& key,
                      const std::filesystem::path& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(path.string() + ": missing key " + key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": " + key + " is not an unsigned integer: '" + it->second + "'");
  }
}

}  // namespace

void write_sample(const std::filesystem::path& dir, const VideoSample& s) {
  namespace fs = std::filesystem;
  const std::size_t T = s.length(), H = s.height(), W = s.width(), plane = H * W;
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "flow");
  if (!s.masks.empty()) fs::create_directories(dir / "masks");
  for (std::size_t t = 0; t < T; ++t) {
    io::save_tensor(dir / "frames" / frame_name(t), frame_at(s.frames, t));
    if (!s.masks.empty()) io::save_tensor(dir / "masks" / frame_name(t), frame_at(s.masks, t));
  }
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const bool uv = !s.flow_uv.empty();
    Tensor<float> f({uv ? 5u : 3u, H, W});
    std::size_t k = 0;
    if (uv) {
      for (std::size_t c = 0; c < 2; ++c, ++k)
        for (std::size_t p = 0; p < plane; ++p) f[k * plane + p] = s.flow_uv[(t * 2 + c) * plane + p];
    }
    for (std::size_t c = 0; c < 3; ++c, ++k)
      for (std::size_t p = 0; p < plane; ++p) f[k * plane + p] = s.flow_rgb[(t * 3 + c) * plane + p];
    io::save_tensor(dir / "flow" / frame_name(t), f);
  }
  std::ofstream meta(dir / "meta");
  meta << "H=" << H << "\nW=" << W << "\nT=" << T << "\nseed=" << s.seed << "\n";
  if (!meta) throw FormatError("cannot write " + (dir / "meta").string());
}

VideoSample read_sample(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto meta = read_meta(dir / "meta");
  const std::size_t H = meta_size(meta, "H", dir / "meta"), W = meta_size(meta, "W", dir / "meta"),
                    T = meta_size(meta, "T", dir / "meta");
  if (H == 0 || W == 0 || T < 2) throw FormatError((dir / "meta").string() + ": need H, W >= 1 and T >= 2");
  VideoSample s;
  if (meta.count("seed")) s.seed = meta_size(meta, "seed", dir / "meta");
  s.frames = Tensor<float>({T, 3, H, W});
  const bool labelled = fs::exists(dir / "masks");
  if (labelled) s.masks = Tensor<float>({T, 1, H, W});
  auto expect = [&](const fs::path& p, const Tensor<float>& t, const Shape& shape) {
    if (t.shape() != shape) {
      throw FormatError(p.string() + ": shape " + shape_str(t.shape()) + ", expected " + shape_str(shape));
    }
  };
  for (std::size_t t = 0; t < T; ++t) {
    const fs::path fp = dir / "frames" / frame_name(t);
    Tensor<float> f = io::load_tensor(fp);
    expect(fp, f, {3, H, W});
    put_frame(s.frames, t, f);
    if (labelled) {
      const fs::path mp = dir / "masks" / frame_name(t);
      Tensor<float> m = io::load_tensor(mp);
      expect(mp, m, {1, H, W});
      for (float v : m.storage())
        if (v != 0.0f && v != 1.0f) throw FormatError(mp.string() + ": mask values must be 0 or 1");
      put_frame(s.masks, t, m);
    }
  }
  std::size_t channels = 0;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const fs::path fp = dir / "flow" / frame_name(t);
    Tensor<float> f = io::load_tensor(fp);
    if (t == 0) {
      channels = f.rank() == 3 ? f.dim(0) : 0;
      if (channels != 5 && channels != 3) {
        throw FormatError(fp.string() + ": flow must be 5 x H x W (u, v, R, G, B) or 3 x H x W, got " +
                          shape_str(f.shape()));
      }
      s.flow_rgb = Tensor<float>({T - 1, 3, H, W});
      if (channels == 5) s.flow_uv = Tensor<float>({T - 1, 2, H, W});
    }
    expect(fp, f, {channels, H, W});
    if (channels == 5) {
      const std::size_t plane = H * W;
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t p = 0; p < plane; ++p) s.flow_uv[(t * 2 + c) * plane + p] = f[c * plane + p];
    }
    put_frame(s.flow_rgb, t, f, channels - 3);
  }
  return s;
}

}  // namespace hfan::synth
