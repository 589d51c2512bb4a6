#pragma once

// Synthetic moving-shape videos with exact optical flow.
//
// Objects are textured in their own coordinates and move rigidly (translation plus
// rotation about their centre). The background is a static texture with a few
// static distractor shapes drawn from the same palette as the objects, so a single
// frame does not reveal which shapes move. Flow is the analytic displacement of the
// front object at each mask pixel and zero elsewhere.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hfan/rng.hpp"
#include "hfan/tensor.hpp"

namespace hfan::synth {

enum class ShapeKind { Disk, Rectangle, Polygon };

/// Smooth colour texture: base colour plus three sinusoids per channel.
struct Texture {
  float base[3] = {0.5f, 0.5f, 0.5f};
  float amp[3][3] = {};
  float freq_x[3][3] = {};
  float freq_y[3][3] = {};
  float phase[3][3] = {};

  /// Colourful, higher-contrast texture used for objects and distractors.
  static Texture random(Rng& rng, double min_wavelength);
  /// Near-grey, low-contrast texture used for the background.
  static Texture muted(Rng& rng, double min_wavelength);
  void sample(double x, double y, float out[3]) const;
};

struct ObjectSpec {
  ShapeKind kind = ShapeKind::Disk;
  double cx = 32, cy = 32;  // centre at frame 0
  double size = 10;         // disk radius, rectangle half-width, polygon mean radius
  double aspect = 1;        // rectangle half-height / half-width
  std::vector<double> vertex_radius;  // polygon only, in units of size
  double angle = 0;         // orientation at frame 0 (radians)
  double vx = 0, vy = 0;    // pixels per frame
  double spin = 0;          // radians per frame
  Texture texture;

  /// Radius of the circle around the centre containing the shape.
  double bound() const;
  /// Point (x, y) inside the shape when its centre is (cx, cy) and orientation `theta`.
  bool contains(double x, double y, double cx_t, double cy_t, double theta) const;
};

enum class FlowFailure { None, Zeroed, Noisy };

std::string flow_failure_name(FlowFailure f);
FlowFailure parse_flow_failure(const std::string& s);

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t frames = 24;
  std::vector<ObjectSpec> objects;     // moving, back to front
  std::vector<ObjectSpec> distractors;  // static, part of the background
  Texture background;
  double noise = 0.0;  // Gaussian pixel noise on frames
  FlowFailure flow_failure = FlowFailure::None;
  double flow_sigma = 2.0;  // for FlowFailure::Noisy, pixels
  double vmax = 8.0;

  /// Throws ConfigError on bad extents, and when an object leaves the canvas, naming the frame.
  void validate() const;
};

/// Random scene whose objects keep integer velocities so translated masks keep their area.
SceneSpec random_scene(std::uint64_t seed, std::size_t height = 64, std::size_t width = 64, std::size_t frames = 24);

struct VideoSample {
  Tensor<float> frames;    // T x 3 x H x W in [0, 1]
  Tensor<float> flow_uv;   // (T-1) x 2 x H x W, pixels per frame; empty for RGB-only data
  Tensor<float> flow_rgb;  // (T-1) x 3 x H x W in [0, 1]
  Tensor<float> masks;     // T x 1 x H x W of {0, 1}; empty when unlabelled
  std::uint64_t seed = 0;

  std::size_t length() const { return frames.dim(0); }
  std::size_t height() const { return frames.dim(2); }
  std::size_t width() const { return frames.dim(3); }
};

/// Deterministic in (spec, seed); the seed only drives pixel and flow noise.
VideoSample generate(const SceneSpec& spec, std::uint64_t seed);

/// Flow stored at 16-bit precision, so 1 - R is exact and the flip remap is an involution.
inline constexpr float kFlowQuantum = 1.0f / 65536.0f;
inline constexpr double kDefaultVmax = 8.0;

/// R = clamp(u/vmax,-1,1)/2+0.5, G likewise from v, B = clamp(|f|/vmax,0,1); each
/// rounded to a multiple of 2^-16. Input 2 x H x W or T x 2 x H x W.
Tensor<float> flow_to_rgb(const Tensor<float>& flow_uv, double vmax = kDefaultVmax);

/// Frame t uses flow t -> t+1; the last frame reuses the previous flow.
std::size_t flow_index(std::size_t frame, std::size_t length);

/// Slices frame `t` of a T x C x H x W tensor as C x H x W.
Tensor<float> frame_at(const Tensor<float>& seq, std::size_t t);

/// "00007.ten" for frame 7.
std::string frame_name(std::size_t t);

/// Layout: frames/%05d.ten (3 x H x W), flow/%05d.ten (u, v, R, G, B as 5 x H x W),
/// masks/%05d.ten (1 x H x W) and a key=value `meta` file.
void write_sample(const std::filesystem::path& dir, const VideoSample& s);

/// Reads the layout above. Flow files may also be 3-channel RGB images (real data),
/// and masks may be absent. Throws FormatError (with the byte offset) on bad files.
VideoSample read_sample(const std::filesystem::path& dir);

}  // namespace hfan::synth
