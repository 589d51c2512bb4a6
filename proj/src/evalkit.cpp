#include "hfan/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>

namespace hfan::eval {

namespace {

constexpr double kEps = 2.220446049250313e-16;

struct Extent {
  std::size_t h, w;
};

Extent extent_of(const Tensor<float>& m, const char* what) {
  const Shape& s = m.shape();
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 3 && s[0] == 1) return {s[1], s[2]};
  throw DimensionError(std::string(what) + ": expected H x W or 1 x H x W, got " + shape_str(s));
}

void require_binary(const Tensor<float>& m, const char* what) {
  for (float v : m.storage())
    if (v != 0.0f && v != 1.0f) throw DataError(std::string(what) + ": mask values must be 0 or 1");
}

Extent check_pair(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  const Extent ea = extent_of(a, what), eb = extent_of(b, what);
  if (ea.h != eb.h || ea.w != eb.w) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  return ea;
}

std::vector<unsigned char> dilate(const std::vector<unsigned char>& m, Extent e, double tol) {
  const long r = static_cast<long>(std::floor(tol));
  std::vector<std::pair<long, long>> disk;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx)
      if (double(dx * dx + dy * dy) <= tol * tol) disk.emplace_back(dy, dx);
  std::vector<unsigned char> out(m.size(), 0);
  const long H = long(e.h), W = long(e.w);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      if (!m[std::size_t(y * W + x)]) continue;
      for (auto [dy, dx] : disk) {
        const long yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < H && xx >= 0 && xx < W) out[std::size_t(yy * W + xx)] = 1;
      }
    }
  return out;
}

}  // namespace

double jaccard(const Tensor<float>& pred, const Tensor<float>& gt) {
  check_pair(pred, gt, "jaccard");
  require_binary(pred, "jaccard");
  require_binary(gt, "jaccard");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred[i] != 0.0f, g = gt[i] != 0.0f;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double default_tolerance(std::size_t h, std::size_t w) {
  return std::ceil(0.008 * std::sqrt(double(h * h + w * w)));
}

std::vector<unsigned char> boundary_map(const Tensor<float>& mask) {
  const Extent e = extent_of(mask, "boundary_map");
  const long H = long(e.h), W = long(e.w);
  auto fg = [&](long y, long x) { return y >= 0 && y < H && x >= 0 && x < W && mask[std::size_t(y * W + x)] != 0.0f; };
  std::vector<unsigned char> b(e.h * e.w, 0);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) b[std::size_t(y * W + x)] = 1;
  return b;
}

double boundary_f(const Tensor<float>& pred, const Tensor<float>& gt, double tol) {
  const Extent e = check_pair(pred, gt, "boundary_f");
  require_binary(pred, "boundary_f");
  require_binary(gt, "boundary_f");
  if (!(tol >= 0.0)) throw ContractError("boundary_f: tolerance must be non-negative");
  const auto bp = boundary_map(pred), bg = boundary_map(gt);
  const auto np = std::count(bp.begin(), bp.end(), 1), ng = std::count(bg.begin(), bg.end(), 1);
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const auto dp = dilate(bp, e, tol), dg = dilate(bg, e, tol);
  std::size_t hit_p = 0, hit_g = 0;
  for (std::size_t i = 0; i < bp.size(); ++i) {
    hit_p += bp[i] && dg[i];
    hit_g += bg[i] && dp[i];
  }
  const double precision = double(hit_p) / double(np), recall = double(hit_g) / double(ng);
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

Summary summarize(const std::vector<double>& scores) {
  if (scores.empty()) throw ContractError("summarize: no frames");
  Summary s;
  const std::size_t n = scores.size();
  for (double v : scores) {
    s.mean += v;
    s.recall += v > 0.5 ? 1.0 : 0.0;
  }
  s.mean /= double(n);
  s.recall /= double(n);
  if (n < 4) {
    s.decay = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  // First part has ceil-size when n % 4 != 0, the last has floor-size.
  const std::size_t first = n / 4 + (n % 4 ? 1 : 0), last = n / 4;
  double a = 0, b = 0;
  for (std::size_t i = 0; i < first; ++i) a += scores[i];
  for (std::size_t i = n - last; i < n; ++i) b += scores[i];
  s.decay = a / double(first) - b / double(last);
  return s;
}

namespace {

double ssim_block(const std::vector<double>& p, const std::vector<double>& g) {
  const double n = double(p.size());
  double x = 0, y = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    x += p[i];
    y += g[i];
  }
  x /= n;
  y /= n;
  double sx = 0, sy = 0, sxy = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sx += (p[i] - x) * (p[i] - x);
    sy += (g[i] - y) * (g[i] - y);
    sxy += (p[i] - x) * (g[i] - y);
  }
  sx /= n - 1 + kEps;
  sy /= n - 1 + kEps;
  sxy /= n - 1 + kEps;
  const double alpha = 4 * x * y * sxy, beta = (x * x + y * y) * (sx + sy);
  if (alpha != 0) return alpha / (beta + kEps);
  return beta == 0 ? 1.0 : 0.0;
}

double object_score(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = 0;
  for (double x : v) m += x;
  m /= double(v.size());
  double var = 0;
  for (double x : v) var += (x - m) * (x - m);
  const double sd = v.size() > 1 ? std::sqrt(var / double(v.size() - 1)) : 0.0;
  return 2.0 * m / (m * m + 1.0 + sd + kEps);
}

}  // namespace

double s_measure(const Tensor<float>& prob, const Tensor<float>& gt, double alpha) {
  const Extent e = check_pair(prob, gt, "s_measure");
  const std::size_t n = e.h * e.w;
  double y = 0, mp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    y += gt[i];
    mp += prob[i];
  }
  y /= double(n);
  mp /= double(n);
  if (y == 0) return 1.0 - mp;
  if (y == 1) return mp;

  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < n; ++i) {
    if (gt[i] != 0.0f) fg.push_back(prob[i]);
    else bg.push_back(1.0 - prob[i]);
  }
  const double s_object = y * object_score(fg) + (1 - y) * object_score(bg);

  // Split at the rounded centroid of the ground truth (1-based coordinates).
  double sx = 0, sy = 0;
  for (std::size_t r = 0; r < e.h; ++r)
    for (std::size_t c = 0; c < e.w; ++c)
      if (gt[r * e.w + c] != 0.0f) {
        sx += double(c + 1);
        sy += double(r + 1);
      }
  const double total = y * double(n);
  const auto X = static_cast<std::size_t>(std::round(sx / total));
  const auto Y = static_cast<std::size_t>(std::round(sy / total));
  double s_region = 0;
  const std::size_t rows[2][2] = {{0, Y}, {Y, e.h}}, cols[2][2] = {{0, X}, {X, e.w}};
  for (int bi = 0; bi < 2; ++bi)
    for (int bj = 0; bj < 2; ++bj) {
      const std::size_t r0 = rows[bi][0], r1 = rows[bi][1], c0 = cols[bj][0], c1 = cols[bj][1];
      if (r1 <= r0 || c1 <= c0) continue;
      std::vector<double> p, g;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) {
          p.push_back(prob[r * e.w + c]);
          g.push_back(gt[r * e.w + c]);
        }
      s_region += double(p.size()) / double(n) * ssim_block(p, g);
    }
  return std::max(0.0, alpha * s_object + (1 - alpha) * s_region);
}

double e_measure(const std::vector<unsigned char>& fm, const std::vector<unsigned char>& gt) {
  const std::size_t n = gt.size();
  double mg = 0, mf = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mg += gt[i];
    mf += fm[i];
  }
  mg /= double(n);
  mf /= double(n);
  double sum = 0;
  if (mg == 0) {
    sum = double(n) * (1.0 - mf);
  } else if (mg == 1) {
    sum = double(n) * mf;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double af = fm[i] - mf, ag = gt[i] - mg;
      const double align = 2 * ag * af / (ag * ag + af * af + kEps);
      sum += (align + 1) * (align + 1) / 4;
    }
  }
  return sum / double(n);
}

VsodFrame vsod_frame(const Tensor<float>& prob, const Tensor<float>& gt) {
  const Extent e = check_pair(prob, gt, "vsod");
  require_binary(gt, "vsod");
  for (float v : prob.storage())
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("vsod: probabilities must lie in [0, 1]");
  const std::size_t n = e.h * e.w;
  VsodFrame f;
  for (std::size_t i = 0; i < n; ++i) f.mae += std::abs(double(prob[i]) - gt[i]);
  f.mae /= double(n);
  f.s = s_measure(prob, gt);
  std::vector<unsigned char> g(n), fm(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = gt[i] != 0.0f;
  f.f_curve.resize(kThresholds);
  f.e_curve.resize(kThresholds);
  for (std::size_t k = 0; k < kThresholds; ++k) {
    const double th = double(k) / 255.0;
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      fm[i] = double(prob[i]) > th;
      tp += fm[i] && g[i];
      fp += fm[i] && !g[i];
      fn += !fm[i] && g[i];
    }
    if (tp + fp + fn == 0) {
      f.f_curve[k] = 1.0;
    } else {
      const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
      const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
      f.f_curve[k] = p + r == 0 ? 0.0 : (1 + kBeta2) * p * r / (kBeta2 * p + r);
    }
    f.e_curve[k] = e_measure(fm, g);
  }
  return f;
}

Vsod vsod_combine(const std::vector<VsodFrame>& frames) {
  if (frames.empty()) throw ContractError("vsod: no frames");
  Vsod v;
  std::vector<double> fc(kThresholds, 0.0), ec(kThresholds, 0.0);
  for (const VsodFrame& f : frames) {
    v.mae += f.mae;
    v.s += f.s;
    for (std::size_t k = 0; k < kThresholds; ++k) {
      fc[k] += f.f_curve[k];
      ec[k] += f.e_curve[k];
    }
  }
  const double n = double(frames.size());
  v.mae /= n;
  v.s /= n;
  v.f_max = *std::max_element(fc.begin(), fc.end()) / n;
  v.e_max = *std::max_element(ec.begin(), ec.end()) / n;
  return v;
}

Vsod vsod_metrics(const Tensor<float>& prob, const Tensor<float>& gt) { return vsod_combine({vsod_frame(prob, gt)}); }

namespace {

Tensor<float> slice(const Tensor<float>& seq, std::size_t t) {
  const std::size_t h = seq.dim(2), w = seq.dim(3);
  std::vector<float> d(seq.raw() + t * h * w, seq.raw() + (t + 1) * h * w);
  return Tensor<float>({h, w}, std::move(d));
}

}  // namespace

SequenceReport evaluate_sequence(const std::string& name, const Tensor<float>& pred, const Tensor<float>& gt,
                                 const Tensor<float>* prob, std::optional<double> tol) {
  const Shape& ps = pred.shape();
  const Shape& gs = gt.shape();
  if (ps.size() != 4 || gs.size() != 4 || ps[1] != 1 || gs[1] != 1) {
    throw DimensionError(name + ": expected T x 1 x H x W masks, got " + shape_str(ps) + " and " + shape_str(gs));
  }
  if (ps[0] != gs[0]) {
    throw DataError(name + ": " + std::to_string(ps[0]) + " predicted frames vs " + std::to_string(gs[0]) +
                    " ground-truth frames");
  }
  if (ps != gs) throw DimensionError(name + ": mask shapes " + shape_str(ps) + " vs " + shape_str(gs));
  if (prob && prob->shape() != ps) throw DimensionError(name + ": probability shape " + shape_str(prob->shape()));
  const double radius = tol.value_or(default_tolerance(ps[2], ps[3]));
  std::vector<double> js, fs;
  std::vector<VsodFrame> vf;
  for (std::size_t t = 0; t < ps[0]; ++t) {
    const Tensor<float> p = slice(pred, t), g = slice(gt, t);
    js.push_back(jaccard(p, g));
    fs.push_back(boundary_f(p, g, radius));
    if (prob) vf.push_back(vsod_frame(slice(*prob, t), g));
  }
  SequenceReport r;
  r.name = name;
  r.j = summarize(js);
  r.f = summarize(fs);
  r.jf_mean = (r.j.mean + r.f.mean) / 2;
  if (prob) r.vsod = vsod_combine(vf);
  return r;
}

EvalReport aggregate(std::vector<SequenceReport> sequences) {
  if (sequences.empty()) throw ContractError("aggregate: no sequences");
  EvalReport r;
  r.sequences = std::move(sequences);
  SequenceReport& g = r.global;
  g.name = "global";
  const double n = double(r.sequences.size());
  bool all_vsod = true;
  for (const SequenceReport& s : r.sequences) all_vsod = all_vsod && s.vsod.has_value();
  if (all_vsod) g.vsod = Vsod{};
  for (const SequenceReport& s : r.sequences) {
    for (auto [dst, src] : {std::pair{&g.j, &s.j}, std::pair{&g.f, &s.f}}) {
      dst->mean += src->mean / n;
      dst->recall += src->recall / n;
      dst->decay += src->decay / n;
    }
    if (all_vsod) {
      g.vsod->s += s.vsod->s / n;
      g.vsod->e_max += s.vsod->e_max / n;
      g.vsod->f_max += s.vsod->f_max / n;
      g.vsod->mae += s.vsod->mae / n;
    }
  }
  g.jf_mean = (g.j.mean + g.f.mean) / 2;
  return r;
}

namespace {

template <typename Fn>
void for_each_metric(const SequenceReport& s, Fn&& fn) {
  fn("JF_mean", s.jf_mean);
  fn("J_mean", s.j.mean);
  fn("J_recall", s.j.recall);
  fn("J_decay", s.j.decay);
  fn("F_mean", s.f.mean);
  fn("F_recall", s.f.recall);
  fn("F_decay", s.f.decay);
  if (s.vsod) {
    fn("S", s.vsod->s);
    fn("E_max", s.vsod->e_max);
    fn("F_max", s.vsod->f_max);
    fn("MAE", s.vsod->mae);
  }
}

}  // namespace

void write_table(std::ostream& os, const EvalReport& r) {
  os << "# Recall and Decay are computed per sequence, then averaged over sequences.\n";
  std::vector<std::string> names;
  for_each_metric(r.global, [&](const char* n, double) { names.emplace_back(n); });
  os << std::left << std::setw(16) << "sequence";
  for (const auto& n : names) os << std::right << std::setw(10) << n;
  os << "\n";
  auto row = [&](const SequenceReport& s) {
    os << std::left << std::setw(16) << s.name << std::fixed << std::setprecision(4);
    for_each_metric(s, [&](const char*, double v) { os << std::right << std::setw(10) << v; });
    os << "\n";
  };
  for (const auto& s : r.sequences) row(s);
  row(r.global);
  os.unsetf(std::ios::fixed);
}

void write_key_values(std::ostream& os, const EvalReport& r) {
  os << std::setprecision(17);
  auto emit = [&](const SequenceReport& s) {
    for_each_metric(s, [&](const char* n, double v) { os << n << "." << s.name << "=" << v << "\n"; });
  };
  for (const auto& s : r.sequences) emit(s);
  emit(r.global);
}

}  // namespace hfan::eval
