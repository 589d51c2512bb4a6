#include "hfan/gradsuite.hpp"

#include <functional>

#include "hfan/model.hpp"
#include "hfan/rng.hpp"

namespace hfan {

namespace {

using P = Parameter<double>;
using Builder = std::function<Var<double>(Tape<double>&, P&, P&)>;

Tensor<double> rand_t(std::uint64_t seed, Shape shape, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return rng.uniform_tensor<double>(std::move(shape), lo, hi);
}

// sum(out * R) with a fixed random R so every output element matters.
Var<double> probe(const Var<double>& out, std::uint64_t seed) {
  return ops::sum(ops::mul(out, out.tape().constant(rand_t(seed ^ 0x5a5aULL, out.shape(), 0.5, 1.5))));
}

void randomize(ModuleState<double>& s, std::uint64_t seed) {
  Rng rng(seed);
  for (P* p : s.params) {
    const bool gamma = p->name.size() > 6 && p->name.compare(p->name.size() - 6, 6, ".gamma") == 0;
    p->value = gamma ? rng.uniform_tensor<double>(p->value.shape(), 0.5, 1.5)
                     : rng.uniform_tensor<double>(p->value.shape(), -0.8, 0.8);
  }
}

struct Primitive {
  const char* name;
  std::vector<std::pair<Shape, Shape>> shapes;
  Builder build;
  double lo = -1.0, hi = 1.0;
};

std::vector<Primitive> primitives() {
  std::vector<Primitive> v;
  v.push_back({"matmul", {{{2, 3}, {3, 4}}, {{1, 5}, {5, 1}}, {{4, 4}, {4, 2}}},
               [](Tape<double>& t, P& a, P& b) { return ops::matmul(t.parameter(a), t.parameter(b)); }});
  v.push_back({"bmm", {{{2, 2, 3}, {2, 3, 4}}, {{1, 5, 2}, {1, 2, 2}}, {{3, 1, 4}, {3, 4, 2}}},
               [](Tape<double>& t, P& a, P& b) { return ops::bmm(t.parameter(a), t.parameter(b)); }});
  v.push_back({"transpose+reshape", {{{2, 3, 4}, {1}}, {{1, 5, 2}, {1}}, {{3, 1, 4}, {1}}},
               [](Tape<double>& t, P& a, P&) {
                 auto y = ops::transpose_last2(t.parameter(a));
                 return ops::reshape(y, {y.value().numel()});
               }});
  v.push_back({"conv1x1", {{{1, 3, 2, 2}, {4, 3}}, {{2, 2, 3, 1}, {1, 2}}, {{1, 5, 2, 3}, {3, 5}}},
               [](Tape<double>& t, P& x, P& w) {
                 return ops::conv1x1(t.parameter(x), t.parameter(w), t.constant(rand_t(5, {w.value.dim(0)})));
               }});
  v.push_back({"conv1x1(bias)", {{{4}, {1, 3, 2, 2}}, {{1}, {2, 2, 3, 1}}, {{3}, {1, 5, 2, 3}}},
               [](Tape<double>& t, P& b, P& x) {
                 return ops::conv1x1(t.parameter(x), t.constant(rand_t(6, {b.value.dim(0), x.value.dim(1)})),
                                     t.parameter(b));
               }});
  v.push_back({"batchnorm(train)", {{{2, 3, 2, 2}, {3}}, {{1, 2, 3, 3}, {2}}, {{4, 1, 1, 2}, {1}}},
               [](Tape<double>& t, P& x, P& g) {
                 ops::BatchNormState<double> st(g.value.numel());
                 return ops::batchnorm(t.parameter(x), t.parameter(g), t.constant(rand_t(7, {g.value.numel()})), st,
                                       ops::Mode::Train);
               }});
  v.push_back({"batchnorm(beta)", {{{3}, {2, 3, 2, 2}}, {{2}, {1, 2, 3, 3}}, {{1}, {4, 1, 1, 2}}},
               [](Tape<double>& t, P& beta, P& x) {
                 ops::BatchNormState<double> st(beta.value.numel());
                 return ops::batchnorm(t.parameter(x), t.constant(rand_t(8, beta.value.shape(), 0.5, 1.5)),
                                       t.parameter(beta), st, ops::Mode::Train);
               }});
  v.push_back({"batchnorm(eval)", {{{2, 3, 2, 2}, {3}}, {{1, 2, 3, 3}, {2}}, {{4, 1, 1, 2}, {1}}},
               [](Tape<double>& t, P& x, P& g) {
                 ops::BatchNormState<double> st(g.value.numel());
                 st.running_mean = rand_t(9, g.value.shape());
                 st.running_var = rand_t(10, g.value.shape(), 0.5, 2.0);
                 st.batches = 1;
                 return ops::batchnorm(t.parameter(x), t.parameter(g),
                                       t.constant(Tensor<double>::zeros(g.value.shape())), st, ops::Mode::Eval);
               }});
  v.push_back({"add/sub/mul", {{{1, 3, 2, 2}, {1, 3, 1, 1}}, {{2, 2, 3, 1}, {2, 2, 3, 1}}, {{2, 1, 2, 2}, {1, 1, 2, 1}}},
               [](Tape<double>& t, P& a, P& b) {
                 auto pa = t.parameter(a), pb = t.parameter(b);
                 return ops::mul(ops::sub(ops::add(pa, pb), pb), ops::add(pa, pb));
               }});
  v.push_back({"scale/add_scalar", {{{3, 2}, {1}}, {{1, 5}, {1}}, {{2, 2, 2}, {1}}},
               [](Tape<double>& t, P& a, P&) { return ops::add_scalar(ops::scale(t.parameter(a), -0.7), 1.0); }});
  v.push_back({"softmax", {{{2, 3}, {1}}, {{1, 4, 2}, {1}}, {{3, 1, 5}, {1}}},
               [](Tape<double>& t, P& a, P&) { return ops::softmax(t.parameter(a), a.value.rank() - 1); }, -3.0, 3.0});
  v.push_back({"softmax(axis 1)", {{{2, 3, 2}, {1}}, {{1, 4, 2}, {1}}, {{3, 2, 5}, {1}}},
               [](Tape<double>& t, P& a, P&) { return ops::softmax(t.parameter(a), 1); }, -3.0, 3.0});
  v.push_back({"relu", {{{2, 3}, {1}}, {{1, 4, 2}, {1}}, {{3, 1, 5}, {1}}},
               [](Tape<double>& t, P& a, P&) {
                 // Inputs pushed at least 0.05 away from the kink.
                 Tensor<double> away = a.value;
                 for (double& x : away.storage()) x = x >= 0 ? 0.05 : -0.05;
                 return ops::relu(ops::add(t.parameter(a), t.constant(away)));
               }});
  v.push_back({"sigmoid", {{{2, 3}, {1}}, {{1, 4, 2}, {1}}, {{3, 1, 5}, {1}}},
               [](Tape<double>& t, P& a, P&) { return ops::sigmoid(t.parameter(a)); }, -6.0, 6.0});
  v.push_back({"global_avg_pool", {{{1, 3, 2, 2}, {1}}, {{2, 2, 3, 1}, {1}}, {{1, 1, 4, 5}, {1}}},
               [](Tape<double>& t, P& a, P&) { return ops::global_avg_pool(t.parameter(a)); }});
  v.push_back({"avg_pool2", {{{1, 3, 2, 2}, {1}}, {{2, 2, 4, 2}, {1}}, {{1, 1, 4, 6}, {1}}},
               [](Tape<double>& t, P& a, P&) { return ops::avg_pool2(t.parameter(a)); }});
  v.push_back({"bilinear_resize(up)", {{{1, 2, 2, 2}, {1}}, {{1, 1, 3, 5}, {1}}, {{2, 1, 4, 4}, {1}}},
               [](Tape<double>& t, P& a, P&) {
                 const auto& s = a.value.shape();
                 return ops::bilinear_resize(t.parameter(a), s[2] * 2 + 1, s[3] + 3);
               }});
  v.push_back({"bilinear_resize(down)", {{{1, 2, 4, 4}, {1}}, {{1, 1, 6, 5}, {1}}, {{2, 1, 8, 8}, {1}}},
               [](Tape<double>& t, P& a, P&) { return ops::bilinear_resize(t.parameter(a), 3, 2); }});
  v.push_back({"concat/slice", {{{1, 2, 2, 2}, {1, 3, 2, 2}}, {{2, 1, 3, 1}, {2, 2, 3, 1}}, {{1, 1, 1, 4}, {1, 4, 1, 4}}},
               [](Tape<double>& t, P& a, P& b) {
                 auto c = ops::concat<double>({t.parameter(a), t.parameter(b)}, 1);
                 return ops::slice(c, 1, 1, c.value().dim(1));
               }});
  v.push_back({"softmax_cross_entropy", {{{1, 2, 2, 2}, {1}}, {{2, 2, 3, 1}, {1}}, {{1, 3, 2, 2}, {1}}},
               [](Tape<double>& t, P& a, P&) {
                 const auto& s = a.value.shape();
                 Tensor<double> labels({s[0], 1, s[2], s[3]});
                 for (std::size_t i = 0; i < labels.numel(); ++i) labels[i] = double(i % s[1]);
                 return ops::softmax_cross_entropy(t.parameter(a), labels);
               }, -2.0, 2.0});
  return v;
}

Var<double> corrupted_square(const Var<double>& x) {
  Tensor<double> out = x.value();
  for (double& v : out.storage()) v = v * v;
  const std::size_t ix = x.id();
  return x.tape().record("corrupted_square", std::move(out), {ix}, [ix](Tape<double>& t, const Tensor<double>& g) {
    const Tensor<double>& xv = t.value(ix);
    Tensor<double>& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += xv[i] * g[i];
  });
}

void fold(SuiteResult& r, const GradCheckReport& rep) {
  r.worst = std::max(r.worst, rep.max_rel_err);
  r.passed = r.passed && rep.passed;
  ++r.cases;
}

}  // namespace

std::vector<SuiteResult> run_gradcheck_suite(const SuiteOptions& options) {
  std::vector<SuiteResult> out;
  if (options.primitives) {
    for (const Primitive& prim : primitives()) {
      SuiteResult r{prim.name, 0.0, 0, true};
      for (const auto& [sa, sb] : prim.shapes)
        for (std::size_t s = 0; s < options.seeds; ++s) {
          const std::uint64_t seed = 1000 + 17 * s;
          P a("a", rand_t(seed, sa, prim.lo, prim.hi)), b("b", rand_t(seed + 1, sb, prim.lo, prim.hi));
          std::vector<P*> ps{&a, &b};
          fold(r, gradcheck(prim.name, ps, [&](Tape<double>& t) { return probe(prim.build(t, a, b), seed); }));
        }
      out.push_back(r);
    }
  }
  if (options.corrupt) {
    SuiteResult r{"corrupted_square", 0.0, 0, true};
    P a("a", rand_t(1, {3, 4}));
    std::vector<P*> ps{&a};
    fold(r, gradcheck("corrupted_square", ps, [&](Tape<double>& t) { return probe(corrupted_square(t.parameter(a)), 3); }));
    out.push_back(r);
  }
  if (!options.composed) return out;

  for (bool share : {true, false}) {
    SuiteResult r{share ? "fam(shared poc)" : "fam(separate poc)", 0.0, 0, true};
    FamParams<double> params("fam", 8, attention_width(8), share, 23);
    ModuleState<double> st;
    params.collect(st);
    randomize(st, 77);
    P I("I", rand_t(23, {1, 8, 6, 6})), O("O", rand_t(24, {1, 8, 6, 6}));
    std::vector<P*> ps = st.params;
    ps.push_back(&I);
    ps.push_back(&O);
    fold(r, gradcheck(r.graph, ps, [&](Tape<double>& t) {
      Context<double> ctx{t};
      auto a = fam(ctx, t.parameter(I), t.parameter(O), params);
      return ops::add(probe(a.appearance, 1), probe(a.motion, 2));
    }));
    out.push_back(r);
  }
  {
    SuiteResult r{"fam+fat stage", 0.0, 0, true};
    StageParams<double> sp("s", 8, attention_width(8), true, Fusion::Hfan, 23);
    ModuleState<double> st;
    sp.collect(st);
    randomize(st, 24);
    P I("I", rand_t(25, {1, 8, 6, 6})), O("O", rand_t(26, {1, 8, 6, 6}));
    std::vector<P*> ps = st.params;
    ps.push_back(&I);
    ps.push_back(&O);
    fold(r, gradcheck(r.graph, ps, [&](Tape<double>& t) {
      Context<double> ctx{t};
      return probe(hfan_stage(ctx, t.parameter(I), t.parameter(O), sp), 5);
    }));
    out.push_back(r);
  }
  {
    SuiteResult r{"full model 1x3x32x32", 0.0, 0, true};
    ModelConfig cfg;
    cfg.stage_channels = {4, 8, 8, 16};
    cfg.decoder_dim = 8;
    cfg.seed = 41;
    SegNet<double> m(cfg);
    ModuleState<double> st = m.state();
    // Gate expansion weights start at zero; give them values so their inputs get gradient.
    Rng rng(42);
    for (P* p : st.params)
      if (p->name.find("expand") != std::string::npos) p->value = rng.uniform_tensor<double>(p->value.shape(), -0.5, 0.5);
    const Tensor<double> frames = rand_t(43, {1, 3, 32, 32}, 0, 1), flows = rand_t(44, {1, 3, 32, 32}, 0, 1);
    Tensor<double> labels({1, 1, 32, 32});
    for (std::size_t i = 0; i < labels.numel(); ++i) labels[i] = double((i / 32) > 10 && (i % 32) < 20);
    GradCheckOptions opts;
    opts.max_elements = 6;
    fold(r, gradcheck(r.graph, st.params, [&](Tape<double>& t) {
      Context<double> ctx{t};
      return ce_loss(m.forward(ctx, t.constant(frames), t.constant(flows)), labels);
    }, opts));
    out.push_back(r);
  }
  return out;
}

}  // namespace hfan
