#include <admkit/autodiff.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "reference_clifford.hpp"

using namespace admkit;

namespace {

const PositFormat p16{16, 2, 6};
const Signature line{1, 0, 0};
const Signature e3{3, 0, 0};

// Loss (1/2)|theta|^2 for theta = a + b e1: two samples, (x=1, y=0) and
// (x=0, y=0), averaged.
template <class T>
struct HalfNorm {
  LossGraph<T> graph;
  Dataset<T> data;
  Params<T> theta;

  explicit HalfNorm(typename scalar_traits<T>::context ctx, long double a = 3, long double b = 4)
      : graph(line, ctx, {0}) {
    graph.add_product("w", {0, 1}, {});
    data.push_back({Multivector<T>::scalar(1, line, ctx), Multivector<T>::scalar(0, line, ctx)});
    data.push_back({Multivector<T>::scalar(0, line, ctx), Multivector<T>::scalar(0, line, ctx)});
    theta = graph.zero_params();
    theta[0].set_real(0, a);
    theta[0].set_real(1, b);
  }

  Params<T> direction(long double a, long double b) const {
    Params<T> v = graph.zero_params();
    v[0].set_real(0, a);
    v[0].set_real(1, b);
    return v;
  }
};

template <class T>
Multivector<T> random_mv(Signature sig, GradeSet g, typename scalar_traits<T>::context ctx, std::mt19937_64& rng,
                         double scale = 1.0) {
  Multivector<T> m(sig, g, ctx);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t i = 0; i < m.size(); ++i) m.coeff(i) = scalar_traits<T>::from_real(u(rng), ctx);
  return m;
}

// Three trainable layers with a nonlinearity and a frozen rotor in between.
template <class T>
LossGraph<T> three_layer(typename scalar_traits<T>::context ctx) {
  LossGraph<T> g(e3, ctx, {0, 1});
  g.add_product("w1", {0, 2}, {});
  g.add_nonlinearity("act", Activation::tanh);
  g.add_sandwich("r1", make_rotor<T>(e3, 3, 0.3, ctx));
  g.add_product("w2", {0, 1}, {});
  g.add_product("w3", {0, 2}, {});
  g.add_project("out", {0});
  return g;
}

template <class T>
Dataset<T> make_dataset(const LossGraph<T>& g, std::size_t n, std::mt19937_64& rng) {
  Dataset<T> d;
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = random_mv<T>(e3, g.input_grades(), g.ctx(), rng);
    x.set_real(0, 1);
    d.push_back({x, Multivector<T>::scalar(u(rng), e3, g.ctx())});
  }
  return d;
}

template <class T>
Params<T> random_params(const LossGraph<T>& g, std::mt19937_64& rng, double scale = 0.8) {
  Params<T> p = g.zero_params();
  for (auto& w : p) {
    auto r = random_mv<T>(w.signature(), w.grades(), w.ctx(), rng, scale);
    r.set_dim(w.dim());
    w = r;
  }
  return p;
}

Params<double> axpy(const Params<double>& a, double h, const Params<double>& v) {
  Params<double> out = a;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) out[k].coeff(i) = a[k].coeff(i) + h * v[k].coeff(i);
  return out;
}

}  // namespace

TEST_CASE("directional derivative of the half squared norm", "[autodiff]") {
  HalfNorm<Posit> f(p16);
  const auto [l, d] = directional_derivative(f.graph, f.theta, f.direction(0, 1), f.data);
  CHECK(decode(l) == 12.5L);
  CHECK(decode(d) == 4.0L);
  const auto [l0, d0] = directional_derivative(f.graph, f.theta, f.direction(0, 0), f.data);
  CHECK(decode(d0) == 0.0L);
  HalfNorm<double> g({});
  CHECK(directional_derivative(g.graph, g.theta, g.direction(1, 0), g.data).second == 3.0);
}

TEST_CASE("forward gradient examples", "[autodiff]") {
  HalfNorm<Posit> f(p16);
  const auto est = forward_gradient(f.graph, f.theta, f.data, std::vector<Params<Posit>>{f.direction(1, 0)});
  CHECK(est[0].real(0) == 3.0L);
  CHECK(est[0].real(1) == 0.0L);
  CHECK(est[0].grades() == f.theta[0].grades());

  HalfNorm<Posit> zero(p16, 0, 0);
  DirectionSampler sampler(5);
  const auto z = forward_gradient(zero.graph, zero.theta, zero.data, sampler, 20);
  CHECK(z[0].real(0) == 0.0L);
  CHECK(z[0].real(1) == 0.0L);
}

TEST_CASE("Rademacher forward gradient is unbiased on the quadratic", "[autodiff]") {
  HalfNorm<double> f({});
  const double truth[2] = {3, 4};
  DirectionSampler sampler(77);
  const std::size_t n = 10000;
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  std::vector<Params<double>> dirs;
  for (std::size_t s = 0; s < n; ++s) {
    dirs.push_back(sampler.draw(f.theta));
    const double d = directional_derivative(f.graph, f.theta, dirs.back(), f.data).second;
    for (int c = 0; c < 2; ++c) {
      const double g = d * dirs.back()[0].coeff(c);
      sum[c] += g;
      sq[c] += g * g;
    }
  }
  const auto est = forward_gradient(f.graph, f.theta, f.data, dirs);
  for (int c = 0; c < 2; ++c) {
    const double mean = sum[c] / n;
    const double sd = std::sqrt(sq[c] / n - mean * mean);
    CHECK(est[0].coeff(c) == Catch::Approx(mean).epsilon(1e-12));
    CHECK(std::fabs(mean - truth[c]) <= 3 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("sampler stream matches the explicit-direction overload", "[autodiff]") {
  HalfNorm<Posit> f(p16);
  DirectionSampler a(9), b(9);
  std::vector<Params<Posit>> dirs;
  for (int i = 0; i < 50; ++i) dirs.push_back(b.draw(f.theta));
  const auto x = forward_gradient(f.graph, f.theta, f.data, a, 50);
  const auto y = forward_gradient(f.graph, f.theta, f.data, dirs);
  CHECK(identical(x[0], y[0]));
}

TEST_CASE("directional derivative agrees with central differences", "[autodiff]") {
  std::mt19937_64 rng(31);
  const auto g = three_layer<double>({});
  for (int trial = 0; trial < 20; ++trial) {
    const auto data = make_dataset(g, 6, rng);
    const auto theta = random_params(g, rng);
    DirectionSampler sampler(trial);
    const auto v = sampler.draw(theta);
    const double d = directional_derivative(g, theta, v, data).second;
    const double h = 1e-4;
    const double fd = (loss(g, axpy(theta, h, v), data) - loss(g, axpy(theta, -h, v), data)) / (2 * h);
    INFO("trial " << trial << " d=" << d << " fd=" << fd);
    REQUIRE(std::fabs(d - fd) <= 1e-6 * std::max(1.0, std::fabs(d)));
  }
}

TEST_CASE("dual product follows the product rule", "[autodiff]") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> small(-3, 3);
  auto ints = [&](Signature sig, GradeSet gs) {
    Multivector<double> m(sig, gs, {});
    for (std::size_t i = 0; i < m.size(); ++i) m.coeff(i) = small(rng);
    return m;
  };
  for (Signature sig : {Signature{3, 0, 0}, Signature{3, 0, 1}, Signature{1, 2, 0}}) {
    for (int trial = 0; trial < 200; ++trial) {
      const GradeSet ga(static_cast<uint32_t>(rng()) & GradeSet::all(sig.dims()).bits());
      const GradeSet gb(static_cast<uint32_t>(rng()) & GradeSet::all(sig.dims()).bits());
      const DualMultivector<double> a(ints(sig, ga), ints(sig, ga));
      const DualMultivector<double> b(ints(sig, gb), ints(sig, gb));
      const auto ab = dual_product(a, b);
      const auto expect = geometric_product(a.tangent, b.primal) + geometric_product(a.primal, b.tangent);
      for (Blade k = 0; k < static_cast<Blade>(sig.blade_count()); ++k) {
        REQUIRE(ab.tangent.get(k) == expect.get(k));
        REQUIRE(ab.primal.get(k) == geometric_product(a.primal, b.primal).get(k));
      }
      REQUIRE(ab.tangent.grades() == ab.primal.grades());
    }
  }
  Multivector<double> p(e3, {2}, {});
  Multivector<double> t(e3, {1}, {});
  CHECK_THROWS_AS((DualMultivector<double>(p, t)), GradeError);
}

TEST_CASE("grade restricted step", "[autodiff]") {
  std::mt19937_64 rng(12);
  auto w = random_mv<Posit>(e3, {2}, p16, rng);
  auto g = random_mv<Posit>(e3, {2}, p16, rng);
  const auto same = grade_restricted_step(w, g, encode(0.0L, p16), {});
  CHECK(identical(same, w));
  for (long double eta : {0.5L, 1e-3L, 100.0L}) {
    const auto next = grade_restricted_step(w, g, encode(eta, p16), {});
    CHECK(next.grades() == GradeSet({2}));
    CHECK(next.size() == 3);
    for (std::size_t i = 0; i < next.size(); ++i) {
      // One rounding of w - eta*g.
      Quire q(p16);
      q.add(w.coeff(i));
      q.fms(encode(eta, p16), g.coeff(i));
      CHECK(next.coeff(i) == q.round());
    }
  }
  const auto wrong = random_mv<Posit>(e3, {1}, p16, rng);
  CHECK_THROWS_AS(grade_restricted_step(w, wrong, encode(0.1L, p16), {}), GradeError);
  w.set_dim(DimVec::parse("m"));
  g.set_dim(DimVec::parse("m^-1"));
  CHECK_THROWS_AS(grade_restricted_step(w, g, encode(0.1L, p16), {}), DimensionError);
  CHECK_NOTHROW(grade_restricted_step(w, g, encode(0.1L, p16), DimVec::parse("m^2")));
}

TEST_CASE("training keeps every weight's blade set and Cayley entries", "[autodiff]") {
  std::mt19937_64 rng(44);
  const auto g = three_layer<Posit>(p16);
  const auto data = make_dataset(g, 4, rng);
  auto theta = random_params(g, rng, 0.5);
  auto fingerprint = [&](const Params<Posit>& p) {
    std::vector<std::vector<EntryTriple>> f;
    GradeSet h = g.input_grades();
    std::size_t k = 0;
    for (const auto& l : g.layers()) {
      if (l.kind == LayerKind::product) {
        f.push_back(instantiated_entries(e3, p[k].grades(), h));
        h = grade_infer(p[k].grades(), h, e3);
        ++k;
      }
    }
    return f;
  };
  auto blade_sets = [](const Params<Posit>& p) {
    std::vector<std::vector<Blade>> v;
    for (const auto& w : p) v.emplace_back(w.blades().begin(), w.blades().end());
    return v;
  };
  const auto fp0 = fingerprint(theta);
  const auto bs0 = blade_sets(theta);
  DirectionSampler sampler(1);
  Posit first_loss;
  for (int step = 0; step < 300; ++step) {
    Posit l;
    const auto grad = forward_gradient(g, theta, data, sampler, 1, &l);
    if (step == 0) first_loss = l;
    for (std::size_t k = 0; k < theta.size(); ++k)
      theta[k] = grade_restricted_step(theta[k], grad[k], encode(0.01L, p16), step_dim(theta[k], grad[k]));
    REQUIRE(blade_sets(theta) == bs0);
  }
  CHECK(fingerprint(theta) == fp0);
  CHECK(decode(loss(g, theta, data)) < decode(first_loss));
}

TEST_CASE("graph dimension checks", "[autodiff]") {
  LossGraph<double> g(e3, {}, {1}, DimVec::parse("m s^-1"));
  g.add_product("w1", {0}, DimVec::parse("Pa s m^-2"));
  CHECK(g.output_dim() == DimVec::parse("Pa m^-1"));
  CHECK_THROWS_AS(g.add_nonlinearity("act", Activation::tanh), DimensionError);
  CHECK_THROWS_AS(g.add_product("w2", {0}, DimVec::parse("m"), LayerDims{DimVec::parse("Pa"), DimVec::parse("Pa")}),
                  DimensionError);
  // A declared input that disagrees with the previous output fails the chain check.
  g.add_product("w2", {0}, DimVec::parse("m"), LayerDims{DimVec::parse("Pa"), DimVec::parse("Pa m")});
  const ChainReport r = g.check_dims();
  CHECK_FALSE(r.ok);
  CHECK(r.boundary == 1);
  CHECK_THROWS_AS(g.validate(), DimensionError);

  LossGraph<double> ok(e3, {}, {1}, DimVec::parse("m s^-1"));
  ok.add_product("w1", {0}, DimVec::parse("Pa s m^-2"));
  ok.add_product("w2", {0}, DimVec::parse("m"));
  CHECK(ok.check_dims().ok);
  CHECK(ok.output_dim() == DimVec::parse("Pa"));
}

TEST_CASE("params must match declared shapes", "[autodiff]") {
  const auto g = three_layer<Posit>(p16);
  auto theta = g.zero_params();
  CHECK_NOTHROW(g.check_params(theta));
  theta[1] = Multivector<Posit>(e3, {1}, p16);
  CHECK_THROWS_AS(g.check_params(theta), GradeError);
}

TEST_CASE("memory parity across depth", "[autodiff]") {
  std::mt19937_64 rng(5);
  std::vector<MemoryReport> reports;
  for (int depth : {2, 8, 32, 64}) {
    LossGraph<Posit> g(e3, p16, {0, 1});
    for (int l = 0; l < depth; ++l) g.add_product("w" + std::to_string(l), {0, 2}, {});
    g.add_project("out", {0});
    const auto theta = random_params(g, rng, 0.5);
    auto x = random_mv<Posit>(e3, {0, 1}, p16, rng);
    const Sample<Posit> s{x, Multivector<Posit>::scalar(0.5, e3, p16)};
    const MemoryReport r = memory_profile(g, theta, s);
    INFO("depth " << depth << " inference " << r.inference_peak << " training " << r.training_peak << " aux "
                  << r.auxiliary);
    CHECK(r.parameter_tangents == 4 * depth);
    CHECK(r.training_peak <= 2 * r.inference_peak + r.auxiliary);
    reports.push_back(r);
  }
  for (const auto& r : reports) CHECK(r.auxiliary == reports.front().auxiliary);
  CHECK(reports.back().tape_estimate > reports.front().tape_estimate);
}
