#include <admkit/autodiff.hpp>
#include <admkit/snn.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

using namespace admkit;

namespace {

const PositFormat p32{32, 2, 6};
const Float64Context f64{};

double rel(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

// Every subset of exactly k spikes with distinct sources, checked directly.
bool subset_oracle(const std::vector<Spike>& s, std::size_t k, double tau) {
  const std::size_t n = s.size();
  for (uint32_t m = 0; m < (1u << n); ++m) {
    if (static_cast<std::size_t>(std::popcount(m)) != k) continue;
    double lo = 1e300, hi = -1e300;
    std::vector<std::size_t> src;
    for (std::size_t i = 0; i < n; ++i)
      if (m & (1u << i)) {
        lo = std::min(lo, s[i].t);
        hi = std::max(hi, s[i].t);
        src.push_back(s[i].neuron);
      }
    std::sort(src.begin(), src.end());
    if (std::adjacent_find(src.begin(), src.end()) != src.end()) continue;
    if (hi - lo <= tau) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("LIF decay and firing", "[snn]") {
  LIFParams p{20, 10, 0, 1};
  NeuronState<double> s{10.0, {}};
  for (int i = 1; i <= 20; ++i) s = lif_step(s, p, 0.0, i, f64).state;
  CHECK(s.v == Catch::Approx(10 / std::exp(1.0)).epsilon(1e-12));
  CHECK(s.v == Catch::Approx(3.6788).margin(1e-4));

  const auto hit = lif_step(NeuronState<double>{0.0, {}}, p, 15.0, 1.0, f64);
  CHECK(hit.fired);
  CHECK(hit.state.v == p.v_reset);
  CHECK(hit.state.t_last_spike == 1.0);

  const auto hp = lif_step(NeuronState<Posit>{encode(0.0L, p32), {}}, p, encode(15.0L, p32), 1.0, p32);
  CHECK(hp.fired);
  CHECK(decode(hp.state.v) == 0.0L);
}

TEST_CASE("zero-input trajectory is exact for any dt", "[snn]") {
  for (double dt : {0.01, 0.1, 0.5, 1.0, 3.7}) {
    LIFParams p{15, 1e9, -1e9, dt};
    NeuronState<double> s{-65.0, {}};
    double worst = 0;
    for (int n = 1; n <= 1000; ++n) {
      s = lif_step(s, p, 0.0, n * dt, f64).state;
      worst = std::max(worst, rel(s.v, -65.0 * std::exp(-n * dt / 15)));
    }
    INFO("dt " << dt);
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("constant sub-threshold drive settles at the fixed point", "[snn]") {
  for (Integrator integ : {Integrator::exact, Integrator::euler}) {
    LIFParams p{20, 10, 0, 1, integ};
    const double drive = 0.4;
    const double fixed = drive / (1 - p.decay());
    REQUIRE(fixed < p.v_theta);
    NeuronState<double> s{0.0, {}};
    bool fired = false;
    for (int n = 1; n <= 10000; ++n) {
      auto r = lif_step(s, p, drive, n, f64);
      fired = fired || r.fired;
      s = r.state;
    }
    CHECK_FALSE(fired);
    CHECK(s.v == Catch::Approx(fixed).epsilon(1e-12));
  }
  // Euler drifts from the exact decay at coarse dt.
  LIFParams e{20, 1e9, -1e9, 5, Integrator::euler};
  CHECK(e.decay() != Catch::Approx(std::exp(-0.25)).epsilon(1e-3));
}

TEST_CASE("LIF parameter validation", "[snn]") {
  CHECK_THROWS_AS((LIFParams{0, 10, 0, 1}.validate()), Error);
  CHECK_THROWS_AS((LIFParams{20, 10, 0, 0}.validate()), Error);
  CHECK_THROWS_AS((LIFParams{20, 0, 0, 1}.validate()), Error);
}

TEST_CASE("STDP closed form examples", "[snn]") {
  StdpParams p{0.02, 0.03, 17, 23};
  CHECK(stdp_closed_form(17, p) == Catch::Approx(0.02 / std::exp(1.0)).epsilon(1e-15));
  CHECK(stdp_closed_form(0, p) == 0.02);
  CHECK(stdp_closed_form(1e-300, p) == Catch::Approx(0.02));
  CHECK(stdp_closed_form(-23, p) == Catch::Approx(-0.03 / std::exp(1.0)).epsilon(1e-15));
}

TEST_CASE("trace STDP equals the pairwise rule on isolated pairs", "[snn]") {
  const StdpParams p{0.01, 0.012, 20, 30};
  for (double dt : {0.1, -0.1, 1.0, -1.0, 10.0, -10.0, 100.0, -100.0}) {
    const double t0 = 50;
    auto s = make_synapse<double>(0.5, p, f64);
    if (dt > 0) {
      s = stdp_update(s, SpikeEvent::pre, t0, f64);
      s = stdp_update(s, SpikeEvent::post, t0 + dt, f64);
    } else {
      s = stdp_update(s, SpikeEvent::post, t0, f64);
      s = stdp_update(s, SpikeEvent::pre, t0 - dt, f64);
    }
    INFO("dt " << dt);
    CHECK(rel(s.w - 0.5, stdp_closed_form(dt, p)) <= 1e-12);
  }
  // Simultaneous pre and post takes the potentiation limit.
  auto s = make_synapse<double>(0, p, f64);
  s = stdp_update(s, SpikeEvent::pre, 1, f64);
  s = stdp_update(s, SpikeEvent::post, 1, f64);
  CHECK(s.w == p.a_plus);
}

TEST_CASE("traces decay without spikes and reject time travel", "[snn]") {
  const StdpParams p{};
  auto s = make_synapse<double>(0.25, p, f64);
  s = stdp_update(s, SpikeEvent::pre, 0, f64);
  s = stdp_update(s, SpikeEvent::post, 0, f64);
  const double w = s.w;
  double x = s.x_pre, y = s.y_post;
  for (double t = 10; t <= 2000; t += 10) {
    s = stdp_decay(s, t, f64);
    CHECK(s.x_pre <= x);
    CHECK(s.y_post <= y);
    CHECK(s.x_pre >= 0);
    x = s.x_pre;
    y = s.y_post;
  }
  CHECK(s.w == w);
  CHECK(s.x_pre < 1e-40);
  CHECK_THROWS_AS(stdp_update(s, SpikeEvent::pre, 5, f64), OrderingError);

  auto q = make_synapse<double>(0.25, p, f64);
  q = stdp_decay(q, 1000, f64);
  CHECK(q.w == 0.25);
  CHECK(q.x_pre == 0);
}

TEST_CASE("posit STDP tracks the float64 rule", "[snn]") {
  const StdpParams p{0.01, 0.012, 20, 20};
  auto s = make_synapse<Posit>(0.5, p, p32);
  s = stdp_update(s, SpikeEvent::pre, 0, p32);
  s = stdp_update(s, SpikeEvent::post, 5, p32);
  CHECK(static_cast<double>(decode(s.w)) - 0.5 == Catch::Approx(stdp_closed_form(5, p)).epsilon(1e-6));
}

TEST_CASE("coincidence examples", "[snn]") {
  CHECK(coincidence_fire({1, 2, 3}, 3, 2));
  CHECK_FALSE(coincidence_fire({1, 2, 4}, 3, 2));
  CHECK(coincidence_fire(std::vector<double>{7.5}, 1, 0));
  CHECK_FALSE(coincidence_fire(std::vector<double>{}, 1, 5));
  CHECK_THROWS_AS(coincidence_fire(std::vector<double>{1.0}, 0, 1), Error);
  // A source repeating inside the window is one source.
  CHECK_FALSE(coincidence_fire(std::vector<Spike>{{0, 1}, {0, 1.5}, {1, 2}}, 3, 2));
  CHECK(coincidence_fire(std::vector<Spike>{{0, 1}, {2, 1.5}, {1, 2}}, 3, 2));
}

TEST_CASE("coincidence matches the all-subsets oracle", "[snn]") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> count(0, 12), src(0, 5), k_of(1, 5);
  std::uniform_real_distribution<double> when(0, 30), width(0, 6);
  int fired = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Spike> s(static_cast<std::size_t>(count(rng)));
    for (auto& x : s) x = {static_cast<std::size_t>(src(rng)), std::round(when(rng) * 4) / 4};
    const auto k = static_cast<std::size_t>(k_of(rng));
    const double tau = std::round(width(rng) * 4) / 4;
    const bool want = subset_oracle(s, k, tau);
    fired += want;
    REQUIRE(coincidence_fire(s, k, tau) == want);
    // Every spike from its own source reduces to the plain time form.
    std::vector<double> times;
    std::vector<Spike> distinct;
    for (std::size_t i = 0; i < s.size(); ++i) {
      times.push_back(s[i].t);
      distinct.push_back({i, s[i].t});
    }
    REQUIRE(coincidence_fire(times, k, tau) == subset_oracle(distinct, k, tau));
  }
  CHECK(fired > 200);
  CHECK(fired < 1800);
}

TEST_CASE("rate encoding", "[snn]") {
  const DimVec pa = DimVec::parse("Pa");
  const DimVec per_pa = DimVec::parse("Pa^-1");
  CHECK(rate_encode(0, pa, 1, per_pa, 10, 1).times.empty());
  const auto full = rate_encode(1, pa, 1, per_pa, 10, 1);
  CHECK(full.times.size() == 10);
  for (std::size_t i = 0; i < full.times.size(); ++i) CHECK(full.times[i] == Catch::Approx(i));
  const auto half = rate_encode(500, pa, 1e-3, per_pa, 10, 1);
  REQUIRE(half.times.size() == 5);
  for (std::size_t i = 1; i < 5; ++i) CHECK(half.times[i] - half.times[i - 1] == Catch::Approx(2.0));
  CHECK(half.rate_dim == DimVec::parse("s^-1"));
  CHECK_THROWS_AS(rate_encode(0.5, pa, 1, DimVec::parse("m^-1"), 10, 1), DimensionError);
  CHECK_THROWS_AS(rate_encode(2, pa, 1, per_pa, 10, 1), Error);
}

TEST_CASE("spike csv round trip", "[snn]") {
  std::vector<Spike> s{{0, 0.1}, {3, 2.0}, {12, 1e-7}, {1, 123456.789}};
  std::stringstream ss;
  write_spikes_csv(ss, s);
  CHECK(ss.str().rfind("neuron_id,t_ms\n", 0) == 0);
  CHECK(read_spikes_csv(ss) == s);
  std::stringstream bad("neuron_id,t_ms\n1;2\n");
  CHECK_THROWS_AS(read_spikes_csv(bad), ParseError);
  std::stringstream bad2("neuron_id,t_ms\n1,2x\n");
  CHECK_THROWS_AS(read_spikes_csv(bad2), ParseError);
}

TEST_CASE("network dimension check at build", "[snn]") {
  LIFParams p{};
  auto syn = SpikingNetwork<double>::feedforward({2, 1}, 1.0);
  CHECK_NOTHROW(SpikingNetwork<double>(3, syn, p, {}, f64));
  syn[1].w_dim = DimVec::parse("mV");
  CHECK_THROWS_AS(SpikingNetwork<double>(3, syn, p, {}, f64), DimensionError);
  syn[1].w_dim = DimVec::parse("mV ms^-1");
  syn[1].post = 7;
  CHECK_THROWS_AS(SpikingNetwork<double>(3, syn, p, {}, f64), Error);
}

TEST_CASE("network propagates spikes and learns", "[snn]") {
  LIFParams p{10, 1, 0, 1};
  // 6 mV/ms * 1 ms from each of two inputs; one alone stays below threshold
  // only when the weight is under 1.
  SpikingNetwork<Posit> net(3, SpikingNetwork<Posit>::feedforward({2, 1}, 0.6), p, {0.01, 0.012, 20, 20}, p32);
  auto out = net.step({0, 1});
  CHECK(out == std::vector<std::size_t>{0, 1});
  out = net.step();
  CHECK(out == std::vector<std::size_t>{2});
  // Pre one step before post potentiates.
  CHECK(decode(net.weight(0)) > 0.6L);
  CHECK(net.spikes().size() == 3);

  SpikingNetwork<Posit> quiet(3, SpikingNetwork<Posit>::feedforward({2, 1}, 0.6), p, {}, p32);
  quiet.step({0});
  CHECK(quiet.step().empty());
}

TEST_CASE("local learning state is two traces per synapse and one tangent per weight", "[snn]") {
  for (std::size_t depth : {2u, 4u, 8u}) {
    std::vector<std::size_t> widths(depth, 3);
    const auto syn = SpikingNetwork<double>::feedforward(widths, 0.5);
    const int64_t before = memory::live();
    SpikingNetwork<double> net(3 * depth, syn, LIFParams{}, {}, f64);
    const int64_t total = memory::live() - before;
    const auto n = static_cast<int64_t>(net.neurons());
    const auto s = static_cast<int64_t>(net.synapses());
    CHECK(total - n - s == 2 * s);
    CHECK(static_cast<int64_t>(net.auxiliary_values()) == 2 * s);
    CHECK(SynapseState<double>::auxiliary_state == 2);
  }
  // Forward-mode counterpart: tangents equal parameter count at every depth.
  for (int depth : {2, 8, 32}) {
    const Signature sig{3, 0, 0};
    LossGraph<double> g(sig, f64, {0});
    for (int l = 0; l < depth; ++l) g.add_product("w", {0, 2}, {});
    const auto theta = g.zero_params();
    const MemoryReport r = memory_profile(g, theta, {Multivector<double>::scalar(1, sig, f64),
                                                     Multivector<double>::scalar(0, sig, f64)});
    CHECK(r.parameter_tangents == 4 * depth);
  }
}
