#include <admkit/rotation.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "model_fixture.hpp"

using namespace admkit;
using fixture::small_spec;

namespace {

struct Rig {
  ModelSpec spec = small_spec();
  std::unique_ptr<RotationEngine> engine;

  explicit Rig(EngineConfig cfg = {}) {
    cfg.public_key_hex = fixture::signer().public_key_hex();
    const WeightsFile w = initial_weights(spec, 1);
    engine = std::make_unique<RotationEngine>(make_served(spec, w, 1),
                                              fixture::record_for(spec, w, nullptr, 1, fixture::signer()), cfg);
  }

  // Candidate on top of the current chain head.
  Candidate next(uint64_t seed, const Signer& signer = fixture::signer()) const {
    const VersionRecord& head = engine->chain().back();
    const WeightsFile w = initial_weights(spec, seed);
    return {spec, w, fixture::record_for(spec, w, &head, head.version_id + 1, signer)};
  }

  std::set<uint64_t> committed() const {
    std::set<uint64_t> v;
    for (const auto& o : engine->outcomes())
      if (o.committed) v.insert(o.candidate_version);
    return v;
  }
};

// The properties every run must keep.
void check_run(const RotationEngine& e) {
  std::set<uint64_t> ids;
  uint64_t last_version = 0;
  for (const auto& r : e.responses()) {
    CHECK(ids.insert(r.request_id).second);
    REQUIRE_FALSE(r.accessed_versions.empty());
    for (uint64_t v : r.accessed_versions) CHECK(v == r.version);
    CHECK(r.version >= last_version);
    last_version = r.version;
  }
  CHECK(ids.size() == e.received());
  std::vector<Response> by_id = e.responses();
  std::sort(by_id.begin(), by_id.end(), [](auto& a, auto& b) { return a.request_id < b.request_id; });
  for (std::size_t i = 1; i < by_id.size(); ++i) CHECK(by_id[i].version >= by_id[i - 1].version);
  for (const auto& t : e.trace()) CHECK(t.active_certified);
  CHECK(verify_chain(e.chain(), fixture::signer().public_key_hex()).ok);
}

}  // namespace

TEST_CASE("requests are answered by one model each across seeded interleavings") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rig rig;
    RotationEngine& e = *rig.engine;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    bool rotation_queued = false;
    std::size_t seen_outcomes = 0;
    for (int i = 0; i < 600; ++i) {
      const double a = u(rng);
      if (a < 0.5)
        e.submit(fixture::input(rig.spec, u(rng), -u(rng)));
      else if (a < 0.96)
        e.step();
      else if (!rotation_queued) {
        e.begin_rotation(rig.next(seed * 100 + i));
        rotation_queued = true;
      }
      if (e.outcomes().size() > seen_outcomes) {
        seen_outcomes = e.outcomes().size();
        rotation_queued = false;
      }
    }
    e.drain();
    INFO("seed " << seed);
    check_run(e);
    for (const auto& o : e.outcomes()) CHECK(o.committed);
    CHECK(e.active().version == e.chain().back().version_id);
  }
}

TEST_CASE("requests in flight at rotation finish on the old model; later ones wait for the new") {
  Rig rig;
  RotationEngine& e = *rig.engine;
  const auto before = *e.submit(fixture::input(rig.spec, 0.5, 0.25));
  e.step();  // admitted on version 1
  e.begin_rotation(rig.next(2));
  const auto during = *e.submit(fixture::input(rig.spec, 0.5, 0.25));
  e.step();  // certifies; the old request is still in flight
  CHECK(e.state() == EngineState::rotating);
  e.drain();
  const auto& rs = e.responses();
  REQUIRE(rs.size() == 2);
  for (const auto& r : rs) CHECK(r.version == (r.request_id == before ? 1u : 2u));
  CHECK(rs.back().request_id == during);
  check_run(e);
}

TEST_CASE("answers match the graph evaluated directly") {
  Rig rig;
  RotationEngine& e = *rig.engine;
  const auto x = fixture::input(rig.spec, 0.3, -0.7);
  e.submit(x);
  e.drain();
  const ServedModel& m = e.active();
  const auto expect = m.graph->predict(m.params, x);
  REQUIRE(e.responses().size() == 1);
  const auto& y = e.responses()[0].y;
  REQUIRE(y.size() == expect.size());
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.coeff(i).bits() == expect.coeff(i).bits());
}

TEST_CASE("refused rotations leave the engine unchanged") {
  Rig rig;
  RotationEngine& e = *rig.engine;

  SECTION("invalid certificate") {
    Candidate c = rig.next(5);
    c.weights.find("w1")->coeffs[Blade{1}] = encode(0.5, rig.spec.format).bits();
    e.begin_rotation(c);
  }
  SECTION("unsigned under strict policy") {
    const NullSigner null_signer;
    e.begin_rotation(rig.next(5, null_signer));
  }
  SECTION("wrong key") { e.begin_rotation(rig.next(5, Ed25519Signer::from_label("intruder"))); }
  SECTION("record does not describe the weights") {
    Candidate c = rig.next(5);
    c.weights = initial_weights(rig.spec, 6);
    e.begin_rotation(c);
  }
  e.submit(fixture::input(rig.spec, 0.1, 0.2));
  e.drain();
  REQUIRE(e.outcomes().size() == 1);
  CHECK_FALSE(e.outcomes()[0].committed);
  CHECK(e.outcomes()[0].refusal.has_value());
  CHECK(e.active().version == 1);
  CHECK(e.chain().size() == 1);
  CHECK(e.responses().at(0).version == 1);
  check_run(e);
}

TEST_CASE("refusal reasons are specific") {
  Rig rig;
  RotationEngine& e = *rig.engine;
  const NullSigner null_signer;
  e.begin_rotation(rig.next(5, null_signer));
  Candidate bad = rig.next(6);
  bad.weights.find("w2")->coeffs[Blade{7}] = encode(0.5, rig.spec.format).bits();
  e.begin_rotation(bad);
  e.drain();
  REQUIRE(e.outcomes().size() == 2);
  CHECK(e.outcomes()[0].refusal == Refusal::unsigned_under_strict_policy);
  CHECK(e.outcomes()[1].refusal == Refusal::invalid_certificate);
  CHECK(e.outcomes()[1].detail.find("w2") != std::string::npos);
}

TEST_CASE("dev policy admits null-signed records") {
  EngineConfig cfg;
  cfg.policy = SigningPolicy::dev;
  Rig rig(cfg);
  const NullSigner null_signer;
  rig.engine->begin_rotation(rig.next(5, null_signer));
  rig.engine->drain();
  CHECK(rig.engine->active().version == 2);
}

TEST_CASE("ten thousand requests across ten rotations") {
  Rig rig;
  RotationEngine& e = *rig.engine;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 10000; ++k) {
    e.submit(fixture::input(rig.spec, u(rng), u(rng)));
    if (k % 1000 == 500) e.begin_rotation(rig.next(1000 + k));
    if (k % 3 == 0) e.step();
    // Rotations must be built on the head, so let each one land first.
    if (k % 1000 == 999)
      while (rig.committed().size() < static_cast<std::size_t>(k / 1000 + 1)) e.step();
  }
  e.drain();
  CHECK(e.responses().size() == 10000);
  CHECK(rig.committed().size() == 10);
  CHECK(e.active().version == 11);
  check_run(e);
}

TEST_CASE("training slots produce candidates through the same gate") {
  EngineConfig cfg;
  cfg.inference_ticks = 3;
  cfg.training_ticks = 1;
  Rig rig(cfg);
  RotationEngine& e = *rig.engine;
  int calls = 0;
  e.set_trainer([&]() -> std::optional<Candidate> {
    ++calls;
    if (calls == 5) return rig.next(50);
    return std::nullopt;
  });
  for (int i = 0; i < 40; ++i) {
    e.submit(fixture::input(rig.spec, 0.1 * i, 0.2));
    e.step();
  }
  e.clear_trainer();
  e.drain();
  CHECK(calls == 10);
  CHECK(e.active().version == 2);
  bool saw_training = false;
  for (const auto& t : e.trace()) saw_training |= t.state == EngineState::training;
  CHECK(saw_training);
  check_run(e);
}

TEST_CASE("shutdown finishes queued work and refuses the rest") {
  Rig rig;
  RotationEngine& e = *rig.engine;
  e.submit(fixture::input(rig.spec, 0.1, 0.2));
  e.shutdown();
  CHECK_FALSE(e.submit(fixture::input(rig.spec, 0.1, 0.2)).has_value());
  e.begin_rotation(rig.next(3));
  REQUIRE(e.outcomes().size() == 1);
  CHECK(e.outcomes()[0].refusal == Refusal::shut_down);
  e.drain();
  CHECK(e.state() == EngineState::shut_down);
  CHECK(e.responses().size() == 1);
}
