#include <admkit/harness.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

using namespace admkit;

namespace {

const char* kSmall = R"(
# comment line
name = small
seed = 11
steps = 3000
signature = 3,0,0
input.grades = 0,1
layer = product w1 grades=0,2 dim=1
layer = sandwich r1 grades=0,2
layer = product w2 grades=0,1 dim=1   # trailing comment
layer = project out keep=0
stream = drift
stream.drift_at = 1500
train.samples = 600
train.steps = 800
train.rate = 0.01
calibration.replicates = 200
ticks = 3:1
memory.depths = 2,8,32
)";

Scenario small(const std::string& extra = "") { return parse_scenario(std::string(kSmall) + extra, "small.scn"); }

void check_parse_error(const std::string& text, const std::string& needle) {
  try {
    parse_scenario(text, "bad.scn");
    FAIL("no error for: " << text);
  } catch (const ParseError& e) {
    INFO(e.what());
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}

}  // namespace

TEST_CASE("scenario files parse into the declared model") {
  const Scenario s = small();
  CHECK(s.name == "small");
  CHECK(s.seed == 11);
  CHECK(s.model.layers.size() == 4);
  CHECK(s.model.layers[0].grades == GradeSet{0, 2});
  CHECK(s.model.layers[3].keep == GradeSet{0});
  CHECK(s.stream.kind == StreamKind::drift);
  CHECK(s.stream.drift_at == 1500);
  CHECK(s.inference_ticks == 3);
  CHECK(s.training_ticks == 1);
  CHECK_FALSE(s.detector.epsilon.has_value());
  CHECK(s.memory_depths == std::vector<std::size_t>{2, 8, 32});
  CHECK(small("detector.epsilon = 0.25\n").detector.epsilon == 0.25);
}

TEST_CASE("scenario errors name their line") {
  const std::string base = "signature = 3,0,0\nlayer = product w grades=0,2\n";
  check_parse_error(base + "colour = blue\n", "bad.scn:3: unknown key 'colour'");
  check_parse_error(base + "seed = 1\nseed = 2\n", "bad.scn:4: duplicate key 'seed'");
  check_parse_error(base + "layer = product v dim=m\n", "bad.scn:3: layer v needs grades=");
  check_parse_error(base + "layer = project p grades=1\n", "bad.scn:3: attribute 'grades' does not apply");
  check_parse_error(base + "layer = spline s\n", "bad.scn:3: unknown layer kind");
  check_parse_error(base + "steps = ten\n", "bad.scn:3: 'ten' is not a valid number");
  check_parse_error(base + "just words\n", "bad.scn:3: expected 'key = value'");
  check_parse_error(base + "layer = product w grades=0\n", "bad.scn:3: duplicate layer name 'w'");
  check_parse_error("signature = 3,0,0\nlayer = product w grades=0,2 dim=m\nlayer = nonlinearity a activation=tanh\n"
                    "input.dim = m\n",
                    "tanh applied to dimensional value");
}

TEST_CASE("stepping clock and data stream are deterministic") {
  auto c = stepping_clock(100, 5);
  CHECK(c() == 100);
  CHECK(c() == 105);
  const Scenario s = small();
  DataStream a(s, 1), b(s, 1), other(s, 2);
  for (int t = 0; t < 50; ++t) {
    const auto x = a.next(t), y = b.next(t), z = other.next(t);
    CHECK(x.y.get(0).bits() == y.y.get(0).bits());
    CHECK(x.x.get(1).bits() == y.x.get(1).bits());
    if (t == 0) CHECK(x.x.get(1).bits() != z.x.get(1).bits());
  }
}

TEST_CASE("a stationary run commits nothing") {
  Scenario s = small("");
  s.stream.kind = StreamKind::stationary;
  const ScenarioReport r = run_scenario(s);
  CHECK(r.committed() == 0);
  CHECK(r.triggers.empty());
  CHECK(r.chain.size() == 1);
  CHECK(r.chain_verdict.ok);
  CHECK(r.requests == 3000);
  CHECK(r.responses == 3000);
  CHECK(r.max_kl < r.epsilon);
  CHECK(r.epsilon_calibrated);
  CHECK(r.sparsity_stable());
  CHECK_FALSE(r.kl_trajectory.empty());
}

TEST_CASE("a drift run rotates once and records why") {
  const ScenarioReport r = run_scenario(small());
  INFO(r.summary());
  REQUIRE(r.committed() == 1);
  REQUIRE(r.triggers.size() == 1);
  CHECK(r.triggers[0].observation >= 1500);
  CHECK(r.triggers[0].observation - 1500 <= 400);
  REQUIRE(r.chain.size() == 2);
  const VersionRecord& v2 = r.chain[1];
  CHECK(v2.version_id == 2);
  CHECK(v2.kl_at_trigger > r.epsilon);
  CHECK(v2.kl_at_trigger == r.triggers[0].kl);
  CHECK(v2.evidence_sources.size() == 2);
  CHECK(v2.evidence_sources[0].window_end == r.triggers[0].observation);
  CHECK(v2.cert_diff.empty());  // retraining changes values, not structure
  CHECK(r.chain_verdict.ok);
  CHECK(r.sparsity_stable());
  CHECK(r.requests == r.responses);
  CHECK(r.summary().find("1 committed") != std::string::npos);
}

TEST_CASE("replay with the same seed and clock is byte-identical") {
  const Scenario s = small();
  const ScenarioReport a = run_scenario(s);
  const ScenarioReport b = run_scenario(s);
  CHECK(chain_bytes(a.chain) == chain_bytes(b.chain));
  CHECK(canonical(a.to_json()) == canonical(b.to_json()));

  RunOptions later;
  later.clock = stepping_clock(2000000000, 1);
  const ScenarioReport c = run_scenario(s, later);
  REQUIRE(c.chain.size() == a.chain.size());
  CHECK(c.chain[0].timestamp == 2000000000);
  CHECK(c.chain[0].weights_hash == a.chain[0].weights_hash);
  CHECK(chain_bytes(c.chain) != chain_bytes(a.chain));

  Scenario t = s;
  t.seed = 12;
  CHECK(chain_bytes(run_scenario(t).chain) != chain_bytes(a.chain));
}

TEST_CASE("runs can persist their chain") {
  const auto dir = std::filesystem::temp_directory_path() / ("admkit-harness-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  RunOptions o;
  o.store = dir.string();
  const Scenario s = small();
  const ScenarioReport r = run_scenario(s, o);
  const RecordStore store(dir);
  CHECK(store.raw().size() == r.chain.size());
  CHECK(verify_stored_chain(store.raw(), r.public_key_hex).ok);
  REQUIRE(store.has("weights-000002.json"));
  CHECK(WeightsFile::parse(store.get_text("weights-000002.json")).hash() == r.chain[1].weights_hash);
  std::filesystem::remove_all(dir);
}

TEST_CASE("memory table keeps the auxiliary term flat in depth") {
  const auto rows = memory_table(small());
  REQUIRE(rows.size() == 3);
  for (const auto& m : rows) {
    CHECK(m.report.auxiliary == rows[0].report.auxiliary);
    CHECK(m.report.parameter_tangents == 4 * static_cast<int64_t>(m.depth));
    CHECK(m.report.training_peak <= 2 * m.report.inference_peak + m.report.auxiliary);
  }
}

TEST_CASE("run_scenario needs a scalar output") {
  Scenario s = small();
  s.model.layers.back().keep = {1};
  CHECK_THROWS_AS(run_scenario(s), ParseError);
}

TEST_CASE("contrast experiment separates the pipelines") {
  Scenario s = parse_scenario(
      "seed = 3\nsignature = 3,0,0\ninput.grades = 0,1\nlayer = product w grades=2\ncontrast.steps = 1200\n", "c.scn");
  const ContrastReport r = contrast_experiment(s);
  REQUIRE(r.typed.size() == 1200);
  CHECK(r.grade == 2);
  CHECK(r.max_of(r.typed) == 0.0);
  CHECK(r.max_of(r.control) == 0.0);
  REQUIRE(r.first_positive(r.dense).has_value());
  CHECK(*r.first_positive(r.dense) <= 1000);
  CHECK(r.ma_decreases(r.dense) == 0);
  CHECK(r.to_json().at("rows").size() == 13);

  Scenario none = s;
  none.model.layers[0].grades = {0, 2};
  CHECK_THROWS_AS(contrast_experiment(none), ParseError);
}

TEST_CASE("moving average") {
  const auto ma = ContrastReport::moving_average({1, 2, 3, 4}, 2);
  CHECK(ma == std::vector<double>{1.5, 2.5, 3.5});
}
