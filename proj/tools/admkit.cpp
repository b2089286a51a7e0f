// admkit command line: scenario runs, side-loaded rotation, chain
// verification and a few table dumps.

#include <admkit/admkit.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <iomanip>
#include <iostream>

using namespace admkit;

namespace {

// Exit codes: 0 ok, 1 check failed (refused rotation, broken chain), 2 bad input.
constexpr int kFailed = 1;
constexpr int kBadInput = 2;

Signature parse_signature(const std::string& s) {
  const auto v = detail::int_list(s, "--signature");
  if (v.size() != 3) throw ParseError("--signature expects p,q,r");
  Signature sig{v[0], v[1], v[2]};
  sig.validate();
  return sig;
}

std::string read_key_hex(const std::string& path) {
  const std::string k = trim(read_text_file(path));
  if (from_hex(k).size() != crypto_sign_PUBLICKEYBYTES) throw ParseError(path + ": not an ed25519 public key");
  return k;
}

SigningPolicy parse_policy(const std::string& p) {
  if (p == "strict") return SigningPolicy::strict;
  if (p == "dev") return SigningPolicy::dev;
  throw ParseError("policy must be strict or dev, got '" + p + "'");
}

struct RunArgs {
  std::string scenario;
  std::string store;
  bool json = false;
  std::optional<uint64_t> seed;
  std::optional<int64_t> steps;
};

int cmd_run(const RunArgs& a) {
  Scenario s = load_scenario(a.scenario);
  if (a.seed) s.seed = *a.seed;
  if (a.steps) s.steps = *a.steps;
  RunOptions o;
  if (!a.store.empty()) o.store = a.store;
  const ScenarioReport r = run_scenario(s, o);
  if (a.json)
    std::cout << canonical(r.to_json()) << "\n";
  else
    std::cout << r.summary();
  return r.chain_verdict.ok ? 0 : kFailed;
}

struct RotateArgs {
  std::string candidate;
  std::string store;
  std::string spec;
  std::string scheme = "ed25519";
  std::string key;
  std::string key_label;
  std::string pubkey;
  std::string policy = "strict";
  double kl = 0;
  std::optional<int64_t> timestamp;
  std::vector<std::string> evidence;
};

EvidenceSource parse_evidence(const std::string& e) {
  const auto p = detail::split(e, ':');
  if (p.size() != 3) throw ParseError("--evidence expects kind:start:end, got '" + e + "'");
  return {p[0], detail::parse_number<int64_t>(p[1], "--evidence"), detail::parse_number<int64_t>(p[2], "--evidence")};
}

int cmd_rotate(const RotateArgs& a) {
  const RecordStore store(a.store);
  const std::string spec_path = a.spec.empty() ? (store.dir() / "model.json").string() : a.spec;
  const ModelSpec spec = ModelSpec::from_json(json::parse(read_text_file(spec_path)));
  const WeightsFile cand = WeightsFile::parse(trim(read_text_file(a.candidate)));

  std::unique_ptr<Signer> signer;
  if (a.scheme == "null")
    signer = std::make_unique<NullSigner>();
  else if (!a.key.empty())
    signer = load_signer(a.scheme, a.key);
  else if (!a.key_label.empty())
    signer = std::make_unique<Ed25519Signer>(Ed25519Signer::from_label(a.key_label));
  else
    throw SigningError("no signer: pass --key, --key-label or --scheme null");

  std::string pub;
  if (!a.pubkey.empty())
    pub = read_key_hex(a.pubkey);
  else if (auto* e = dynamic_cast<const Ed25519Signer*>(signer.get()))
    pub = e->public_key_hex();
  const SigningPolicy policy = parse_policy(a.policy);
  const int64_t now = a.timestamp ? *a.timestamp
                                  : std::chrono::duration_cast<std::chrono::seconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count();

  const ChainVerdict existing = verify_stored_chain(store.raw(), pub, policy);
  if (!existing.ok) {
    std::cerr << "store chain does not verify: " << existing.to_string() << "\n";
    return kFailed;
  }
  const auto records = store.load();
  const Elaboration e = elaborate(cand, spec);

  if (records.empty()) {
    if (!e.ok()) {
      std::cout << "refused: invalid_certificate: " << e.violations.front().to_string() << "\n";
      return kFailed;
    }
    VersionRecord root = draft_record(nullptr, e.certificate, cand.hash(), 1, a.kl, now);
    for (const auto& ev : a.evidence) root.evidence_sources.push_back(parse_evidence(ev));
    root = sign_record(root, signer.get());
    store.append(root);
    store.put_text(RecordStore::weights_name(1), cand.bytes());
    if (!a.spec.empty()) store.put_text("model.json", canonical(spec.to_json()));
    std::cout << "committed v1 " << root.hash() << "\n";
    return 0;
  }

  const VersionRecord& head = records.back();
  const std::string head_weights = RecordStore::weights_name(head.version_id);
  if (!store.has(head_weights)) throw Error("store lacks " + head_weights + " for the active version");
  const WeightsFile active = WeightsFile::parse(trim(store.get_text(head_weights)));
  if (active.hash() != head.weights_hash) throw Error(head_weights + " does not match the head record");

  EngineConfig ec;
  ec.policy = policy;
  ec.public_key_hex = pub;
  RotationEngine engine(make_served(spec, active, head.version_id), head, ec);
  VersionRecord r = draft_record(&head, e.certificate, cand.hash(), head.version_id + 1, a.kl, now);
  for (const auto& ev : a.evidence) r.evidence_sources.push_back(parse_evidence(ev));
  r = sign_record(r, signer.get());
  engine.begin_rotation({spec, cand, r});
  engine.drain();
  const RotationOutcome& o = engine.outcomes().back();
  if (!o.committed) {
    std::cout << "refused: " << to_string(*o.refusal) << ": " << o.detail << "\n";
    return kFailed;
  }
  store.append(r);
  store.put_text(RecordStore::weights_name(r.version_id), cand.bytes());
  std::cout << "committed v" << r.version_id << " " << r.hash() << "\n";
  const CertificateDiff d = certificate_diff(head.certificate, r.certificate);
  if (!d.empty()) std::cout << "certificate diff: " << canonical(d.to_json()) << "\n";
  return 0;
}

int cmd_verify(const std::string& dir, const std::string& pubkey, const std::string& policy) {
  if (!std::filesystem::is_directory(dir)) throw Error("no store at " + dir);
  const RecordStore store(dir);
  const auto raw = store.raw();
  if (raw.empty()) {
    std::cout << "store holds no records\n";
    return kFailed;
  }
  const ChainVerdict v = verify_stored_chain(raw, read_key_hex(pubkey), parse_policy(policy));
  std::cout << raw.size() << " record(s): " << v.to_string() << "\n";
  if (!v.ok) return kFailed;
  for (const auto& r : store.load()) {
    const std::string name = RecordStore::weights_name(r.version_id);
    if (!store.has(name)) continue;
    if (sha256_hex(trim(store.get_text(name))) != r.weights_hash) {
      std::cout << name << ": weights hash differs from record " << r.version_id << "\n";
      return kFailed;
    }
  }
  return 0;
}

int cmd_sparsity(const std::string& sig_text, bool slices, bool as_json) {
  const SparsityReport r = sparsity_report(parse_signature(sig_text));
  if (as_json) {
    json sl = json::array();
    for (const auto& s : r.slices)
      sl.push_back({{"grades", {s.grade_a, s.grade_b, s.grade_out}}, {"total", s.total}, {"nonzero", s.nonzero}});
    std::cout << canonical({{"signature", r.signature.to_string()},
                            {"total", r.total},
                            {"nonzero", r.nonzero},
                            {"sparsity", format_real(r.sparsity())},
                            {"slices", sl}})
              << "\n";
    return 0;
  }
  std::printf("Cl(%s): %llu of %llu product-tensor entries nonzero, sparsity %.6f\n", r.signature.to_string().c_str(),
              static_cast<unsigned long long>(r.nonzero), static_cast<unsigned long long>(r.total), r.sparsity());
  if (slices)
    for (const auto& s : r.slices)
      if (s.nonzero)
        std::printf("  grade %d x %d -> %d: %llu/%llu nonzero\n", s.grade_a, s.grade_b, s.grade_out,
                    static_cast<unsigned long long>(s.nonzero), static_cast<unsigned long long>(s.total));
  return 0;
}

int cmd_contrast(const std::string& path, std::optional<std::size_t> steps, std::size_t stride, bool as_json) {
  Scenario s = load_scenario(path);
  if (steps) s.contrast.steps = *steps;
  const ContrastReport r = contrast_experiment(s);
  if (as_json)
    std::cout << canonical(r.to_json(stride)) << "\n";
  else
    std::cout << r.summary(stride);
  return 0;
}

int cmd_posit_table(int nbits, int es, int rmax) {
  const PositFormat f{nbits, es, rmax};
  f.validate();
  if (nbits > 10) throw FormatError("posit-table lists formats up to 10 bits");
  const int width = (nbits + 3) / 4;
  std::cout << "bits_hex,value_decimal_exact\n";
  for (uint64_t b = 0; b < (uint64_t{1} << nbits); ++b) {
    std::cout << std::hex << std::setw(width) << std::setfill('0') << b << std::dec << ","
              << exact_decimal(Posit::from_bits(f, b)) << "\n";
  }
  return 0;
}

int cmd_keygen(const std::string& out, const std::string& pub_out, const std::string& label) {
  Bytes seed;
  if (!label.empty()) {
    seed = from_hex(sha256_hex(label));
  } else {
    ensure_sodium();
    seed.resize(crypto_sign_SEEDBYTES);
    randombytes_buf(seed.data(), seed.size());
  }
  const Ed25519Signer signer(seed);
  RecordStore::write_file(out, to_hex(seed) + "\n");
  std::filesystem::permissions(out, std::filesystem::perms::owner_read | std::filesystem::perms::owner_write);
  if (!pub_out.empty()) RecordStore::write_file(pub_out, signer.public_key_hex() + "\n");
  std::cout << signer.public_key_hex() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"admkit: grade-typed posit training with certificate-gated model rotation"};
  app.require_subcommand(1);
  int rc = 0;

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Run a scenario end to end and print its report");
  c_run->add_option("scenario", run.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  c_run->add_option("--store", run.store, "Also write records, weights and model spec to this directory");
  c_run->add_flag("--json", run.json, "Print the canonical report instead of the summary");
  c_run->add_option("--seed", run.seed, "Override the scenario seed");
  c_run->add_option("--steps", run.steps, "Override the number of observations");

  RotateArgs rot;
  auto* c_rot = app.add_subcommand("rotate", "Certify, sign and commit a candidate weights file into a store");
  c_rot->add_option("--candidate", rot.candidate, "Candidate weights file")->required()->check(CLI::ExistingFile);
  c_rot->add_option("--store", rot.store, "Record store directory")->required();
  c_rot->add_option("--spec", rot.spec, "Model spec JSON (default: <store>/model.json)");
  c_rot->add_option("--scheme", rot.scheme, "Signing scheme")->check(CLI::IsMember({"ed25519", "null"}));
  c_rot->add_option("--key", rot.key, "Signing key file (hex seed)");
  c_rot->add_option("--key-label", rot.key_label, "Derive the signing key from a label");
  c_rot->add_option("--pubkey", rot.pubkey, "Public key the gate checks against (default: the signer's)");
  c_rot->add_option("--policy", rot.policy, "strict or dev")->check(CLI::IsMember({"strict", "dev"}));
  c_rot->add_option("--kl", rot.kl, "KL divergence that motivated the rotation");
  c_rot->add_option("--timestamp", rot.timestamp, "Record timestamp (default: now, in seconds)");
  c_rot->add_option("--evidence", rot.evidence, "Evidence source as kind:start:end (repeatable)");

  std::string v_store, v_pub, v_policy = "strict";
  auto* c_ver = app.add_subcommand("verify", "Verify the record chain of a store");
  c_ver->add_option("--store", v_store, "Record store directory")->required();
  c_ver->add_option("--pubkey", v_pub, "Public key file (hex)")->required()->check(CLI::ExistingFile);
  c_ver->add_option("--policy", v_policy, "strict or dev")->check(CLI::IsMember({"strict", "dev"}));

  std::string sig;
  bool slices = false, sp_json = false;
  auto* c_sp = app.add_subcommand("sparsity", "Product-tensor sparsity of Cl(p,q,r)");
  c_sp->add_option("--signature", sig, "p,q,r")->required();
  c_sp->add_flag("--slices", slices, "Break down by grade triple");
  c_sp->add_flag("--json", sp_json, "Canonical JSON output");

  std::string con_path;
  std::optional<std::size_t> con_steps;
  std::size_t con_stride = 1000;
  bool con_json = false;
  auto* c_con = app.add_subcommand("contrast", "Off-grade energy: grade-typed vs rounded dense training");
  c_con->add_option("scenario", con_path, "Scenario file")->required()->check(CLI::ExistingFile);
  c_con->add_option("--steps", con_steps, "Override the number of training steps");
  c_con->add_option("--stride", con_stride, "Rows every this many steps")->check(CLI::PositiveNumber);
  c_con->add_flag("--json", con_json, "Canonical JSON output");

  int nbits = 8, es = 0, rmax = 6;
  auto* c_pt = app.add_subcommand("posit-table", "List every pattern of a posit format with its exact value");
  c_pt->add_option("--nbits", nbits, "Width in bits (at most 10)")->required();
  c_pt->add_option("--es", es, "Exponent bits")->required();
  c_pt->add_option("--rmax", rmax, "Maximum regime length")->required();

  std::string kg_out, kg_pub, kg_label;
  auto* c_kg = app.add_subcommand("keygen", "Write an Ed25519 key seed and print the public key");
  c_kg->add_option("--out", kg_out, "Seed file to write")->required();
  c_kg->add_option("--pubkey-out", kg_pub, "Also write the public key here");
  c_kg->add_option("--label", kg_label, "Derive the seed from a label instead of randomness");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kBadInput;
  }

  try {
    if (*c_run) rc = cmd_run(run);
    else if (*c_rot) rc = cmd_rotate(rot);
    else if (*c_ver) rc = cmd_verify(v_store, v_pub, v_policy);
    else if (*c_sp) rc = cmd_sparsity(sig, slices, sp_json);
    else if (*c_con) rc = cmd_contrast(con_path, con_steps, con_stride, con_json);
    else if (*c_pt) rc = cmd_posit_table(nbits, es, rmax);
    else if (*c_kg) rc = cmd_keygen(kg_out, kg_pub, kg_label);
  } catch (const std::exception& e) {
    std::cerr << "admkit: " << e.what() << "\n";
    return kBadInput;
  }
  return rc;
}
