#pragma once

// Hash-chained, signed version records and a directory-backed record store.

#include <admkit/certificate.hpp>
#include <admkit/signing.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>

namespace admkit {

struct EvidenceSource {
  std::string source_kind;
  int64_t window_start = 0;  // observation indices
  int64_t window_end = 0;
  bool operator==(const EvidenceSource&) const = default;
};

struct UserFeedback {
  std::string input_context_hash;
  std::string judgment;
  bool operator==(const UserFeedback&) const = default;
};

struct VersionRecord {
  uint64_t version_id = 0;
  std::string parent_hash;  // empty for the root record
  std::string weights_hash;
  double kl_at_trigger = 0;
  std::vector<EvidenceSource> evidence_sources;
  std::vector<UserFeedback> user_feedback;
  Certificate certificate;
  json cert_diff = json::array();
  int64_t timestamp = 0;
  std::optional<DetachedSignature> signature;

  // Everything the signature covers.
  json unsigned_json() const {
    json ev = json::array();
    for (const auto& e : evidence_sources)
      ev.push_back({{"source_kind", e.source_kind}, {"time_window", {e.window_start, e.window_end}}});
    json fb = json::array();
    for (const auto& f : user_feedback) fb.push_back({{"input_context_hash", f.input_context_hash}, {"judgment", f.judgment}});
    return {{"version_id", version_id},
            {"parent_hash", parent_hash},
            {"weights_hash", weights_hash},
            {"kl_at_trigger", format_real(kl_at_trigger)},
            {"evidence_sources", ev},
            {"user_feedback", fb},
            {"certificate", certificate.to_json()},
            {"cert_diff", cert_diff},
            {"timestamp", timestamp}};
  }

  json to_json() const {
    json j = unsigned_json();
    j["signature"] = signature ? json{{"scheme", signature->scheme}, {"bytes", signature->bytes}} : json(nullptr);
    return j;
  }

  std::string signed_bytes() const { return canonical(unsigned_json()); }
  std::string bytes() const { return canonical(to_json()); }
  std::string hash() const { return sha256_hex(bytes()); }

  static VersionRecord from_json(const json& j) {
    const std::string w = "version record";
    expect_keys(j,
                {"version_id", "parent_hash", "weights_hash", "kl_at_trigger", "evidence_sources", "user_feedback",
                 "certificate", "cert_diff", "timestamp", "signature"},
                w);
    VersionRecord r;
    if (!j.at("version_id").is_number_unsigned()) throw ParseError(w + ": version_id must be a non-negative integer");
    r.version_id = j.at("version_id").get<uint64_t>();
    r.parent_hash = field<std::string>(j, "parent_hash", w);
    r.weights_hash = field<std::string>(j, "weights_hash", w);
    const std::string kl = field<std::string>(j, "kl_at_trigger", w);
    r.kl_at_trigger = parse_real(kl);
    if (format_real(r.kl_at_trigger) != kl) throw ParseError(w + ": kl_at_trigger is not in shortest form");
    for (const auto& e : j.at("evidence_sources")) {
      expect_keys(e, {"source_kind", "time_window"}, w + " evidence");
      const json& tw = e.at("time_window");
      if (!tw.is_array() || tw.size() != 2 || !tw[0].is_number_integer() || !tw[1].is_number_integer())
        throw ParseError(w + ": time_window must be [start, end]");
      r.evidence_sources.push_back({field<std::string>(e, "source_kind", w), tw[0].get<int64_t>(), tw[1].get<int64_t>()});
    }
    for (const auto& f : j.at("user_feedback")) {
      expect_keys(f, {"input_context_hash", "judgment"}, w + " feedback");
      r.user_feedback.push_back({field<std::string>(f, "input_context_hash", w), field<std::string>(f, "judgment", w)});
    }
    r.certificate = Certificate(j.at("certificate"));
    r.cert_diff = j.at("cert_diff");
    if (!r.cert_diff.is_array()) throw ParseError(w + ": cert_diff must be an array");
    if (!j.at("timestamp").is_number_integer()) throw ParseError(w + ": timestamp must be an integer");
    r.timestamp = j.at("timestamp").get<int64_t>();
    const json& s = j.at("signature");
    if (!s.is_null()) {
      expect_keys(s, {"scheme", "bytes"}, w + " signature");
      r.signature = DetachedSignature{field<std::string>(s, "scheme", w), field<std::string>(s, "bytes", w)};
    }
    return r;
  }

  static VersionRecord parse(std::string_view text) { return from_json(parse_canonical(text, "version record")); }
};

// Unsigned record for a new certificate on top of parent (null for the root).
inline VersionRecord draft_record(const VersionRecord* parent, const Certificate& cert, const std::string& weights_hash,
                                  uint64_t version_id, double kl_at_trigger, int64_t timestamp) {
  VersionRecord r;
  r.version_id = version_id;
  r.parent_hash = parent ? parent->hash() : "";
  r.weights_hash = weights_hash;
  r.kl_at_trigger = kl_at_trigger;
  r.certificate = cert;
  r.cert_diff = certificate_diff(parent ? parent->certificate : Certificate(), cert).to_json();
  r.timestamp = timestamp;
  return r;
}

inline VersionRecord sign_record(VersionRecord r, const Signer* signer) {
  if (r.signature) throw SigningError("record " + std::to_string(r.version_id) + " is already signed");
  if (!signer) throw SigningError("no signer available; record not emitted");
  r.signature = signer->sign(r.signed_bytes());
  return r;
}

enum class SigningPolicy { dev, strict };

struct ChainVerdict {
  bool ok = true;
  std::size_t index = 0;  // first failing record
  std::string check;      // parse | version | parent_hash | signature | cert_diff
  std::string message;
  std::size_t unsigned_records = 0;

  std::string to_string() const {
    if (ok) return "ok" + (unsigned_records ? " (" + std::to_string(unsigned_records) + " unsigned)" : std::string());
    return "record " + std::to_string(index) + ": " + check + ": " + message;
  }
};

inline ChainVerdict verify_chain(const std::vector<VersionRecord>& records, const std::string& public_key_hex,
                                 SigningPolicy policy = SigningPolicy::strict) {
  ChainVerdict v;
  auto fail = [&](std::size_t i, const char* check, std::string msg) {
    v.ok = false;
    v.index = i;
    v.check = check;
    v.message = std::move(msg);
    return v;
  };
  for (std::size_t i = 0; i < records.size(); ++i) {
    const VersionRecord& r = records[i];
    const std::string expect_parent = i == 0 ? "" : records[i - 1].hash();
    if (r.parent_hash != expect_parent) return fail(i, "parent_hash", "does not match the digest of the previous record");
    if (i > 0 && r.version_id <= records[i - 1].version_id) return fail(i, "version", "version ids must increase");
    if (!r.signature) return fail(i, "signature", "missing signature field");
    switch (verify_signature(*r.signature, r.signed_bytes(), public_key_hex)) {
      case SignatureStatus::valid:
        break;
      case SignatureStatus::unsigned_record:
        if (policy == SigningPolicy::strict) return fail(i, "signature", "unsigned record under strict policy");
        ++v.unsigned_records;
        break;
      case SignatureStatus::invalid:
        return fail(i, "signature", "signature does not verify (" + r.signature->scheme + ")");
    }
    const Certificate parent = i == 0 ? Certificate() : records[i - 1].certificate;
    if (certificate_diff(parent, r.certificate).to_json() != r.cert_diff)
      return fail(i, "cert_diff", "stored certificate diff differs from the recomputed one");
  }
  return v;
}

// One canonical JSON file per record: <dir>/record-<version>.json. Loading
// rejects any file whose bytes are not the canonical form of what they parse to.
class RecordStore {
 public:
  explicit RecordStore(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  const std::filesystem::path& dir() const { return dir_; }

  static std::string file_name(uint64_t version) {
    std::string v = std::to_string(version);
    return "record-" + std::string(v.size() < 6 ? 6 - v.size() : 0, '0') + v + ".json";
  }

  // Weights file kept beside each record.
  static std::string weights_name(uint64_t version) { return "weights-" + file_name(version).substr(7); }

  void append(const VersionRecord& r) const {
    if (!r.signature) throw SigningError("refusing to store an unsigned-by-any-scheme record");
    write_file(dir_ / file_name(r.version_id), r.bytes());
  }

  std::vector<std::filesystem::path> files() const {
    std::vector<std::filesystem::path> v;
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      const std::string n = e.path().filename().string();
      if (n.rfind("record-", 0) == 0 && n.size() > 12 && n.substr(n.size() - 5) == ".json") v.push_back(e.path());
    }
    std::sort(v.begin(), v.end());
    return v;
  }

  std::vector<VersionRecord> load() const {
    std::vector<VersionRecord> out;
    for (const auto& p : files()) out.push_back(VersionRecord::parse(read_text_file(p.string())));
    return out;
  }

  // Bytes of every record in order, for replay comparison.
  std::vector<std::string> raw() const {
    std::vector<std::string> out;
    for (const auto& p : files()) out.push_back(read_text_file(p.string()));
    return out;
  }

  std::optional<VersionRecord> head() const {
    const auto f = files();
    if (f.empty()) return std::nullopt;
    return VersionRecord::parse(read_text_file(f.back().string()));
  }

  void put_text(const std::string& name, const std::string& bytes) const { write_file(dir_ / name, bytes); }
  std::string get_text(const std::string& name) const { return read_text_file((dir_ / name).string()); }
  bool has(const std::string& name) const { return std::filesystem::exists(dir_ / name); }

  static void write_file(const std::filesystem::path& p, const std::string& bytes) {
    const auto tmp = p.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw Error("cannot write " + tmp);
      f << bytes;
    }
    std::filesystem::rename(tmp, p);
  }

 private:
  std::filesystem::path dir_;
};

// Parses and verifies the raw bytes of a stored chain, so that undecodable
// or non-canonical records count as tampering at their index.
inline ChainVerdict verify_stored_chain(const std::vector<std::string>& raw, const std::string& public_key_hex,
                                        SigningPolicy policy = SigningPolicy::strict) {
  std::vector<VersionRecord> records;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    try {
      records.push_back(VersionRecord::parse(raw[i]));
    } catch (const std::exception& e) {
      // An earlier record may already be inconsistent; report whichever comes first.
      const ChainVerdict prefix = verify_chain(records, public_key_hex, policy);
      if (!prefix.ok) return prefix;
      ChainVerdict v;
      v.ok = false;
      v.index = i;
      v.check = "parse";
      v.message = e.what();
      return v;
    }
  }
  return verify_chain(records, public_key_hex, policy);
}

}  // namespace admkit
