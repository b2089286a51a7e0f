#include <admkit/signing.hpp>

#include <catch2/catch_amalgamated.hpp>

using namespace admkit;

TEST_CASE("canonical bytes sort keys and drop whitespace") {
  const json j = json::parse(R"({ "b": [1, 2], "a": {"z": "x", "c": null}, "B": true })");
  CHECK(canonical(j) == R"({"B":true,"a":{"c":null,"z":"x"},"b":[1,2]})");
  CHECK_THROWS_AS(canonical(json::parse(R"({"x":1.5})")), ParseError);
}

TEST_CASE("parse_canonical rejects anything but the canonical spelling") {
  CHECK(parse_canonical(R"({"a":1,"b":2})", "t") == json{{"a", 1}, {"b", 2}});
  CHECK_THROWS_AS(parse_canonical(R"({"b":2,"a":1})", "t"), ParseError);
  CHECK_THROWS_AS(parse_canonical(R"({"a": 1})", "t"), ParseError);
  CHECK_THROWS_AS(parse_canonical(R"({"a":1})"
                                  "\n",
                                  "t"),
                  ParseError);
  CHECK_THROWS_AS(parse_canonical("{", "t"), ParseError);
}

TEST_CASE("hex is lowercase and round-trips") {
  const Bytes b{0x00, 0x7f, 0xab, 0xff};
  CHECK(to_hex(b) == "007fabff");
  CHECK(from_hex("007fabff") == b);
  CHECK_THROWS_AS(from_hex("007FABFF"), ParseError);
  CHECK_THROWS_AS(from_hex("abc"), ParseError);
  CHECK(uint_hex(0) == "0");
  CHECK(uint_hex(0x4000) == "4000");
  CHECK(parse_uint_hex("4000") == 0x4000);
  CHECK_THROWS_AS(parse_uint_hex("04000"), ParseError);
  CHECK_THROWS_AS(parse_uint_hex("4A"), ParseError);
}

TEST_CASE("reals use the shortest round-tripping spelling") {
  for (double x : {0.0, 0.1, 1.0 / 3, 1e-300, 6.02214076e23, -2.5}) CHECK(parse_real(format_real(x)) == x);
  CHECK(format_real(0.1) == "0.1");
  CHECK_THROWS_AS(parse_real("0.1x"), ParseError);
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("ed25519 matches the published test vector") {
  const Ed25519Signer s(from_hex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60"));
  CHECK(s.public_key_hex() == "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a");
  const DetachedSignature sig = s.sign("");
  CHECK(sig.scheme == "ed25519");
  CHECK(sig.bytes ==
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24"
        "655141438e7a100b");
  CHECK(verify_signature(sig, "", s.public_key_hex()) == SignatureStatus::valid);
}

TEST_CASE("signature verification") {
  const auto s = Ed25519Signer::from_label("k");
  const std::string msg = R"({"a":1})";
  DetachedSignature sig = s.sign(msg);
  CHECK(verify_signature(sig, msg, s.public_key_hex()) == SignatureStatus::valid);
  CHECK(verify_signature(sig, R"({"a":2})", s.public_key_hex()) == SignatureStatus::invalid);
  CHECK(verify_signature(sig, msg, Ed25519Signer::from_label("other").public_key_hex()) == SignatureStatus::invalid);
  CHECK(verify_signature(sig, msg, "") == SignatureStatus::invalid);
  sig.bytes[10] = sig.bytes[10] == '0' ? '1' : '0';
  CHECK(verify_signature(sig, msg, s.public_key_hex()) == SignatureStatus::invalid);
  CHECK(verify_signature(NullSigner().sign(msg), msg, "") == SignatureStatus::unsigned_record);
  CHECK(verify_signature({"null", "00"}, msg, "") == SignatureStatus::invalid);
  CHECK(verify_signature({"rsa", "00"}, msg, "") == SignatureStatus::invalid);
}

TEST_CASE("load_signer") {
  CHECK(load_signer("null", "")->scheme() == "null");
  CHECK_THROWS_AS(load_signer("ed25519", "/nonexistent/key"), SigningError);
  CHECK_THROWS_AS(load_signer("rsa", ""), SigningError);
}
