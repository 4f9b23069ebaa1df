#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "doctest.h"
#include "sovs/core.hpp"
#include "sovs/formats.hpp"
#include "sovs/rng.hpp"
#include "test_util.hpp"

using namespace sovs;
using testutil::TempDir;

namespace {

// Little-endian encoders written independently of the library so the on-disk
// layout is checked against a second implementation, not against itself.
void raw_u16le(std::string& out, std::uint16_t x) {
  out.push_back(static_cast<char>(x & 0xff));
  out.push_back(static_cast<char>(x >> 8));
}

void raw_f32le(std::string& out, float f) {
  std::uint32_t x;
  std::memcpy(&x, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
}

}  // namespace

// ============================================================================
// label + confidence files
// ============================================================================

TEST_CASE("sovspl round-trips labels, confidences and n_in exactly") {
  TempDir tmp;
  LabelMap label(3, 4);
  ConfMap conf(3, 4);
  for (int i = 0; i < 12; ++i) {
    label.v[i] = static_cast<std::uint16_t>(i % 5);
    conf.v[i] = 1.0f / (1 + i);
  }
  label.v[7] = kIgnoreId;
  conf.v[2] = 0.0f;
  conf.v[3] = 1.0f;

  const auto path = tmp / "a.sovspl";
  write_sovspl(path, label, conf, 5);
  PlFile pl = read_sovspl(path);

  CHECK(pl.n_in == 5);
  CHECK(pl.label.h == 3);
  CHECK(pl.label.w == 4);
  CHECK(pl.label.v == label.v);
  CHECK(bits_equal(pl.confidence.v, conf.v));

  // rewriting the same content is byte-identical
  write_sovspl(tmp / "b.sovspl", label, conf, 5);
  CHECK(read_file_bytes(path) == read_file_bytes(tmp / "b.sovspl"));
}

TEST_CASE("sovspl byte layout matches an independent encoder") {
  TempDir tmp;
  // 1x2 map, labels (0x0102, 3), confidences (0.25, -1.5), n_in 7
  std::string bytes = "SOVSPL v1 1 2 7\n";
  raw_u16le(bytes, 0x0102);
  raw_u16le(bytes, 3);
  raw_f32le(bytes, 0.25f);
  raw_f32le(bytes, -1.5f);
  const auto path = tmp / "hand.sovspl";
  write_file_bytes(path, bytes);

  PlFile pl = read_sovspl(path);
  CHECK(pl.label.v == std::vector<std::uint16_t>{0x0102, 3});
  CHECK(pl.confidence.v[0] == 0.25f);
  CHECK(pl.confidence.v[1] == -1.5f);
  CHECK(pl.n_in == 7);

  // and the writer produces those exact bytes back
  write_sovspl(tmp / "again.sovspl", pl.label, pl.confidence, pl.n_in);
  CHECK(read_file_bytes(tmp / "again.sovspl") == bytes);
}

TEST_CASE("sovspl rejects malformed files") {
  TempDir tmp;
  const auto path = tmp / "bad.sovspl";

  write_file_bytes(path, std::string("SOVSXX v1 1 1 1\n") + std::string(6, '\0'));
  CHECK_THROWS_WITH_AS(read_sovspl(path), doctest::Contains("bad header"), std::runtime_error);

  write_file_bytes(path, "SOVSPL v1 2 2 1\n????");  // payload cut short
  CHECK_THROWS_WITH_AS(read_sovspl(path), doctest::Contains("truncated"), std::runtime_error);

  std::string ok = "SOVSPL v1 1 1 1\n";
  raw_u16le(ok, 1);
  raw_f32le(ok, 1.0f);
  write_file_bytes(path, ok + "x");  // one junk byte after payload
  CHECK_THROWS_WITH_AS(read_sovspl(path), doctest::Contains("trailing"), std::runtime_error);

  write_file_bytes(path, "SOVSPL v1 1 1");  // no newline at all
  CHECK_THROWS_WITH_AS(read_sovspl(path), doctest::Contains("missing header"), std::runtime_error);

  write_file_bytes(path, "SOVSPL v1 1 -1 1\nxxxxxx");
  CHECK_THROWS_WITH_AS(read_sovspl(path), doctest::Contains("bad header"), std::runtime_error);

  LabelMap l(2, 2);
  ConfMap c(2, 3);
  CHECK_THROWS_AS(write_sovspl(path, l, c, 1), std::invalid_argument);
}

// ============================================================================
// embedding / image / checkpoint files
// ============================================================================

TEST_CASE("sovsemb round-trips dense fields and 1x1 text vectors") {
  TempDir tmp;
  EmbeddingField field(2, 3, 4);
  Rng rng(11);
  for (auto& x : field.v) x = static_cast<float>(rng.normal());

  write_sovsemb(tmp / "f.sovsemb", field);
  EmbeddingField back = read_sovsemb(tmp / "f.sovsemb");
  CHECK(back.h == 2);
  CHECK(back.w == 3);
  CHECK(back.c == 4);
  CHECK(bits_equal(back.v, field.v));

  EmbeddingField text(1, 1, 7);
  for (auto& x : text.v) x = static_cast<float>(rng.normal());
  write_sovsemb(tmp / "t.sovsemb", text);
  EmbeddingField tback = read_sovsemb(tmp / "t.sovsemb");
  CHECK(tback.h == 1);
  CHECK(tback.w == 1);
  CHECK(bits_equal(tback.v, text.v));
}

TEST_CASE("sovsimg round-trips float planes bit-exactly") {
  TempDir tmp;
  Tensor3 img(4, 5, 3);
  Rng rng(3);
  for (auto& x : img.v) x = static_cast<float>(rng.uniform());
  img.v[0] = -0.0f;  // sign bit must survive

  write_sovsimg(tmp / "i.sovsimg", img);
  Tensor3 back = read_sovsimg(tmp / "i.sovsimg");
  CHECK(back.same_shape(img));
  CHECK(bits_equal(back.v, img.v));
}

TEST_CASE("sovsckpt round-trips hash and parameters") {
  TempDir tmp;
  std::vector<float> params(257);
  Rng rng(99);
  for (auto& x : params) x = static_cast<float>(rng.normal());
  params[17] = -0.0f;

  const std::uint64_t hash = 0xdeadbeefcafef00dull;
  write_sovsckpt(tmp / "m.sovsckpt", hash, params);
  CkptFile ck = read_sovsckpt(tmp / "m.sovsckpt");
  CHECK(ck.config_hash == hash);
  CHECK(bits_equal(ck.params, params));

  // header is human-readable with a fixed-width hash
  const std::string bytes = read_file_bytes(tmp / "m.sovsckpt");
  CHECK(bytes.rfind("SOVSCKPT v1 deadbeefcafef00d 257\n", 0) == 0);

  write_file_bytes(tmp / "bad.sovsckpt", "SOVSCKPT v1 123 4\n");
  CHECK_THROWS_WITH_AS(read_sovsckpt(tmp / "bad.sovsckpt"), doctest::Contains("bad header"),
                       std::runtime_error);
}

// ============================================================================
// hashing and number formatting
// ============================================================================

TEST_CASE("fnv1a64 matches the published test vectors") {
  CHECK(fnv1a64(std::string{}) == 0xcbf29ce484222325ull);
  CHECK(fnv1a64(std::string{"a"}) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64(std::string{"foobar"}) == 0x85944171f73967e8ull);
}

TEST_CASE("hex64 zero-pads to 16 lowercase digits") {
  CHECK(hex64(0x1) == "0000000000000001");
  CHECK(hex64(0xdeadbeefcafef00dull) == "deadbeefcafef00d");
  CHECK(hex64(0) == "0000000000000000");
}

TEST_CASE("fmt_g prints stable shortest-form decimals") {
  CHECK(fmt_g(0.5) == "0.5");
  CHECK(fmt_g(1.0) == "1");
  CHECK(fmt_g(0.0) == "0");
  CHECK(fmt_g(0.1) == "0.1");
  CHECK(fmt_g(1e-08) == "1e-08");
  // same value twice gives the same text (the CSV determinism hinge)
  CHECK(fmt_g(1.0 / 3.0) == fmt_g(1.0 / 3.0));
}

// ============================================================================
// deterministic RNG
// ============================================================================

TEST_CASE("rng streams are reproducible and substreams are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c = Rng::derive(7, {1, 2});
  Rng d = Rng::derive(7, {1, 2});
  Rng e = Rng::derive(7, {1, 3});
  bool all_equal = true;
  bool any_diff = false;
  for (int i = 0; i < 32; ++i) {
    const auto x = c.next_u64();
    all_equal = all_equal && (x == d.next_u64());
    any_diff = any_diff || (x != e.next_u64());
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("rng distributions respect their ranges") {
  Rng rng(5);
  std::set<int> seen;
  for (int i = 0; i < 2000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const int k = rng.uniform_int(3, 7);
    CHECK(k >= 3);
    CHECK(k <= 7);
    seen.insert(k);
  }
  CHECK(seen.size() == 5);  // inclusive bounds are all reachable

  for (int i = 0; i < 100; ++i) {
    CHECK_FALSE(rng.bernoulli(0.0));
    CHECK(rng.bernoulli(1.0));
  }

  // loose sanity on the normal: mean near 0, spread near 1
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("rng shuffle is a permutation and is seed-stable") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  std::vector<int> w = v;

  Rng r1(9), r2(9);
  r1.shuffle(v);
  r2.shuffle(w);
  CHECK(v == w);

  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}
