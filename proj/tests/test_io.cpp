#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "linknet/io.hpp"
#include "linknet/model_io.hpp"

#include <cstring>
#include <filesystem>

using namespace linknet;
namespace fs = std::filesystem;

namespace {

using Bytes = std::vector<std::uint8_t>;

Bytes encoded(const TensorF& t) {
  Bytes b;
  encode_tensor(b, t);
  return b;
}

FormatError decode_error(const Bytes& b) {
  try {
    std::size_t off = 0;
    decode_tensor(b, off);
  } catch (const FormatError& e) {
    return e;
  }
  FAIL("expected a format error");
  return FormatError(0, "", "");
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("linknet_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("tensor byte layout") {
  const TensorF t({2}, {1.0f, -2.0f});
  Bytes want{'L', 'T', 'N', 'S', 1, 0, 1, 0, 2, 0, 0, 0, 0, 0, 0, 0};
  for (float v : {1.0f, -2.0f}) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    for (int i = 0; i < 4; ++i) want.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  CHECK(encoded(t) == want);

  Bytes ib;
  encode_tensor(ib, TensorI({1, 1}, std::vector<std::int32_t>{-1}));
  CHECK(ib == Bytes{'L', 'T', 'N', 'S', 1, 1, 2, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff, 0xff, 0xff});
}

TEST_CASE("tensor round trips are bit-identical") {
  Prng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    Shape s;
    const int rank = 1 + static_cast<int>(rng.below(4));
    for (int k = 0; k < rank; ++k) s.push_back(1 + static_cast<Index>(rng.below(6)));
    auto t = random_normal<float>(rng, s);
    t[0] = -0.0f;
    const Bytes b = encoded(t);
    std::size_t off = 0;
    const auto back = std::get<TensorF>(decode_tensor(b, off));
    CHECK(off == b.size());
    CHECK(std::memcmp(back.data(), t.data(), static_cast<std::size_t>(t.size()) * 4) == 0);
    CHECK(back.shape() == t.shape());

    TensorI ti(s);
    for (auto& v : ti.values()) v = static_cast<std::int32_t>(rng.next_u64());
    Bytes bi;
    encode_tensor(bi, ti);
    off = 0;
    CHECK(std::get<TensorI>(decode_tensor(bi, off)) == ti);
  }
}

TEST_CASE("malformed tensors name offset and field") {
  const Bytes good = encoded(TensorF({2, 3}, 1.5f));

  Bytes bad = good;
  bad[1] = 'X';
  auto e = decode_error(bad);
  CHECK(e.offset() == 0);
  CHECK(e.field() == "magic");
  CHECK(std::string(e.what()).find("byte 0") != std::string::npos);

  bad = good;
  bad[4] = 9;
  e = decode_error(bad);
  CHECK(e.offset() == 4);
  CHECK(e.field() == "version");

  bad = good;
  bad[5] = 7;
  CHECK(decode_error(bad).field() == "dtype");
  CHECK(decode_error(bad).offset() == 5);

  bad = good;
  bad[6] = 0;
  CHECK(decode_error(bad).field() == "rank");

  bad = good;
  bad[7] = 1;
  CHECK(decode_error(bad).field() == "reserved");

  bad = good;
  bad[16] = 0;
  e = decode_error(bad);
  CHECK(e.field() == "dims");
  CHECK(e.offset() == 16);

  bad = Bytes(good.begin(), good.end() - 3);
  e = decode_error(bad);
  CHECK(e.field() == "payload");
  CHECK(e.offset() == 24);

  bad = Bytes(good.begin(), good.begin() + 10);
  CHECK(decode_error(bad).field() == "dims");
}

TEST_CASE("random corruption never crashes") {
  const Bytes good = encoded(TensorF({3, 2, 2}, 0.25f));
  Prng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    Bytes b = good;
    if (rng.below(2)) b.resize(static_cast<std::size_t>(rng.below(good.size())));
    else b[static_cast<std::size_t>(rng.below(good.size()))] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    try {
      std::size_t off = 0;
      decode_tensor(b, off);
    } catch (const FormatError&) {
    }
  }
}

TEST_CASE("checkpoint round trip and ordering") {
  Checkpoint ck;
  ck.emplace("b.weight", TensorF({2, 2}, {1, 2, 3, 4}));
  ck.emplace("a.bias", TensorF({1}, {0.5f}));
  ck.emplace("config", TensorI({3}, std::vector<std::int32_t>{1, 2, 3}));
  const Bytes b = encode_checkpoint(ck);
  CHECK(std::string(b.begin(), b.begin() + 4) == "LKPT");
  const Checkpoint back = decode_checkpoint(b);
  CHECK(encode_checkpoint(back) == b);
  CHECK(std::get<TensorF>(back.at("b.weight")) == std::get<TensorF>(ck.at("b.weight")));

  // Swap the two first records so paths are out of order.
  Checkpoint two;
  two.emplace("a", TensorF({1}, {1.0f}));
  two.emplace("b", TensorF({1}, {2.0f}));
  Bytes swapped = encode_checkpoint(two);
  const std::size_t first_path = 4 + 1 + 4 + 2;
  auto pa = std::find(swapped.begin() + static_cast<std::ptrdiff_t>(first_path), swapped.end(), 'a');
  auto pb = std::find(pa + 1, swapped.end(), 'b');
  std::iter_swap(pa, pb);
  try {
    decode_checkpoint(swapped);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.field() == "path");
  }

  Bytes trailing = b;
  trailing.push_back(0);
  try {
    decode_checkpoint(trailing);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.field() == "trailer");
    CHECK(e.offset() == b.size());
  }
}

TEST_CASE("model and dataset files") {
  const fs::path dir = scratch_dir("model");
  LinkConfig c = LinkConfig::scaled(8);
  c.num_classes = 4;
  c.height = 64;
  c.width = 64;
  c.bypass = false;
  const Graph g = build_linknet(c);
  const auto params = init_params<float>(g, 3);
  save_checkpoint(dir / "m.lkpt", make_checkpoint(c, params));
  const auto m = load_model(dir / "m.lkpt");
  CHECK(m.params == params);
  CHECK(m.config.bypass == false);
  CHECK(m.config.encoder_widths == c.encoder_widths);
  CHECK(m.config.final_width == c.final_width);

  const Dataset data = make_toy_dataset(3, 32, 32, 3, 5);
  save_dataset(dir / "data", data);
  const Dataset back = load_dataset(dir / "data");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].image == data[i].image);
    CHECK(back[i].labels == data[i].labels);
    CHECK(*back[i].instances == *data[i].instances);
  }
  CHECK_THROWS(load_dataset(dir / "missing"));
  CHECK_THROWS_AS(load_real_tensor(dir / "data" / "labels" / "0000.ltn"), FormatError);
  fs::remove_all(dir);
}
