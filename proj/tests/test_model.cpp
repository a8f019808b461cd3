#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "linknet/analyze.hpp"
#include "linknet/executor.hpp"
#include "linknet/linknet.hpp"
#include "linknet/train.hpp"

#include <set>

using namespace linknet;

namespace {

LinkConfig small_config(Index classes, Index hw, bool bypass = true, Index divisor = 1) {
  LinkConfig c = LinkConfig::scaled(divisor);
  c.num_classes = classes;
  c.height = hw;
  c.width = hw;
  c.bypass = bypass;
  return c;
}

Shape block_output(const Graph& g, const std::vector<Shape>& shapes, const std::string& name) {
  for (const auto& b : g.blocks())
    if (b.name == name) return shapes[static_cast<std::size_t>(b.output)];
  FAIL("no block " << name);
  return {};
}

Index block_params(const Graph& g, const std::string& prefix) {
  Index total = 0;
  for (const auto& p : g.params())
    if (p.trainable() && p.key.rfind(prefix + ".", 0) == 0) total += element_count(p.shape);
  return total;
}

// Hand count from the layer recipe: conv kernels, 2 per BN channel, and the
// head bias.
Index recipe_count(Index classes) {
  auto conv = [](Index cin, Index cout, Index k) { return cin * cout * k * k; };
  auto bn = [](Index c) { return 2 * c; };
  Index total = conv(3, 64, 7) + bn(64);
  const Index enc[4][2] = {{64, 64}, {64, 128}, {128, 256}, {256, 512}};
  for (int i = 0; i < 4; ++i) {
    const Index m = enc[i][0], n = enc[i][1];
    total += conv(m, n, 3) + bn(n) + conv(n, n, 3) + bn(n);
    if (i > 0) total += conv(m, n, 1) + bn(n);
    total += 2 * (conv(n, n, 3) + bn(n));
  }
  const Index dec[4][2] = {{64, 64}, {128, 64}, {256, 128}, {512, 256}};
  for (const auto& d : dec) {
    const Index m = d[0], n = d[1];
    total += conv(m, m / 4, 1) + bn(m / 4) + conv(m / 4, m / 4, 3) + bn(m / 4) + conv(m / 4, n, 1) + bn(n);
  }
  total += conv(64, 32, 3) + bn(32) + conv(32, 32, 3) + bn(32) + conv(32, classes, 2) + classes;
  return total;
}

}  // namespace

TEST_CASE("block shapes") {
  const Graph g = build_linknet(small_config(12, 64));
  const auto shapes = infer_shapes(g, {1, 3, 64, 64});
  CHECK(block_output(g, shapes, "initial") == Shape{1, 64, 16, 16});
  CHECK(block_output(g, shapes, "enc1") == Shape{1, 64, 16, 16});
  CHECK(block_output(g, shapes, "enc2") == Shape{1, 128, 8, 8});
  CHECK(block_output(g, shapes, "enc3") == Shape{1, 256, 4, 4});
  CHECK(block_output(g, shapes, "enc4") == Shape{1, 512, 2, 2});
  CHECK(block_output(g, shapes, "dec4") == Shape{1, 256, 4, 4});
  CHECK(block_output(g, shapes, "dec1") == Shape{1, 64, 16, 16});
  CHECK(shapes.back() == Shape{1, 12, 64, 64});
}

TEST_CASE("block parameter counts") {
  const Graph g = build_linknet(small_config(12, 64));
  CHECK(block_params(g, "initial") == 9536);
  CHECK(3 * 64 * 49 == 9408);
  const Index enc2 = (64 * 128 * 9 + 256) + (128 * 128 * 9 + 256) + (64 * 128 + 256) + 2 * (128 * 128 * 9 + 256);
  CHECK(block_params(g, "enc2") == enc2);
  CHECK(enc2 == 525568);
  CHECK(block_params(g, "final.full_conv2") == 32 * 12 * 4 + 12);
  Index enc = 0, dec = 0;
  for (int i = 1; i <= 4; ++i) {
    enc += block_params(g, "enc" + std::to_string(i));
    dec += block_params(g, "dec" + std::to_string(i));
  }
  CHECK(dec < enc);
  CHECK(count_params(g) == recipe_count(12));
  CHECK(count_params(build_linknet(small_config(20, 64))) == recipe_count(20));
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(build_linknet(small_config(12, 60)), ShapeError);
  LinkConfig c = small_config(12, 64);
  c.height = 66;
  CHECK_THROWS_AS(build_linknet(c), ShapeError);
  c = small_config(12, 64);
  c.decoder_widths[3] = {512, 128};
  CHECK_THROWS_AS(build_linknet(c), ShapeError);
  c = small_config(12, 64);
  c.encoder_widths[0] = {64, 66};
  c.encoder_widths[1] = {66, 128};
  c.decoder_widths[0] = {66, 64};
  c.decoder_widths[1] = {128, 66};
  CHECK_THROWS_AS(build_linknet(c), ShapeError);
}

TEST_CASE("standalone block builders") {
  GraphBuilder b(64);
  const NodeId e2 = build_encoder_block(b, 2, b.input(), 64, 128, true);
  const Graph g = std::move(b).finish(e2);
  CHECK(infer_shapes(g, {1, 64, 16, 16}).back() == Shape{1, 128, 8, 8});

  GraphBuilder b1(64);
  const Graph g1 = std::move(b1).finish(build_encoder_block(b1, 1, b1.input(), 64, 64, false));
  CHECK(infer_shapes(g1, {1, 64, 16, 16}).back() == Shape{1, 64, 16, 16});

  GraphBuilder d4(512);
  const Graph gd4 = std::move(d4).finish(build_decoder_block(d4, 4, d4.input(), 512, 256, true));
  CHECK(infer_shapes(gd4, {1, 512, 2, 2}).back() == Shape{1, 256, 4, 4});

  GraphBuilder d1(64);
  const Graph gd1 = std::move(d1).finish(build_decoder_block(d1, 1, d1.input(), 64, 64, false));
  CHECK(infer_shapes(gd1, {1, 64, 16, 16}).back() == Shape{1, 64, 16, 16});

  GraphBuilder bad(66);
  CHECK_THROWS(build_decoder_block(bad, 1, bad.input(), 66, 64, false));

  GraphBuilder f(64);
  const Graph gf = std::move(f).finish(build_final_block(f, f.input(), 64, 32, 12));
  CHECK(infer_shapes(gf, {1, 64, 16, 16}).back() == Shape{1, 12, 64, 64});
}

TEST_CASE("bypass ablation keeps counts and shapes") {
  const Graph with = build_linknet(small_config(20, 64, true));
  const Graph without = build_linknet(small_config(20, 64, false));
  CHECK(count_params(with) == count_params(without));
  CHECK(with.param_shapes() == without.param_shapes());
  CHECK(infer_shapes(with, {1, 3, 64, 64}).back() == Shape{1, 20, 64, 64});
  CHECK(infer_shapes(without, {1, 3, 64, 64}).back() == Shape{1, 20, 64, 64});

  int adds = 0;
  for (const auto& n : with.nodes()) adds += n.path.find("bypass") != std::string::npos;
  CHECK(adds == 4);
  for (const auto& n : without.nodes()) CHECK(n.path.find("bypass") == std::string::npos);
}

TEST_CASE("graph order is deterministic") {
  const Graph a = build_linknet(small_config(12, 64)), b = build_linknet(small_config(12, 64));
  REQUIRE(a.nodes().size() == b.nodes().size());
  for (std::size_t i = 0; i < a.nodes().size(); ++i) {
    CHECK(a.nodes()[i].path == b.nodes()[i].path);
    CHECK(a.nodes()[i].inputs == b.nodes()[i].inputs);
    for (NodeId in : a.nodes()[i].inputs) CHECK(in < static_cast<NodeId>(i));
  }
  std::set<std::string> paths;
  for (const auto& n : a.nodes()) paths.insert(n.path);
  CHECK(paths.size() == a.nodes().size());
}

TEST_CASE("init_params") {
  const Graph g = build_linknet(small_config(12, 64, true, 4));
  const auto p1 = init_params<float>(g, 3), p2 = init_params<float>(g, 3);
  CHECK(p1 == p2);
  CHECK(p1.size() == g.params().size());
  for (const auto& info : g.params()) {
    REQUIRE(p1.count(info.key) == 1);
    CHECK(p1.at(info.key).shape() == info.shape);
  }
  CHECK(p1.at("initial.conv_bn.gamma") == TensorF({16}, 1.0f));
  CHECK(p1.at("initial.conv_bn.running_var") == TensorF({16}, 1.0f));
  CHECK(p1.at("final.full_conv2.bias") == TensorF({12}, 0.0f));
  CHECK_FALSE(init_params<float>(g, 4) == p1);
  CHECK_NOTHROW(check_params(g, p1));
  auto broken = p1;
  broken.erase("final.conv.weight");
  CHECK_THROWS_AS(check_params(g, broken), ShapeError);
}

TEST_CASE("forward") {
  const Graph g = build_linknet(small_config(12, 64, true, 4));
  const auto params = init_params<float>(g, 5);
  Prng rng(6);
  const auto x = random_uniform<float>(rng, {1, 3, 64, 64}, 0.0, 1.0);
  const auto a = forward(g, params, x, Mode::Infer);
  CHECK(a.logits.shape() == Shape{1, 12, 64, 64});
  CHECK(a.logits.all_finite());
  CHECK(forward(g, params, x, Mode::Infer).logits == a.logits);
  const auto t = forward(g, params, random_uniform<float>(rng, {2, 3, 64, 64}, 0.0, 1.0), Mode::Train);
  CHECK(t.logits.all_finite());
  CHECK(t.running_stats.count("initial.conv_bn.running_mean") == 1);

  CHECK_THROWS_AS(forward(g, params, TensorF({1, 3, 48, 40}), Mode::Infer), ShapeError);
  try {
    forward(g, params, TensorF({1, 4, 64, 64}), Mode::Infer);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("channels") != std::string::npos);
  }
  GraphBuilder b(4);
  const NodeId down = b.conv("probe.down", b.input(), make_conv(4, 4, 3, 2, 1));
  const Graph bad = std::move(b).finish(b.add("probe.sum", down, b.input()));
  try {
    infer_shapes(bad, {1, 4, 8, 8});
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("probe.sum") != std::string::npos);
  }
}

TEST_CASE("severed decoder gives constant logits") {
  const Graph g = build_linknet(small_config(5, 64, true, 4));
  auto params = init_params<float>(g, 8);
  for (auto& [key, t] : params) {
    const bool head = key.rfind("dec", 0) == 0 || key.rfind("final", 0) == 0;
    if (head && key.find("running") == std::string::npos) t.fill(0.0f);
  }
  params.at("final.full_conv2.bias") = TensorF({5}, {0.5f, -1.0f, 2.0f, 0.0f, 3.0f});
  Prng rng(9);
  const auto y = forward(g, params, random_uniform<float>(rng, {1, 3, 64, 64}, 0.0, 1.0), Mode::Infer).logits;
  for (Index c = 0; c < 5; ++c)
    for (Index i = 0; i < 64; ++i)
      for (Index j = 0; j < 64; ++j) REQUIRE(y(0, c, i, j) == params.at("final.full_conv2.bias")[c]);
}

TEST_CASE("backward bookkeeping") {
  const Graph g = build_linknet(small_config(3, 32, true, 16));
  const auto params = init_params<double>(g, 10);
  Prng rng(11);
  const auto fwd = forward(g, params, random_normal<double>(rng, {2, 3, 32, 32}), Mode::Train);
  const auto grads = backward(g, params, fwd.cache, TensorD(fwd.logits.shape()));
  std::set<std::string> expected;
  for (const auto& [k, t] : params)
    if (k.find("running_") == std::string::npos) expected.insert(k);
  std::set<std::string> got;
  for (const auto& [k, t] : grads) {
    got.insert(k);
    CHECK(t.array().abs().maxCoeff() == 0.0);
  }
  CHECK(got == expected);

  const auto infer = forward(g, params, random_normal<double>(rng, {1, 3, 32, 32}), Mode::Infer);
  CHECK_THROWS(backward(g, params, infer.cache, infer.logits));
}

TEST_CASE("end-to-end gradcheck") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = model_gradcheck(seed);
    INFO("seed " << seed << " err " << r.max_rel_error << " analytic " << r.worst_analytic << " numeric "
                 << r.worst_numeric);
    CHECK(r.checked == 20);
    CHECK(r.tolerance == 1e-4);
    CHECK(r.passed);
  }
}
