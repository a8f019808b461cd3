#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "linknet/analyze.hpp"
#include "linknet/linknet.hpp"

#include <sstream>

using namespace linknet;

namespace {

Graph empty_graph() {
  GraphBuilder b(3);
  return std::move(b).finish(b.input());
}

Graph single_conv() {
  GraphBuilder b(3);
  const NodeId c = b.conv("conv", b.input(), make_conv(3, 64, 7, 2, 3));
  return std::move(b).finish(c);
}

LinkConfig full(Index classes, bool bypass = true) {
  LinkConfig c;
  c.num_classes = classes;
  c.bypass = bypass;
  return c;
}

}  // namespace

TEST_CASE("empty graph costs nothing") {
  const Graph g = empty_graph();
  CHECK(count_params(g) == 0);
  CHECK(count_macs(g, {3, 360, 640}) == 0);
  CHECK(model_size_bytes(g, 2) == 0);
}

TEST_CASE("single conv") {
  const Graph g = single_conv();
  CHECK(count_params(g) == 9408);
  CHECK(count_macs(g, {3, 360, 640}) == 541900800);
  CHECK(count_macs(g, {1, 3, 360, 640}) == 541900800);
  CHECK(count_macs(g, {5, 3, 360, 640}) == 541900800);
  const auto r = analyze(g, {3, 360, 640});
  CHECK(r.flops() == 2 * 541900800LL);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].output_shape == Shape{1, 64, 180, 320});
}

TEST_CASE("full model against the reported figures") {
  const Graph g = build_linknet(full(20));
  const auto r = analyze(g, {3, 360, 640});
  CHECK(r.params == 11535764);
  CHECK(r.params >= 10900000);
  CHECK(r.params <= 12100000);
  CHECK(r.macs == 11276124160LL);
  CHECK(std::abs(static_cast<double>(r.flops()) / 21.2e9 - 1.0) <= 0.25);
  CHECK(std::abs(static_cast<double>(r.size_bytes(2)) / 22.0e6 - 1.0) <= 0.10);
  CHECK(model_size_bytes(g, 4) == 2 * model_size_bytes(g, 2));
  CHECK(count_params(build_linknet(full(19))) == 11535635);
}

TEST_CASE("cost invariants") {
  LinkConfig c = full(12);
  c.height = 64;
  c.width = 64;
  const Graph g = build_linknet(c);
  CHECK(count_macs(g, {3, 128, 128}) == 4 * count_macs(g, {3, 64, 64}));

  c.bypass = false;
  const Graph nb = build_linknet(c);
  CHECK(count_params(nb) == count_params(g));
  CHECK(count_macs(nb, {3, 64, 64}) == count_macs(g, {3, 64, 64}));
  CHECK(analyze(nb, {3, 64, 64}).elementwise_ops < analyze(g, {3, 64, 64}).elementwise_ops);

  for (const Shape& in : {Shape{3, 64, 64}, Shape{3, 360, 640}, Shape{3, 512, 1024}}) {
    const auto r = analyze(g, in);
    Index p = 0, m = 0, n = 0, e = 0;
    for (const auto& row : r.rows) {
      p += row.params;
      m += row.macs;
      n += row.norm_ops;
      e += row.elementwise_ops;
    }
    CHECK(p == r.params);
    CHECK(m == r.macs);
    CHECK(n == r.norm_ops);
    CHECK(e == r.elementwise_ops);
    CHECK(r.flops() == 2 * r.macs);
    CHECK(r.params == count_params(g));
  }
}

TEST_CASE("row rules") {
  LinkConfig c = full(12);
  c.height = 64;
  c.width = 64;
  const auto r = analyze(build_linknet(c), {3, 64, 64});
  for (const auto& row : r.rows) {
    const Index elems = element_count(row.output_shape);
    switch (row.kind) {
      case NodeKind::BatchNorm: CHECK(row.norm_ops == 2 * elems); break;
      case NodeKind::Relu:
      case NodeKind::MaxPool:
      case NodeKind::Add: CHECK(row.elementwise_ops == elems); break;
      default: CHECK(row.elementwise_ops == 0);
    }
  }
}

TEST_CASE("odd resolutions are costed by fitting the decoder") {
  const Graph g = build_linknet(full(20));
  CHECK_THROWS_AS(infer_shapes(g, {1, 3, 360, 640}, ShapeMode::Strict), ShapeError);
  const auto r = analyze(g, {3, 360, 640});
  CHECK(r.rows.back().output_shape == Shape{1, 20, 360, 640});
}

TEST_CASE("report output") {
  const auto r = analyze(single_conv(), {3, 360, 640});
  std::ostringstream table, records;
  write_cost_table(table, r);
  write_cost_records(records, r);
  CHECK(table.str().find("541900800") != std::string::npos);
  std::istringstream lines(records.str());
  std::string line;
  int with_tabs = 0;
  while (std::getline(lines, line)) with_tabs += line.find('\t') != std::string::npos;
  CHECK(with_tabs >= 2);
}
