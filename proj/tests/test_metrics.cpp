#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "linknet/metrics.hpp"

#include <cmath>
#include <map>
#include <set>
#include <sstream>

using namespace linknet;

namespace {

using Labels = std::vector<std::int32_t>;

ConfusionMatrix cm_of(Index classes, const Labels& t, const Labels& p) {
  ConfusionMatrix cm(classes);
  cm.accumulate(t, p);
  return cm;
}

// IoU from explicit pixel index sets.
std::vector<double> set_iou(Index classes, const Labels& t, const Labels& p) {
  std::vector<double> out;
  for (Index c = 0; c < classes; ++c) {
    std::set<std::size_t> truth, pred;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == kDefaultIgnoreLabel) continue;
      if (t[i] == c) truth.insert(i);
      if (p[i] == c) pred.insert(i);
    }
    std::set<std::size_t> uni = truth, inter;
    uni.insert(pred.begin(), pred.end());
    for (auto i : truth)
      if (pred.count(i)) inter.insert(i);
    out.push_back(uni.empty() ? std::nan("") : static_cast<double>(inter.size()) / static_cast<double>(uni.size()));
  }
  return out;
}

Labels random_map(Prng& rng, std::size_t n, Index classes, bool with_ignore) {
  Labels v(n);
  for (auto& x : v)
    x = with_ignore && rng.uniform() < 0.1 ? kDefaultIgnoreLabel : static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes)));
  return v;
}

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

TEST_CASE("accumulate") {
  const auto cm = cm_of(2, {0, 0, 1, 1}, {0, 1, 1, 1});
  CountMatrix expected(2, 2);
  expected << 1, 1, 0, 2;
  CHECK(cm.counts() == expected);

  const auto diag = cm_of(3, {0, 1, 2, 2}, {0, 1, 2, 2});
  CHECK(diag.counts().trace() == diag.total());

  ConfusionMatrix ign(2);
  ign.accumulate(Labels{255, 255}, Labels{0, 1});
  CHECK(ign.total() == 0);

  ConfusionMatrix bad(2);
  CHECK_THROWS(bad.accumulate(Labels{0, 2}, Labels{0, 1}));
  CHECK_THROWS(bad.accumulate(Labels{0, 1}, Labels{0, 5}));
  CHECK_THROWS(bad.accumulate(Labels{0, 1}, Labels{0}));
}

TEST_CASE("class IoU examples") {
  const auto iou = class_iou(cm_of(2, {0, 0, 1, 1}, {0, 1, 1, 1}));
  CHECK(iou[0] == doctest::Approx(0.5));
  CHECK(iou[1] == doctest::Approx(2.0 / 3.0));
  CHECK(mean_iou(cm_of(2, {0, 0, 1, 1}, {0, 1, 1, 1})) == doctest::Approx(7.0 / 12.0));

  const auto perfect = class_iou(cm_of(3, {0, 1, 2}, {0, 1, 2}));
  CHECK(perfect.isOnes());
  const auto disjoint = class_iou(cm_of(2, {0, 0}, {1, 1}));
  CHECK(disjoint[0] == 0.0);
  // Class 2 never appears: undefined and excluded from the mean.
  const auto absent = cm_of(3, {0, 1}, {0, 1});
  CHECK(std::isnan(class_iou(absent)[2]));
  CHECK(mean_iou(absent) == 1.0);
}

TEST_CASE("class IoU matches a set oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Prng rng(seed);
    const Index classes = 2 + static_cast<Index>(rng.below(5));
    const auto t = random_map(rng, 64, classes, true), p = random_map(rng, 64, classes, false);
    const auto got = class_iou(cm_of(classes, t, p));
    const auto want = set_iou(classes, t, p);
    for (Index c = 0; c < classes; ++c) REQUIRE(same(got[c], want[static_cast<std::size_t>(c)]));
    for (Index c = 0; c < classes; ++c)
      if (!std::isnan(got[c])) CHECK((got[c] >= 0.0 && got[c] <= 1.0));
  }
}

TEST_CASE("mean IoU is invariant under class relabelling") {
  Prng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const Index classes = 4;
    const auto t = random_map(rng, 64, classes, true), p = random_map(rng, 64, classes, false);
    std::vector<std::int32_t> perm{0, 1, 2, 3};
    rng.shuffle(perm);
    auto relabel = [&](Labels v) {
      for (auto& x : v)
        if (x != kDefaultIgnoreLabel) x = perm[static_cast<std::size_t>(x)];
      return v;
    };
    CHECK(mean_iou(cm_of(classes, t, p)) == doctest::Approx(mean_iou(cm_of(classes, relabel(t), relabel(p)))));
  }
}

TEST_CASE("accumulation order and merge") {
  Prng rng(5);
  std::vector<std::pair<Labels, Labels>> images;
  for (int i = 0; i < 8; ++i) images.emplace_back(random_map(rng, 64, 3, true), random_map(rng, 64, 3, false));
  ConfusionMatrix forward_order(3), reverse_order(3), a(3), b(3);
  for (std::size_t i = 0; i < images.size(); ++i) {
    forward_order.accumulate(images[i].first, images[i].second);
    reverse_order.accumulate(images[images.size() - 1 - i].first, images[images.size() - 1 - i].second);
    (i % 2 ? a : b).accumulate(images[i].first, images[i].second);
  }
  CHECK(forward_order.counts() == reverse_order.counts());
  a.merge(b);
  CHECK(a.counts() == forward_order.counts());
}

TEST_CASE("iIoU examples") {
  // Instances of sizes 1 and 3 in class 1; prediction covers the 3-pixel one.
  const Labels labels{1, 1, 1, 1, 0, 0};
  const Labels inst{1, 2, 2, 2, 0, 0};
  const Labels pred{0, 1, 1, 1, 0, 0};
  InstanceSizeTable sizes(2);
  sizes.add(labels, inst);
  const auto avg = sizes.averages();
  CHECK(avg[1] == doctest::Approx(2.0));
  CHECK(std::isnan(avg[0]));
  const auto r = iiou(labels, inst, pred, avg);
  CHECK(r[1] == doctest::Approx(0.5));
  CHECK(class_iou(cm_of(2, labels, pred))[1] == doctest::Approx(0.75));
  // Class 0 has no instances and falls back to IoU (2 TP, 1 FP).
  CHECK(r[0] == doctest::Approx(2.0 / 3.0));

  const Labels single_inst{1, 1, 1, 1, 0, 0};
  InstanceSizeTable one(2);
  one.add(labels, single_inst);
  const auto r1 = iiou(labels, single_inst, pred, one.averages());
  CHECK(r1[1] == doctest::Approx(class_iou(cm_of(2, labels, pred))[1]));

  const Labels nothing{0, 0, 0, 0, 0, 0};
  CHECK(iiou(labels, inst, nothing, avg)[1] == 0.0);

  const Labels mixed{1, 1, 0, 0, 0, 0}, mixed_inst{1, 1, 1, 0, 0, 0};
  CHECK_THROWS_AS(iiou(mixed, mixed_inst, pred, avg), std::invalid_argument);
}

TEST_CASE("iIoU matches a weighted-count oracle") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Prng rng(seed);
    const Index classes = 3;
    const std::size_t n = 64;
    std::vector<Labels> ls, is, ps;
    for (int img = 0; img < 3; ++img) {
      Labels l(n), in(n);
      // Instances are runs of equal label; id 0 for class 0.
      std::int32_t next = 1, cls = 0, id = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (i == 0 || rng.uniform() < 0.15) {
          cls = static_cast<std::int32_t>(rng.below(3));
          id = cls == 0 ? 0 : next++;
        }
        l[i] = cls;
        in[i] = id;
      }
      ls.push_back(l);
      is.push_back(in);
      ps.push_back(random_map(rng, n, classes, false));
    }
    // Oracle: average sizes, then weighted counts.
    std::vector<std::map<std::int32_t, double>> inst_size(3);
    std::vector<double> total(3, 0.0), count(3, 0.0);
    for (std::size_t img = 0; img < 3; ++img) {
      for (std::size_t i = 0; i < n; ++i)
        if (is[img][i] != 0) inst_size[img][is[img][i]] += 1;
      for (const auto& [id, sz] : inst_size[img]) {
        std::int32_t c = -1;
        for (std::size_t i = 0; i < n; ++i)
          if (is[img][i] == id) c = ls[img][i];
        total[static_cast<std::size_t>(c)] += sz;
        count[static_cast<std::size_t>(c)] += 1;
      }
    }
    Eigen::VectorXd avg(3);
    for (int c = 0; c < 3; ++c) avg[c] = count[static_cast<std::size_t>(c)] > 0 ? total[static_cast<std::size_t>(c)] / count[static_cast<std::size_t>(c)] : std::nan("");
    std::vector<double> itp(3), ifn(3), fp(3);
    for (std::size_t img = 0; img < 3; ++img)
      for (std::size_t i = 0; i < n; ++i) {
        const auto t = static_cast<std::size_t>(ls[img][i]), p = static_cast<std::size_t>(ps[img][i]);
        const double w = is[img][i] ? avg[static_cast<Index>(t)] / inst_size[img][is[img][i]] : 1.0;
        if (t == p) itp[t] += w;
        else {
          ifn[t] += w;
          fp[p] += 1.0;
        }
      }

    InstanceSizeTable table(classes);
    for (std::size_t img = 0; img < 3; ++img) table.add(ls[img], is[img]);
    InstanceIouAccumulator acc(table.averages());
    for (std::size_t img = 0; img < 3; ++img) acc.add(ls[img], is[img], ps[img]);
    const auto got = acc.per_class();
    ConfusionMatrix cm(classes);
    for (std::size_t img = 0; img < 3; ++img) cm.accumulate(ls[img], ps[img]);
    const auto plain = class_iou(cm);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto ci = static_cast<Index>(c);
      if (count[c] == 0) {
        CHECK(same(got[ci], plain[ci]));
        continue;
      }
      const double denom = itp[c] + fp[c] + ifn[c];
      CHECK(got[ci] == doctest::Approx(denom > 0 ? itp[c] / denom : 0.0).epsilon(1e-12));
      CHECK((got[ci] >= 0.0 && got[ci] <= 1.0));
    }
  }
}

TEST_CASE("class weights") {
  Eigen::VectorXd p(5);
  p << 0.0, 1.0, 0.1, 0.5, 0.9;
  const auto w = class_weights(p);
  // High-precision reference values of 1/ln(1.02 + p).
  CHECK(std::abs(w[0] - 50.4983497918439) <= 1e-9);
  CHECK(std::abs(w[1] - 1.42227782600192) <= 1e-9);
  CHECK(std::abs(w[2] - 8.82389129716839) <= 1e-9);
  CHECK(std::abs(w[3] - 2.38828592644768) <= 1e-9);
  CHECK(std::abs(w[4] - 1.53297775618793) <= 1e-9);
  CHECK(w[2] > w[3]);
  CHECK(w[3] > w[4]);

  Eigen::VectorXd bad(2);
  bad << 0.5, 1.5;
  CHECK_THROWS_AS(class_weights(bad), std::invalid_argument);
  bad << -0.1, 0.5;
  CHECK_THROWS_AS(class_weights(bad), std::invalid_argument);
}

TEST_CASE("pixel frequencies") {
  PixelFrequencyCounter one(1);
  one.add(Labels{0, 0, 0});
  CHECK(one.frequencies()[0] == 1.0);

  PixelFrequencyCounter two(2);
  two.add(Labels{0, 1, 1, 1, 255, 255});
  CHECK(two.frequencies()[0] == 0.25);
  CHECK(two.frequencies()[1] == 0.75);
}

TEST_CASE("metrics report") {
  MetricsReport r;
  r.class_iou = Eigen::VectorXd::Constant(2, 0.5);
  r.class_iiou = Eigen::VectorXd::Constant(2, 0.25);
  r.miou = 0.5;
  r.iiou = 0.25;
  std::ostringstream text, records;
  write_metrics(text, r);
  write_metrics_records(records, r);
  CHECK(text.str().find("mIoU=0.5") != std::string::npos);
  CHECK(text.str().find("iIoU=0.25") != std::string::npos);
  CHECK(records.str().find("summary\tmiou\t0.5\tiiou\t0.25") != std::string::npos);
}
