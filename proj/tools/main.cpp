// linknet: command-line front end.
//
//   summary         architecture table
//   cost            parameters, MACs, FLOPs, model size
//   gradcheck       finite-difference checks of every primitive and the model
//   make-toy-data   synthetic segmentation set
//   train / eval / predict
//   bench           inference latency

#include "linknet/analyze.hpp"
#include "linknet/gradcheck.hpp"
#include "linknet/model_io.hpp"
#include "linknet/train.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

using namespace linknet;
namespace fs = std::filesystem;

namespace {

// Validation failures that map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelFlags {
  Index classes = 20;
  Index height = 512;
  Index width = 1024;
  bool no_bypass = false;
  Index divisor = 1;

  CLI::Option* classes_opt = nullptr;

  void add_to(CLI::App& cmd, bool with_resolution = true) {
    classes_opt = cmd.add_option("--classes", classes, "number of classes")->capture_default_str();
    if (with_resolution) {
      cmd.add_option("--height", height, "input height")->capture_default_str();
      cmd.add_option("--width", width, "input width")->capture_default_str();
    }
    cmd.add_flag("--no-bypass", no_bypass, "drop the encoder-to-decoder additions");
    cmd.add_option("--width-divisor", divisor, "divide every layer width by this (1,2,4,8,16)")->capture_default_str();
  }

  LinkConfig config() const {
    LinkConfig c = LinkConfig::scaled(divisor);
    c.num_classes = classes;
    c.height = height;
    c.width = width;
    c.bypass = !no_bypass;
    return c;
  }
};

std::string hw(const Shape& s) { return std::to_string(s[2]) + "x" + std::to_string(s[3]); }

Graph build_checked(const LinkConfig& c) {
  try {
    return build_linknet(c);
  } catch (const ShapeError& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------- summary

int cmd_summary(const ModelFlags& f) {
  const LinkConfig c = f.config();
  const Graph g = build_checked(c);
  const auto shapes = infer_shapes(g, {1, c.in_channels, c.height, c.width});
  std::cout << "input " << c.in_channels << "x" << c.height << "x" << c.width << ", " << c.num_classes
            << " classes, bypass " << (c.bypass ? "on" : "off") << "\n\n";
  std::cout << std::left << std::setw(10) << "block" << std::right << std::setw(8) << "in_ch" << std::setw(8)
            << "out_ch" << std::setw(12) << "in_hw" << std::setw(12) << "out_hw" << std::setw(12) << "params" << "\n";
  for (const auto& b : g.blocks()) {
    const Shape& in = shapes[static_cast<std::size_t>(b.input)];
    const Shape& out = shapes[static_cast<std::size_t>(b.output)];
    Index params = 0;
    for (const auto& p : g.params())
      if (p.trainable() && p.key.rfind(b.name + ".", 0) == 0) params += element_count(p.shape);
    std::cout << std::left << std::setw(10) << b.name << std::right << std::setw(8) << in[1] << std::setw(8) << out[1]
              << std::setw(12) << hw(in) << std::setw(12) << hw(out) << std::setw(12) << params << "\n";
  }
  std::cout << "\ntotal parameters " << count_params(g) << "\n";
  return 0;
}

// ---------------------------------------------------------------- cost

int cmd_cost(const ModelFlags& f, bool table, const std::string& records) {
  if (f.height < kLinkNetStride || f.width < kLinkNetStride)
    throw UsageError("height and width must be at least " + std::to_string(kLinkNetStride));
  // The architecture does not depend on resolution; costs are taken at the
  // requested one.
  LinkConfig c = f.config();
  c.height = kLinkNetStride;
  c.width = kLinkNetStride;
  const Graph g = build_checked(c);
  const CostReport r = analyze(g, {c.in_channels, f.height, f.width});
  if (table) {
    write_cost_table(std::cout, r);
  } else {
    std::cout << std::fixed << std::setprecision(3);
    std::cout << "input        " << c.in_channels << "x" << f.height << "x" << f.width << "\n";
    std::cout << "params       " << r.params << "  (" << r.params / 1e6 << " M)\n";
    std::cout << "macs         " << r.macs << "  (" << r.macs / 1e9 << " G)\n";
    std::cout << "flops        " << r.flops() << "  (" << r.flops() / 1e9 << " G, 2*macs)\n";
    std::cout << "bn ops       " << r.norm_ops << "\n";
    std::cout << "eltwise ops  " << r.elementwise_ops << "\n";
    std::cout << "size fp16    " << r.size_bytes(2) << " B  (" << r.size_bytes(2) / 1e6 << " MB)\n";
    std::cout << "size fp32    " << r.size_bytes(4) << " B  (" << r.size_bytes(4) / 1e6 << " MB)\n";
  }
  if (!records.empty()) {
    std::ofstream os(records);
    if (!os) throw std::runtime_error("cannot write '" + records + "'");
    write_cost_records(os, r);
  }
  return 0;
}

// ---------------------------------------------------------------- gradcheck

void print_report(const GradcheckReport& r) {
  std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(24) << r.name << std::right
            << " max_rel_err=" << std::scientific << std::setprecision(3) << r.max_rel_error << " tol=" << r.tolerance
            << " checked=" << r.checked << std::defaultfloat << "\n";
}

int cmd_gradcheck(std::uint64_t seed, int seeds) {
  bool ok = true;
  for (int k = 0; k < seeds; ++k) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(k);
    std::cout << "seed " << s << "\n";
    for (const auto& r : primitive_gradchecks(s, 1e-5)) {
      print_report(r);
      ok = ok && r.passed;
    }
    const auto m = model_gradcheck(s, 1e-4);
    print_report(m);
    ok = ok && m.passed;
    const auto bad = corrupted_gradient_selftest(s);
    std::cout << (bad.passed ? "FAIL " : "PASS ") << "corrupted gradient detected (max_rel_err=" << std::scientific
              << std::setprecision(3) << bad.max_rel_error << ")" << std::defaultfloat << "\n";
    ok = ok && !bad.passed;
  }
  std::cout << (ok ? "all gradient checks passed" : "gradient checks FAILED") << "\n";
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------- data / train / eval

int cmd_make_toy_data(const std::string& out, Index samples, Index size, Index classes, std::uint64_t seed) {
  if (samples < 1) throw UsageError("--samples must be >= 1");
  if (size < 8) throw UsageError("--size must be >= 8");
  if (classes < 1 || classes > 255) throw UsageError("--classes must be in [1, 255]");
  save_dataset(out, make_toy_dataset(samples, size, size, classes, seed));
  std::cout << "wrote " << samples << " samples to " << out << "\n";
  return 0;
}

std::string number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void print_metrics(const MetricsReport& m) {
  std::cout << std::left << std::setw(8) << "class" << std::right << std::setw(12) << "iou" << std::setw(12) << "iiou"
            << "\n";
  for (Index c = 0; c < m.class_iou.size(); ++c)
    std::cout << std::left << std::setw(8) << c << std::right << std::setw(12) << m.class_iou[c] << std::setw(12)
              << m.class_iiou[c] << "\n";
  std::cout << "mIoU=" << number(m.miou) << " iIoU=" << number(m.iiou) << "\n";
}

struct TrainFlags {
  std::string data, out, log, eval_data;
  ModelFlags model;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  bool has_init_seed = false;
  bool no_class_weights = false;
};

int cmd_train(TrainFlags f) {
  const Dataset data = load_dataset(f.data);
  if (f.model.classes_opt->count() == 0) {
    std::int32_t top = 0;
    for (const auto& s : data)
      for (auto v : s.labels.values())
        if (v != kDefaultIgnoreLabel) top = std::max(top, v);
    f.model.classes = top + 1;
  }
  LinkConfig c = f.model.config();
  c.in_channels = data[0].image.dim(0);
  c.height = data[0].image.dim(1);
  c.width = data[0].image.dim(2);
  const Graph g = build_checked(c);
  f.train.use_class_weights = !f.no_class_weights;
  try {
    f.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::uint64_t init_seed = f.has_init_seed ? f.init_seed : f.train.seed;

  std::ofstream log;
  if (!f.log.empty()) {
    log.open(f.log);
    if (!log) throw std::runtime_error("cannot write '" + f.log + "'");
  }
  auto emit = [&](const std::string& line) {
    std::cout << line << "\n";
    if (log) log << line << "\n";
  };
  emit("# epoch loss miou");
  const auto result = train_loop(g, init_params<float>(g, init_seed), data, f.train, [&](const EpochLog& e) {
    emit(std::to_string(e.epoch) + " " + number(e.loss) + " " + number(e.miou));
  });
  save_checkpoint(f.out, make_checkpoint(c, result.params));

  const Dataset eval_set = f.eval_data.empty() ? Dataset{} : load_dataset(f.eval_data);
  const auto m = evaluate(g, result.params, f.eval_data.empty() ? data : eval_set);
  emit("# eval " + std::string(f.eval_data.empty() ? f.data : f.eval_data));
  emit("eval " + number(m.miou) + " " + number(m.iiou));
  std::cout << "checkpoint written to " << f.out << "\n";
  return 0;
}

int cmd_eval(const std::string& model, const std::string& data_dir, const std::string& predictions,
             const std::string& records) {
  const Dataset data = load_dataset(data_dir);
  MetricsReport m;
  if (!predictions.empty()) {
    std::vector<TensorI> preds;
    for (std::size_t i = 0; i < data.size(); ++i) preds.push_back(load_int_tensor(fs::path(predictions) / sample_file_name(i)));
    Index classes = 0;
    for (const auto& s : data)
      for (auto v : s.labels.values())
        if (v != kDefaultIgnoreLabel) classes = std::max<Index>(classes, v + 1);
    if (!model.empty()) classes = load_model(model).config.num_classes;
    m = score_predictions(data, preds, classes);
  } else {
    if (model.empty()) throw UsageError("eval needs --model or --predictions");
    const auto lm = load_model(model);
    m = evaluate(lm.graph, lm.params, data);
  }
  print_metrics(m);
  if (!records.empty()) {
    std::ofstream os(records);
    if (!os) throw std::runtime_error("cannot write '" + records + "'");
    write_metrics_records(os, m);
  }
  return 0;
}

int cmd_predict(const std::string& model, const std::string& input, const std::string& out) {
  const auto lm = load_model(model);
  TensorF x = load_real_tensor(input);
  if (x.rank() == 3) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4 || x.dim(0) != 1)
    throw UsageError("input must be (C,H,W) or (1,C,H,W), got " + to_string(x.shape()));
  if (x.dim(1) != lm.config.in_channels)
    throw UsageError("input has " + std::to_string(x.dim(1)) + " channels, model expects " +
                     std::to_string(lm.config.in_channels));
  if (x.dim(2) % kLinkNetStride || x.dim(3) % kLinkNetStride)
    throw UsageError("input height and width must be divisible by " + std::to_string(kLinkNetStride) + ", got " +
                     hw(x.shape()));
  const auto fwd = forward(lm.graph, lm.params, x, Mode::Infer);
  const TensorI labels = argmax_classes(fwd.logits).reshaped({x.dim(2), x.dim(3)});
  save_tensor(out, labels);
  std::cout << "wrote " << to_string(labels.shape()) << " label map to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------- bench

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

int cmd_bench(ModelFlags f, std::vector<std::string> sizes, int iters, int warmup) {
  if (iters < 1 || warmup < 0) throw UsageError("--iters must be >= 1 and --warmup >= 0");
  if (sizes.empty()) sizes = {"480x320", "640x360", "1280x720"};
  std::cout << std::left << std::setw(12) << "size" << std::setw(12) << "run_as" << std::right << std::setw(14)
            << "gmacs" << std::setw(12) << "median_ms" << std::setw(10) << "p10_ms" << std::setw(10) << "p90_ms"
            << std::setw(10) << "fps" << "\n";
  for (const auto& s : sizes) {
    Index w = 0, h = 0;
    if (std::sscanf(s.c_str(), "%ldx%ld", &w, &h) != 2 || w < 1 || h < 1)
      throw UsageError("size '" + s + "' is not WxH");
    // Forward needs multiples of the network stride; pad up.
    const Index ph = round_up(h, kLinkNetStride), pw = round_up(w, kLinkNetStride);
    f.height = ph;
    f.width = pw;
    const LinkConfig c = f.config();
    const Graph g = build_checked(c);
    const auto params = init_params<float>(g, 1);
    Prng rng(2);
    const auto x = random_uniform<float>(rng, {1, c.in_channels, ph, pw}, 0.0, 1.0);
    for (int i = 0; i < warmup; ++i) forward(g, params, x, Mode::Infer);
    std::vector<double> ms;
    for (int i = 0; i < iters; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      forward(g, params, x, Mode::Infer);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    auto pct = [&](double q) { return ms[static_cast<std::size_t>(q * static_cast<double>(ms.size() - 1) + 0.5)]; };
    const double median = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
    const double gmacs = static_cast<double>(count_macs(g, {c.in_channels, h, w})) / 1e9;
    std::cout << std::left << std::setw(12) << s << std::setw(12) << (std::to_string(pw) + "x" + std::to_string(ph))
              << std::right << std::fixed << std::setprecision(3) << std::setw(14) << gmacs << std::setprecision(2)
              << std::setw(12) << median << std::setw(10) << pct(0.1) << std::setw(10) << pct(0.9) << std::setw(10)
              << 1000.0 / median << std::defaultfloat << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linknet: bypass-linked encoder/decoder segmentation engine"};
  app.require_subcommand(1);

  ModelFlags summary_flags;
  auto* summary = app.add_subcommand("summary", "per-block architecture table");
  summary_flags.add_to(*summary);

  ModelFlags cost_flags;
  cost_flags.height = 360;
  cost_flags.width = 640;
  bool cost_table = false;
  std::string cost_records;
  auto* cost = app.add_subcommand("cost", "parameter, MAC and size report");
  cost_flags.add_to(*cost);
  cost->add_flag("--table", cost_table, "per-node table");
  cost->add_option("--records", cost_records, "write tab-separated per-node records here");

  std::uint64_t gc_seed = 1;
  int gc_seeds = 1;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck_cmd->add_option("--seed", gc_seed, "first seed")->capture_default_str();
  gradcheck_cmd->add_option("--seeds", gc_seeds, "number of consecutive seeds")->capture_default_str();

  std::string toy_out;
  Index toy_samples = 200, toy_size = 64, toy_classes = 4;
  std::uint64_t toy_seed = 7;
  auto* toy = app.add_subcommand("make-toy-data", "write a synthetic dataset directory");
  toy->add_option("--out", toy_out, "dataset directory")->required();
  toy->add_option("--samples", toy_samples)->capture_default_str();
  toy->add_option("--size", toy_size, "height and width")->capture_default_str();
  toy->add_option("--classes", toy_classes)->capture_default_str();
  toy->add_option("--seed", toy_seed)->capture_default_str();

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "train on a dataset directory");
  train->add_option("--data", tf.data, "dataset directory")->required();
  train->add_option("--out", tf.out, "checkpoint to write")->required();
  train->add_option("--log", tf.log, "training log (epoch loss miou)");
  train->add_option("--eval-data", tf.eval_data, "dataset scored after training (default: the training set)");
  tf.model.add_to(*train, false);
  tf.model.classes_opt->description("number of classes (default: highest label + 1)")->default_str("");
  train->add_option("--lr", tf.train.learning_rate)->capture_default_str();
  train->add_option("--epochs", tf.train.epochs)->capture_default_str();
  train->add_option("--batch", tf.train.batch_size)->capture_default_str();
  train->add_option("--seed", tf.train.seed, "shuffle seed (and init seed unless --init-seed)")->capture_default_str();
  train->add_option("--init-seed", tf.init_seed)->each([&](const std::string&) { tf.has_init_seed = true; });
  train->add_flag("--no-class-weights", tf.no_class_weights);

  std::string eval_model, eval_data, eval_preds, eval_records;
  auto* eval = app.add_subcommand("eval", "score a checkpoint or saved predictions");
  eval->add_option("--model", eval_model, "checkpoint");
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--predictions", eval_preds, "directory of NNNN.ltn label maps to score instead of the model");
  eval->add_option("--records", eval_records, "write tab-separated metrics here");

  std::string pred_model, pred_input, pred_out;
  auto* predict = app.add_subcommand("predict", "write the argmax label map for one image");
  predict->add_option("--model", pred_model)->required();
  predict->add_option("--input", pred_input, "image tensor (C,H,W)")->required();
  predict->add_option("--out", pred_out, "label map tensor to write")->required();

  ModelFlags bench_flags;
  std::vector<std::string> bench_sizes;
  int bench_iters = 20, bench_warmup = 3;
  auto* bench = app.add_subcommand("bench", "inference latency");
  bench_flags.add_to(*bench, false);
  bench->add_option("--size", bench_sizes, "WxH, repeatable (default 480x320 640x360 1280x720)");
  bench->add_option("--iters", bench_iters)->capture_default_str();
  bench->add_option("--warmup", bench_warmup)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*summary) return cmd_summary(summary_flags);
    if (*cost) return cmd_cost(cost_flags, cost_table, cost_records);
    if (*gradcheck_cmd) return cmd_gradcheck(gc_seed, gc_seeds);
    if (*toy) return cmd_make_toy_data(toy_out, toy_samples, toy_size, toy_classes, toy_seed);
    if (*train) return cmd_train(tf);
    if (*eval) return cmd_eval(eval_model, eval_data, eval_preds, eval_records);
    if (*predict) return cmd_predict(pred_model, pred_input, pred_out);
    if (*bench) return cmd_bench(bench_flags, bench_sizes, bench_iters, bench_warmup);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: malformed file: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
