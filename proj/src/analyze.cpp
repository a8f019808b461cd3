#include "linknet/analyze.hpp"

#include <iomanip>
#include <ostream>

namespace linknet {

namespace {

Shape per_frame(const Shape& input_shape) {
  if (input_shape.size() == 3) return {1, input_shape[0], input_shape[1], input_shape[2]};
  if (input_shape.size() == 4) return {1, input_shape[1], input_shape[2], input_shape[3]};
  throw ShapeError("cost analysis needs a (C,H,W) or (N,C,H,W) input shape, got " + to_string(input_shape));
}

Index spatial(const Shape& s) { return s[2] * s[3]; }

}  // namespace

Index count_params(const Graph& g) {
  Index total = 0;
  for (const ParamInfo& p : g.params())
    if (p.trainable()) total += element_count(p.shape);
  return total;
}

CostReport analyze(const Graph& g, const Shape& input_shape) {
  CostReport rep;
  rep.input_shape = per_frame(input_shape);
  const std::vector<Shape> shapes = infer_shapes(g, rep.input_shape, ShapeMode::Fit);

  std::vector<Index> node_params(g.nodes().size(), 0);
  for (const ParamInfo& p : g.params())
    if (p.trainable()) node_params[static_cast<std::size_t>(p.node)] += element_count(p.shape);

  for (std::size_t i = 1; i < g.nodes().size(); ++i) {
    const Node& n = g.nodes()[i];
    CostRow row;
    row.path = n.path;
    row.kind = n.kind;
    row.params = node_params[i];
    row.output_shape = shapes[i];
    const Shape& out = shapes[i];
    switch (n.kind) {
      case NodeKind::Conv:
      case NodeKind::FullConv:
        row.macs = n.conv.out_channels * n.conv.in_channels * n.conv.kernel.h * n.conv.kernel.w * spatial(out);
        break;
      case NodeKind::BatchNorm:
        row.norm_ops = 2 * out[1] * spatial(out);
        break;
      case NodeKind::Relu:
      case NodeKind::MaxPool:
      case NodeKind::Add:
        row.elementwise_ops = out[1] * spatial(out);
        break;
      case NodeKind::Input:
        break;
    }
    rep.params += row.params;
    rep.macs += row.macs;
    rep.norm_ops += row.norm_ops;
    rep.elementwise_ops += row.elementwise_ops;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

Index count_macs(const Graph& g, const Shape& input_shape) { return analyze(g, input_shape).macs; }

Index model_size_bytes(const Graph& g, Index bytes_per_param) {
  if (bytes_per_param < 1) throw std::invalid_argument("bytes_per_param must be >= 1");
  return count_params(g) * bytes_per_param;
}

void write_cost_table(std::ostream& os, const CostReport& r) {
  os << std::left << std::setw(30) << "node" << std::setw(11) << "kind" << std::right << std::setw(12) << "params"
     << std::setw(16) << "macs" << std::setw(14) << "other_ops" << "  output\n";
  for (const CostRow& row : r.rows) {
    os << std::left << std::setw(30) << row.path << std::setw(11) << kind_name(row.kind) << std::right
       << std::setw(12) << row.params << std::setw(16) << row.macs << std::setw(14)
       << row.norm_ops + row.elementwise_ops << "  " << to_string(row.output_shape) << '\n';
  }
  const auto old_flags = os.flags();
  const auto old_precision = os.precision();
  os << std::fixed << std::setprecision(3);
  os << "input            " << to_string(r.input_shape) << '\n';
  os << "params           " << r.params << "  (" << static_cast<double>(r.params) / 1e6 << " M)\n";
  os << "macs             " << r.macs << "  (" << static_cast<double>(r.macs) / 1e9 << " G)\n";
  os << "flops (2*macs)   " << r.flops() << "  (" << static_cast<double>(r.flops()) / 1e9 << " G)\n";
  os << "batchnorm ops    " << r.norm_ops << '\n';
  os << "elementwise ops  " << r.elementwise_ops << '\n';
  os << "size fp16        " << r.size_bytes(2) << " B  (" << static_cast<double>(r.size_bytes(2)) / 1e6 << " MB)\n";
  os << "size fp32        " << r.size_bytes(4) << " B  (" << static_cast<double>(r.size_bytes(4)) / 1e6 << " MB)\n";
  os.flags(old_flags);
  os.precision(old_precision);
}

void write_cost_records(std::ostream& os, const CostReport& r) {
  os << "node\tkind\tparams\tmacs\tnorm_ops\telementwise_ops\toutput_shape\n";
  for (const CostRow& row : r.rows)
    os << row.path << '\t' << kind_name(row.kind) << '\t' << row.params << '\t' << row.macs << '\t' << row.norm_ops
       << '\t' << row.elementwise_ops << '\t' << to_string(row.output_shape) << '\n';
  os << "total\t-\t" << r.params << '\t' << r.macs << '\t' << r.norm_ops << '\t' << r.elementwise_ops << '\t'
     << to_string(r.rows.empty() ? r.input_shape : r.rows.back().output_shape) << '\n';
  os << "flops\t" << r.flops() << '\n';
  os << "size_fp16_bytes\t" << r.size_bytes(2) << '\n';
}

}  // namespace linknet
