#pragma once

// Static cost accounting over a Graph. Counts are per frame: the batch
// dimension of the input shape is ignored.
//
//   conv / full-conv   MACs = Cout*Cin*kh*kw*Hout*Wout
//   batchnorm          2*C*H*W ops (reported apart from MACs)
//   relu/maxpool/add   1 op per output element (reported apart from MACs)

#include "linknet/graph.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace linknet {

struct CostRow {
  std::string path;
  NodeKind kind = NodeKind::Input;
  Index params = 0;
  Index macs = 0;
  Index norm_ops = 0;
  Index elementwise_ops = 0;
  Shape output_shape;
};

struct CostReport {
  Shape input_shape;
  std::vector<CostRow> rows;
  Index params = 0;
  Index macs = 0;
  Index norm_ops = 0;
  Index elementwise_ops = 0;

  Index flops() const { return 2 * macs; }
  Index size_bytes(Index bytes_per_param) const { return params * bytes_per_param; }
};

/// Trainable parameters (kernels, biases, gamma, beta).
Index count_params(const Graph& g);

/// Multiply-accumulates of all conv and full-conv nodes for one frame of
/// `input_shape` ((C,H,W) or (N,C,H,W)).
Index count_macs(const Graph& g, const Shape& input_shape);

Index model_size_bytes(const Graph& g, Index bytes_per_param);

/// Full per-node report. Shapes are inferred in ShapeMode::Fit so
/// resolutions that are not multiples of the network stride can be costed.
CostReport analyze(const Graph& g, const Shape& input_shape);

void write_cost_table(std::ostream& os, const CostReport& report);
void write_cost_records(std::ostream& os, const CostReport& report);

}  // namespace linknet
