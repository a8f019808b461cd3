#include "linknet/linknet.hpp"

namespace linknet {

LinkConfig LinkConfig::scaled(Index divisor) {
  if (divisor < 1 || 64 % divisor != 0) throw ShapeError("width divisor must divide 64");
  LinkConfig c;
  for (auto& w : c.encoder_widths) w = {w.m / divisor, w.n / divisor};
  for (auto& w : c.decoder_widths) w = {w.m / divisor, w.n / divisor};
  c.final_width = std::max<Index>(1, c.final_width / divisor);
  return c;
}

void LinkConfig::validate() const {
  if (num_classes < 1) throw ShapeError("num_classes must be >= 1");
  if (in_channels < 1) throw ShapeError("in_channels must be >= 1");
  if (height < 1 || width < 1 || height % kLinkNetStride != 0 || width % kLinkNetStride != 0)
    throw ShapeError("input height and width must be divisible by " + std::to_string(kLinkNetStride) + ", got " +
                     std::to_string(height) + "x" + std::to_string(width));
  if (final_width < 1) throw ShapeError("final_width must be >= 1");
  for (std::size_t i = 0; i < 4; ++i) {
    const WidthPair& e = encoder_widths[i];
    const WidthPair& d = decoder_widths[i];
    const std::string blk = std::to_string(i + 1);
    if (e.m < 1 || e.n < 1 || d.m < 1 || d.n < 1) throw ShapeError("block " + blk + ": widths must be >= 1");
    if (i > 0 && e.m != encoder_widths[i - 1].n)
      throw ShapeError("encoder block " + blk + " input width must equal previous block output");
    if (d.m != e.n) throw ShapeError("decoder block " + blk + " input width must equal encoder block output");
    if (d.n != e.m) throw ShapeError("decoder block " + blk + " output width must equal encoder block input");
    if (d.m % 4 != 0) throw ShapeError("decoder block " + blk + " input width must be divisible by 4");
  }
}

NodeId build_initial_block(GraphBuilder& b, NodeId input, Index in_channels, Index out_channels) {
  NodeId x = b.conv_bn("initial.conv", input, make_conv(in_channels, out_channels, 7, 2, 3), true);
  x = b.maxpool("initial.pool", x, PoolSpec{});
  b.mark_block("initial", input, x);
  return x;
}

NodeId build_encoder_block(GraphBuilder& b, int index, NodeId input, Index m, Index n, bool downsample) {
  const std::string p = "enc" + std::to_string(index);
  const Index s = downsample ? 2 : 1;

  NodeId x = b.conv_bn(p + ".unit1.conv1", input, make_conv(m, n, 3, s, 1), true);
  x = b.conv_bn(p + ".unit1.conv2", x, make_conv(n, n, 3, 1, 1), false);
  NodeId shortcut = input;
  if (m != n || s != 1) shortcut = b.conv_bn(p + ".unit1.shortcut", input, make_conv(m, n, 1, s, 0), false);
  x = b.add(p + ".unit1.add", x, shortcut);
  const NodeId unit1 = b.relu(p + ".unit1.relu", x);

  x = b.conv_bn(p + ".unit2.conv1", unit1, make_conv(n, n, 3, 1, 1), true);
  x = b.conv_bn(p + ".unit2.conv2", x, make_conv(n, n, 3, 1, 1), false);
  x = b.add(p + ".unit2.add", x, unit1);
  x = b.relu(p + ".unit2.relu", x);
  b.mark_block(p, input, x);
  return x;
}

NodeId build_decoder_block(GraphBuilder& b, int index, NodeId input, Index m, Index n, bool upsample,
                           NodeId fit_to) {
  if (m % 4 != 0) throw ShapeError("decoder block input width " + std::to_string(m) + " not divisible by 4");
  const std::string p = "dec" + std::to_string(index);
  const Index q = m / 4;
  NodeId x = b.conv_bn(p + ".conv1", input, make_conv(m, q, 1, 1, 0), true);
  const ConvSpec up = upsample ? make_full_conv(q, q, 3, 2, 1, 1) : make_full_conv(q, q, 3, 1, 1, 0);
  x = b.full_conv_bn(p + ".full_conv", x, up, true, upsample ? fit_to : -1);
  x = b.conv_bn(p + ".conv2", x, make_conv(q, n, 1, 1, 0), true);
  b.mark_block(p, input, x);
  return x;
}

NodeId build_final_block(GraphBuilder& b, NodeId input, Index in_channels, Index mid_channels,
                         Index num_classes, NodeId half_res, NodeId full_res) {
  NodeId x = b.full_conv_bn("final.full_conv1", input, make_full_conv(in_channels, mid_channels, 3, 2, 1, 1),
                            true, half_res);
  x = b.conv_bn("final.conv", x, make_conv(mid_channels, mid_channels, 3, 1, 1), true);
  x = b.full_conv("final.full_conv2", x, make_full_conv(mid_channels, num_classes, 2, 2, 0, 0, true), full_res);
  b.mark_block("final", input, x);
  return x;
}

Graph build_linknet(const LinkConfig& config) {
  config.validate();
  GraphBuilder b(config.in_channels);
  b.set_spatial_multiple(kLinkNetStride);

  const NodeId init = build_initial_block(b, b.input(), config.in_channels, config.encoder_widths[0].m);
  const NodeId half_res = b.input() + 1;  // initial.conv output

  std::array<NodeId, 5> enc_out{};
  enc_out[0] = init;
  for (int i = 1; i <= 4; ++i) {
    const WidthPair& w = config.encoder_widths[static_cast<std::size_t>(i - 1)];
    enc_out[static_cast<std::size_t>(i)] = build_encoder_block(b, i, enc_out[static_cast<std::size_t>(i - 1)], w.m,
                                                               w.n, i > 1);
  }

  NodeId x = enc_out[4];
  for (int i = 4; i >= 1; --i) {
    const WidthPair& w = config.decoder_widths[static_cast<std::size_t>(i - 1)];
    const NodeId skip = enc_out[static_cast<std::size_t>(i - 1)];  // input of enc_i
    x = build_decoder_block(b, i, x, w.m, w.n, i > 1, skip);
    if (config.bypass) x = b.add("dec" + std::to_string(i) + ".bypass", x, skip);
  }

  const NodeId out = build_final_block(b, x, config.decoder_widths[0].n, config.final_width, config.num_classes,
                                       half_res, b.input());
  Graph g = std::move(b).finish(out);
  // Bypass operands are checked here, once, at the configured resolution.
  infer_shapes(g, {1, config.in_channels, config.height, config.width}, ShapeMode::Strict);
  return g;
}

}  // namespace linknet
