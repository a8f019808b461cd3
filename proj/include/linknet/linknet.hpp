#pragma once

// Builder for the bypass-linked encoder/decoder segmentation network:
//
//   initial (conv7x7/2, bn, relu, maxpool3x3/2)
//   enc1..enc4   residual basic blocks, stride 1,2,2,2
//   dec4..dec1   1x1 -> full-conv 3x3 (x2 except dec1) -> 1x1 bottlenecks
//   final        full-conv3x3/2, conv3x3, full-conv2x2/2 -> class logits
//
// With bypass enabled the input of enc_i is added to the output of dec_i.

#include "linknet/graph.hpp"

#include <array>

namespace linknet {

struct WidthPair {
  Index m = 0;  // input feature maps
  Index n = 0;  // output feature maps
  friend bool operator==(const WidthPair&, const WidthPair&) = default;
};

struct LinkConfig {
  Index num_classes = 20;
  Index in_channels = 3;
  Index height = 512;
  Index width = 1024;
  bool bypass = true;
  std::array<WidthPair, 4> encoder_widths{{{64, 64}, {64, 128}, {128, 256}, {256, 512}}};
  std::array<WidthPair, 4> decoder_widths{{{64, 64}, {128, 64}, {256, 128}, {512, 256}}};
  Index final_width = 32;

  /// Default widths divided by `divisor` (1, 2, 4, 8 or 16).
  static LinkConfig scaled(Index divisor);

  /// Throws ShapeError when the config cannot produce a consistent graph.
  void validate() const;
};

// Total encoder downsampling.
inline constexpr Index kLinkNetStride = 32;

NodeId build_initial_block(GraphBuilder& b, NodeId input, Index in_channels, Index out_channels);

NodeId build_encoder_block(GraphBuilder& b, int index, NodeId input, Index m, Index n, bool downsample);

/// `fit_to` is the node whose resolution the upsampled output matches (the
/// bypass partner); it only matters for cost analysis at odd resolutions.
NodeId build_decoder_block(GraphBuilder& b, int index, NodeId input, Index m, Index n, bool upsample,
                           NodeId fit_to = -1);

/// `half_res` and `full_res` are fit targets for the two full-convs.
NodeId build_final_block(GraphBuilder& b, NodeId input, Index in_channels, Index mid_channels,
                         Index num_classes, NodeId half_res = -1, NodeId full_res = -1);

Graph build_linknet(const LinkConfig& config);

}  // namespace linknet
