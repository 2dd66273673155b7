// SPDX-License-Identifier: Apache-2.0
// Named network configurations.
#pragma once

#include "segdistill/model.hpp"

namespace segdistill::zoo {

/// Decoder widths halving from `base_width`, derived by building the encoder.
DecoderConfig halving_decoder_for(const EncoderConfig& encoder, int resolution, int base_width, int classes);

/// Stem 8, stages t=2: (8,1,1), (16,1,2), (24,1,2); 32x32 input; head 16 -> 5.
/// The decoder (base width 24, 7 classes) is optional.
NetworkConfig toy_config(bool with_decoder);

/// The MobileNetV2 stage table at 128x128 with a 1280-wide last conv, head
/// 128 -> 67 and a 14-class decoder whose widths halve from 256.
NetworkConfig paper_config(bool with_decoder);

/// Small inverted-residual encoder used by the desk benchmark.
NetworkConfig desk_mobilenet_config(int resolution, int id_classes, bool with_decoder, int seg_classes = 7);

/// Plain 3x3 convolution encoder with a parameter count close to the desk
/// inverted-residual one.
NetworkConfig desk_plain_config(int resolution, int id_classes);

}  // namespace segdistill::zoo
