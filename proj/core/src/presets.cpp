// SPDX-License-Identifier: Apache-2.0
#include "segdistill/presets.hpp"

namespace segdistill::zoo {

DecoderConfig halving_decoder_for(const EncoderConfig& encoder, int resolution, int base_width, int classes) {
  return halving_decoder(build_encoder(encoder, resolution), base_width, classes);
}

NetworkConfig toy_config(bool with_decoder) {
  NetworkConfig cfg;
  cfg.resolution = 32;
  cfg.encoder.stem_channels = 8;
  cfg.encoder.stages = {{2, 8, 1, 1}, {2, 16, 1, 2}, {2, 24, 1, 2}};
  cfg.head = {16, 5};
  if (with_decoder) cfg.decoder = halving_decoder_for(cfg.encoder, cfg.resolution, 24, 7);
  return cfg;
}

NetworkConfig paper_config(bool with_decoder) {
  NetworkConfig cfg;
  cfg.resolution = 128;
  cfg.encoder.stem_channels = 32;
  cfg.encoder.stem_stride = 2;
  cfg.encoder.stages = {{1, 16, 1, 1},  {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
                        {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};
  cfg.encoder.last_channels = 1280;
  cfg.head = {128, 67};
  if (with_decoder) cfg.decoder = halving_decoder_for(cfg.encoder, cfg.resolution, 256, 14);
  return cfg;
}

NetworkConfig desk_mobilenet_config(int resolution, int id_classes, bool with_decoder, int seg_classes) {
  NetworkConfig cfg;
  cfg.resolution = resolution;
  cfg.encoder.stem_channels = 16;
  cfg.encoder.stem_stride = 2;
  cfg.encoder.stages = {{1, 16, 1, 1}, {4, 24, 2, 2}, {4, 32, 2, 2}, {4, 64, 2, 2}};
  cfg.encoder.last_channels = 128;
  cfg.head = {64, id_classes};
  if (with_decoder) cfg.decoder = halving_decoder_for(cfg.encoder, resolution, 64, seg_classes);
  return cfg;
}

NetworkConfig desk_plain_config(int resolution, int id_classes) {
  NetworkConfig cfg;
  cfg.resolution = resolution;
  cfg.encoder.kind = EncoderKind::kPlain;
  cfg.encoder.stem_channels = 16;
  cfg.encoder.stem_stride = 2;
  cfg.encoder.stages = {{1, 24, 1, 2}, {1, 32, 1, 2}, {1, 64, 2, 2}};
  cfg.encoder.last_channels = 128;
  cfg.head = {64, id_classes};
  return cfg;
}

}  // namespace segdistill::zoo
