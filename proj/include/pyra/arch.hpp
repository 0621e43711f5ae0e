#pragma once

#include <cstdint>
#include <string>

#include "pyra/errors.hpp"

namespace pyra {

// Static description of a ViT backbone.
struct ArchSpec {
  std::string name = "custom";
  int64_t layers = 0;       // transformer blocks
  int64_t width = 0;        // embedding dimension D
  int64_t heads = 0;        // attention heads
  int64_t mlp_ratio = 4;    // FFN expansion factor
  int64_t patch_size = 0;   // square patch side
  int64_t image_size = 0;   // square input side
  int64_t channels = 0;     // input channels
  int64_t num_classes = 0;  // classifier outputs
  bool use_cls = true;      // classify from CLS token vs mean pooling

  int64_t grid() const { return image_size / patch_size; }
  int64_t patch_tokens() const { return grid() * grid(); }  // T (CLS excluded)
  int64_t seq_len() const { return patch_tokens() + (use_cls ? 1 : 0); }
  int64_t head_dim() const { return width / heads; }
  int64_t patch_dim() const { return channels * patch_size * patch_size; }

  void validate() const {
    auto positive = [](int64_t v, const char* what) {
      if (v <= 0) throw config_error(std::string("arch: ") + what + " must be positive, got " + std::to_string(v));
    };
    positive(layers, "layers");
    positive(width, "width");
    positive(heads, "heads");
    positive(mlp_ratio, "mlp_ratio");
    positive(patch_size, "patch_size");
    positive(image_size, "image_size");
    positive(channels, "channels");
    positive(num_classes, "num_classes");
    if (width % heads != 0) {
      throw config_error("arch: width " + std::to_string(width) + " not divisible by heads " +
                         std::to_string(heads));
    }
    if (image_size % patch_size != 0) {
      throw config_error("arch: image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                         std::to_string(patch_size));
    }
  }
};

inline ArchSpec vit_b16() {
  ArchSpec a;
  a.name = "vit_b";
  a.layers = 12;
  a.width = 768;
  a.heads = 12;
  a.patch_size = 16;
  a.image_size = 224;
  a.channels = 3;
  a.num_classes = 1000;
  return a;
}

inline ArchSpec vit_l16() {
  ArchSpec a;
  a.name = "vit_l";
  a.layers = 24;
  a.width = 1024;
  a.heads = 16;
  a.patch_size = 16;
  a.image_size = 224;
  a.channels = 3;
  a.num_classes = 1000;
  return a;
}

// Desk-scale preset used by the test and training harnesses.
inline ArchSpec tiny_test() {
  ArchSpec a;
  a.name = "tiny";
  a.layers = 4;
  a.width = 32;
  a.heads = 4;
  a.patch_size = 4;
  a.image_size = 16;
  a.channels = 1;
  a.num_classes = 4;
  return a;
}

inline ArchSpec arch_from_name(const std::string& name) {
  if (name == "vit_b") return vit_b16();
  if (name == "vit_l") return vit_l16();
  if (name == "tiny") return tiny_test();
  throw config_error("unknown arch preset '" + name + "' (expected vit_b, vit_l, or tiny)");
}

}  // namespace pyra
