#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pyra/arch.hpp"
#include "pyra/errors.hpp"
#include "pyra/rng.hpp"
#include "pyra/tensor.hpp"

namespace pyra {

struct Sample {
  Tensor image;  // [C x img x img], constant leaf
  int64_t label = 0;
};

enum class Split { kTrain, kVal, kTest };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  throw config_error("split_name: unhandled split");
}

inline Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw config_error("unknown split '" + name + "' (expected train, val, or test)");
}

// Desk-scale classification task: each class renders a Gaussian blob anchored
// at a class-specific position, with per-sample jitter, amplitude variation,
// and pixel noise. Samples are drawn from one seeded stream in a fixed order
// (train block, then val, then test), so the three splits are disjoint by
// construction and the whole dataset is a pure function of (sizes, seed).
struct SyntheticTask {
  int64_t num_classes = 0;
  std::vector<Sample> train, val, test;

  const std::vector<Sample>& split(Split s) const {
    switch (s) {
      case Split::kTrain: return train;
      case Split::kVal: return val;
      case Split::kTest: return test;
    }
    throw config_error("split: unhandled split");
  }
};

namespace detail {
inline Sample render_blob_sample(const ArchSpec& arch, int64_t label, Rng& rng) {
  const int64_t img = arch.image_size;
  const int64_t k = arch.num_classes;
  // Class anchors march around a circle centered in the image; 4 classes on a
  // 16x16 grid land near the quadrant centers.
  const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(label) / static_cast<double>(k);
  const double radius = static_cast<double>(img) / 4.0;
  const double cx = static_cast<double>(img) / 2.0 + radius * std::cos(angle) + rng.next_gaussian() * 0.8;
  const double cy = static_cast<double>(img) / 2.0 + radius * std::sin(angle) + rng.next_gaussian() * 0.8;
  const double amp = 1.0 + 0.2 * rng.next_gaussian();
  const double sigma = static_cast<double>(img) / 6.0;

  Sample s;
  s.label = label;
  s.image = Tensor::zeros({arch.channels, img, img});
  auto& px = s.image.data();
  for (int64_t c = 0; c < arch.channels; ++c)
    for (int64_t y = 0; y < img; ++y)
      for (int64_t x = 0; x < img; ++x) {
        double dx = static_cast<double>(x) - cx;
        double dy = static_cast<double>(y) - cy;
        double value = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        px[static_cast<size_t>((c * img + y) * img + x)] = value + 0.05 * rng.next_gaussian();
      }
  return s;
}
}  // namespace detail

// Builds the three splits. Labels cycle through the classes so every split is
// balanced to within one sample per class.
inline SyntheticTask make_synthetic_task(const ArchSpec& arch, int64_t train_size, int64_t val_size,
                                         int64_t test_size, uint64_t seed) {
  arch.validate();
  if (train_size < 0 || val_size < 0 || test_size < 0) {
    throw config_error("make_synthetic_task: split sizes must be non-negative");
  }
  SyntheticTask task;
  task.num_classes = arch.num_classes;
  Rng rng(seed, streams::kData);
  int64_t counter = 0;
  auto fill = [&](std::vector<Sample>& out, int64_t n) {
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      out.push_back(detail::render_blob_sample(arch, counter % arch.num_classes, rng));
      ++counter;
    }
  };
  fill(task.train, train_size);
  fill(task.val, val_size);
  fill(task.test, test_size);
  return task;
}

}  // namespace pyra
