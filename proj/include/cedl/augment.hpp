#pragma once

// Stochastic image augmentation for [0,1]-valued CHW batches. Every policy is
// a pure function of (batch, seed).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "cedl/error.hpp"
#include "cedl/nn/tensor.hpp"

namespace cedl {

struct AugmentPolicy {
  std::string id = "none";  // none | flip-crop | randaugment
  int num_ops = 1;          // RandAugment N
  int magnitude = 9;        // RandAugment M on the 0..30 scale
};

inline bool is_known_policy(const std::string& id) {
  return id == "none" || id == "flip-crop" || id == "randaugment";
}

namespace detail {

/// View of one CHW image stored in a batch row.
class ImageView {
 public:
  ImageView(double* data, nn::ImageShape shape) : data_(data), shape_(shape) {}
  double& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * shape_.height + y) * shape_.width + x]; }
  const nn::ImageShape& shape() const { return shape_; }
  double* data() { return data_; }

 private:
  double* data_;
  nn::ImageShape shape_;
};

inline void horizontal_flip(ImageView img) {
  const auto& s = img.shape();
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, s.width - 1 - x));
    }
  }
}

/// Zero-pads by `pad` pixels and crops back to the original size at (dy, dx).
inline void pad_crop(ImageView img, int pad, int dy, int dx) {
  const auto& s = img.shape();
  std::vector<double> src(img.data(), img.data() + s.size());
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        const long sy = static_cast<long>(y) + dy - pad;
        const long sx = static_cast<long>(x) + dx - pad;
        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(s.height) && sx < static_cast<long>(s.width);
        img.at(c, y, x) = inside ? src[(c * s.height + static_cast<std::size_t>(sy)) * s.width + static_cast<std::size_t>(sx)] : 0.0;
      }
    }
  }
}

/// Inverse-maps every output pixel through the 2x3 affine `m` (about the
/// image centre), nearest-neighbour sampling, zero fill.
inline void affine(ImageView img, const std::array<double, 6>& m) {
  const auto& s = img.shape();
  std::vector<double> src(img.data(), img.data() + s.size());
  const double cy = (static_cast<double>(s.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(s.width) - 1.0) / 2.0;
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      const double u = static_cast<double>(x) - cx;
      const double v = static_cast<double>(y) - cy;
      const long sx = std::lround(m[0] * u + m[1] * v + m[2] + cx);
      const long sy = std::lround(m[3] * u + m[4] * v + m[5] + cy);
      const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(s.height) && sx < static_cast<long>(s.width);
      for (std::size_t c = 0; c < s.channels; ++c) {
        img.at(c, y, x) = inside ? src[(c * s.height + static_cast<std::size_t>(sy)) * s.width + static_cast<std::size_t>(sx)] : 0.0;
      }
    }
  }
}

inline void blend_with(ImageView img, const std::vector<double>& other, double factor) {
  for (std::size_t i = 0; i < img.shape().size(); ++i) {
    img.data()[i] = std::clamp(other[i] + factor * (img.data()[i] - other[i]), 0.0, 1.0);
  }
}

inline std::vector<double> grayscale(ImageView img) {
  const auto& s = img.shape();
  std::vector<double> out(s.size());
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      double g = 0.0;
      if (s.channels == 3) {
        g = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
      } else {
        for (std::size_t c = 0; c < s.channels; ++c) g += img.at(c, y, x) / static_cast<double>(s.channels);
      }
      for (std::size_t c = 0; c < s.channels; ++c) out[(c * s.height + y) * s.width + x] = g;
    }
  }
  return out;
}

using ImageOp = std::function<void(ImageView, double level, bool negate)>;

/// The RandAugment operation table. `level` is magnitude / 30.
inline const std::vector<ImageOp>& randaugment_ops() {
  static const std::vector<ImageOp> ops{
      // identity
      [](ImageView, double, bool) {},
      // autocontrast
      [](ImageView img, double, bool) {
        const auto& s = img.shape();
        const std::size_t plane = s.height * s.width;
        for (std::size_t c = 0; c < s.channels; ++c) {
          double* p = img.data() + c * plane;
          const auto [lo, hi] = std::minmax_element(p, p + plane);
          const double l = *lo, h = *hi;
          if (h - l < 1e-12) continue;
          for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - l) / (h - l);
        }
      },
      // equalize (per-channel histogram over 256 bins)
      [](ImageView img, double, bool) {
        const auto& s = img.shape();
        const std::size_t plane = s.height * s.width;
        for (std::size_t c = 0; c < s.channels; ++c) {
          double* p = img.data() + c * plane;
          std::array<std::size_t, 256> hist{};
          for (std::size_t i = 0; i < plane; ++i) ++hist[static_cast<std::size_t>(std::clamp(p[i], 0.0, 1.0) * 255.0)];
          std::array<double, 256> cdf{};
          std::size_t run = 0;
          for (std::size_t b = 0; b < 256; ++b) {
            run += hist[b];
            cdf[b] = static_cast<double>(run) / static_cast<double>(plane);
          }
          for (std::size_t i = 0; i < plane; ++i) p[i] = cdf[static_cast<std::size_t>(std::clamp(p[i], 0.0, 1.0) * 255.0)];
        }
      },
      // rotate up to 30 degrees
      [](ImageView img, double level, bool neg) {
        const double a = (neg ? -1.0 : 1.0) * level * 30.0 * std::numbers::pi / 180.0;
        affine(img, {std::cos(a), std::sin(a), 0.0, -std::sin(a), std::cos(a), 0.0});
      },
      // solarize: invert pixels above a threshold that falls with magnitude
      [](ImageView img, double level, bool) {
        const double threshold = 1.0 - level;
        for (std::size_t i = 0; i < img.shape().size(); ++i) {
          if (img.data()[i] >= threshold) img.data()[i] = 1.0 - img.data()[i];
        }
      },
      // color (saturation)
      [](ImageView img, double level, bool neg) { blend_with(img, grayscale(img), 1.0 + (neg ? -0.9 : 0.9) * level); },
      // posterize: keep 8 - 4 * level bits
      [](ImageView img, double level, bool) {
        const int bits = std::max(1, static_cast<int>(std::lround(8.0 - 4.0 * level)));
        const double steps = std::pow(2.0, bits);
        for (std::size_t i = 0; i < img.shape().size(); ++i) {
          img.data()[i] = std::floor(std::clamp(img.data()[i], 0.0, 1.0) * (steps - 1.0) + 0.5) / (steps - 1.0);
        }
      },
      // contrast
      [](ImageView img, double level, bool neg) {
        const auto gray = grayscale(img);
        double mean = 0.0;
        for (double g : gray) mean += g;
        mean /= static_cast<double>(gray.size());
        blend_with(img, std::vector<double>(gray.size(), mean), 1.0 + (neg ? -0.9 : 0.9) * level);
      },
      // brightness
      [](ImageView img, double level, bool neg) {
        blend_with(img, std::vector<double>(img.shape().size(), 0.0), 1.0 + (neg ? -0.9 : 0.9) * level);
      },
      // sharpness: blend with a 3x3 smoothed copy
      [](ImageView img, double level, bool neg) {
        const auto& s = img.shape();
        std::vector<double> smooth(img.data(), img.data() + s.size());
        for (std::size_t c = 0; c < s.channels; ++c) {
          for (std::size_t y = 1; y + 1 < s.height; ++y) {
            for (std::size_t x = 1; x + 1 < s.width; ++x) {
              double acc = 4.0 * img.at(c, y, x);
              for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                  if (dy == 0 && dx == 0) continue;
                  acc += img.at(c, static_cast<std::size_t>(static_cast<long>(y) + dy),
                                static_cast<std::size_t>(static_cast<long>(x) + dx));
                }
              }
              smooth[(c * s.height + y) * s.width + x] = acc / 12.0;
            }
          }
        }
        blend_with(img, smooth, 1.0 + (neg ? -0.9 : 0.9) * level);
      },
      // shear x
      [](ImageView img, double level, bool neg) { affine(img, {1.0, (neg ? -0.3 : 0.3) * level, 0.0, 0.0, 1.0, 0.0}); },
      // shear y
      [](ImageView img, double level, bool neg) { affine(img, {1.0, 0.0, 0.0, (neg ? -0.3 : 0.3) * level, 1.0, 0.0}); },
      // translate x by up to 45% of width
      [](ImageView img, double level, bool neg) {
        affine(img, {1.0, 0.0, (neg ? -0.45 : 0.45) * level * static_cast<double>(img.shape().width), 0.0, 1.0, 0.0});
      },
      // translate y
      [](ImageView img, double level, bool neg) {
        affine(img, {1.0, 0.0, 0.0, 0.0, 1.0, (neg ? -0.45 : 0.45) * level * static_cast<double>(img.shape().height)});
      },
  };
  return ops;
}

}  // namespace detail

/// Applies `policy` to every row of `batch`. Rows are images of `shape`;
/// only "none" is accepted for non-image inputs.
inline nn::Matrix augment(const nn::Matrix& batch, const nn::ImageShape& shape, const AugmentPolicy& policy,
                          std::uint64_t seed) {
  if (!is_known_policy(policy.id)) throw InvalidInput("unknown augmentation policy '" + policy.id + "'");
  if (policy.id == "none") return batch;
  require(shape.size() > 0 && static_cast<std::size_t>(batch.cols()) == shape.size(),
          "augment: policy '" + policy.id + "' needs image-shaped rows");
  nn::Matrix out = batch;
  std::mt19937_64 rng(seed);
  if (policy.id == "flip-crop") {
    std::bernoulli_distribution flip(0.5);
    std::uniform_int_distribution<int> shift(0, 8);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      detail::ImageView img(out.row(r).data(), shape);
      if (flip(rng)) detail::horizontal_flip(img);
      detail::pad_crop(img, 4, shift(rng), shift(rng));
    }
    return out;
  }
  require(policy.num_ops >= 0 && policy.magnitude >= 0 && policy.magnitude <= 30,
          "augment: RandAugment needs N >= 0 and M in [0, 30]");
  const auto& ops = detail::randaugment_ops();
  std::uniform_int_distribution<std::size_t> pick(0, ops.size() - 1);
  std::bernoulli_distribution sign(0.5);
  const double level = policy.magnitude / 30.0;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    detail::ImageView img(out.row(r).data(), shape);
    for (int k = 0; k < policy.num_ops; ++k) {
      const auto op = pick(rng);
      ops[op](img, level, sign(rng));
    }
  }
  return out;
}

}  // namespace cedl
