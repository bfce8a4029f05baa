#pragma once

// Minimal reverse-mode layers. Each layer caches what it needs during
// forward() and returns the input gradient from backward(); parameter
// gradients accumulate until zero_grad(). infer() is the cache-free,
// eval-mode path used on frozen models.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cedl/error.hpp"
#include "cedl/nn/tensor.hpp"

namespace cedl::nn {

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Matrix forward(const Matrix& x, Mode mode) = 0;
  virtual Matrix backward(const Matrix& grad_out) = 0;
  virtual Matrix infer(const Matrix& x) const = 0;

  virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
  /// Non-trainable state that must survive checkpointing (running statistics).
  virtual void collect_buffers(std::vector<Matrix*>& /*out*/) {}

  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::size_t input_size() const = 0;
  virtual std::size_t output_size() const = 0;
};

inline void check_width(const Matrix& x, std::size_t expected, const char* who) {
  if (static_cast<std::size_t>(x.cols()) != expected) {
    throw InvalidInput(std::string(who) + ": expected " + std::to_string(expected) +
                       " input features, got " + std::to_string(x.cols()));
  }
}

/// y = x W^T + b, with one weight row per output unit.
class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out) {
    weight_.value = Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    bias_.value = Matrix::Zero(1, static_cast<Eigen::Index>(out));
    bias_.decay = false;
    weight_.zero_grad();
    bias_.zero_grad();
  }

  Linear(std::size_t in, std::size_t out, Rng& rng) : Linear(in, out) { he_normal(weight_.value, in, rng); }

  Matrix forward(const Matrix& x, Mode /*mode*/) override {
    input_ = x;
    return infer(x);
  }

  Matrix infer(const Matrix& x) const override {
    check_width(x, input_size(), "Linear");
    Matrix y = x * weight_.value.transpose();
    y.rowwise() += bias_.value.row(0);
    return y;
  }

  Matrix backward(const Matrix& grad_out) override {
    weight_.grad.noalias() += grad_out.transpose() * input_;
    bias_.grad.row(0) += grad_out.colwise().sum();
    return grad_out * weight_.value;
  }

  void collect_parameters(std::vector<Parameter*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  std::size_t input_size() const override { return static_cast<std::size_t>(weight_.value.cols()); }
  std::size_t output_size() const override { return static_cast<std::size_t>(weight_.value.rows()); }

  Parameter& weight() { return weight_; }
  const Parameter& weight() const { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& bias() const { return bias_; }

  /// Appends zero-initialised output rows; existing rows are untouched.
  void append_outputs(std::size_t count) {
    const auto old_rows = weight_.value.rows();
    const auto rows = old_rows + static_cast<Eigen::Index>(count);
    Matrix w = Matrix::Zero(rows, weight_.value.cols());
    w.topRows(old_rows) = weight_.value;
    Matrix b = Matrix::Zero(1, rows);
    b.leftCols(old_rows) = bias_.value;
    weight_.value = std::move(w);
    bias_.value = std::move(b);
    weight_.zero_grad();
    bias_.zero_grad();
  }

 private:
  Parameter weight_;
  Parameter bias_;
  Matrix input_;
};

class ReLU final : public Layer {
 public:
  explicit ReLU(std::size_t width) : width_(width) {}

  Matrix forward(const Matrix& x, Mode /*mode*/) override {
    mask_ = (x.array() > 0.0).cast<double>().matrix();
    return infer(x);
  }
  Matrix infer(const Matrix& x) const override { return x.cwiseMax(0.0); }
  Matrix backward(const Matrix& grad_out) override { return grad_out.cwiseProduct(mask_); }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
  std::size_t input_size() const override { return width_; }
  std::size_t output_size() const override { return width_; }

 private:
  std::size_t width_;
  Matrix mask_;
};

/// 2-D convolution without bias, via im2col on each sample.
class Conv2d final : public Layer {
 public:
  Conv2d(ImageShape in, std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t pad,
         Rng& rng)
      : in_(in), kernel_(kernel), stride_(stride), pad_(pad) {
    require(in.height + 2 * pad >= kernel && in.width + 2 * pad >= kernel, "Conv2d: kernel larger than input");
    out_ = {out_channels, (in.height + 2 * pad - kernel) / stride + 1, (in.width + 2 * pad - kernel) / stride + 1};
    const auto fan_in = in.channels * kernel * kernel;
    weight_.value = Matrix(static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(fan_in));
    he_normal(weight_.value, fan_in, rng);
    weight_.zero_grad();
  }

  Matrix forward(const Matrix& x, Mode /*mode*/) override {
    input_ = x;
    return infer(x);
  }

  Matrix infer(const Matrix& x) const override {
    check_width(x, in_.size(), "Conv2d");
    Matrix y(x.rows(), static_cast<Eigen::Index>(out_.size()));
    Matrix cols;
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      im2col(x.row(n).data(), cols);
      Eigen::Map<Matrix> out(y.row(n).data(), static_cast<Eigen::Index>(out_.channels),
                             static_cast<Eigen::Index>(out_.height * out_.width));
      out.noalias() = weight_.value * cols;
    }
    return y;
  }

  Matrix backward(const Matrix& grad_out) override {
    Matrix dx = Matrix::Zero(input_.rows(), input_.cols());
    Matrix cols;
    Matrix dcols;
    for (Eigen::Index n = 0; n < input_.rows(); ++n) {
      im2col(input_.row(n).data(), cols);
      Eigen::Map<const Matrix> g(grad_out.row(n).data(), static_cast<Eigen::Index>(out_.channels),
                                 static_cast<Eigen::Index>(out_.height * out_.width));
      weight_.grad.noalias() += g * cols.transpose();
      dcols.noalias() = weight_.value.transpose() * g;
      col2im(dcols, dx.row(n).data());
    }
    return dx;
  }

  void collect_parameters(std::vector<Parameter*>& out) override { out.push_back(&weight_); }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::size_t input_size() const override { return in_.size(); }
  std::size_t output_size() const override { return out_.size(); }
  ImageShape output_shape() const { return out_; }

 private:
  void im2col(const double* img, Matrix& cols) const {
    const auto k = kernel_;
    cols.resize(static_cast<Eigen::Index>(in_.channels * k * k), static_cast<Eigen::Index>(out_.height * out_.width));
    for (std::size_t c = 0; c < in_.channels; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto row = static_cast<Eigen::Index>((c * k + ky) * k + kx);
          for (std::size_t oy = 0; oy < out_.height; ++oy) {
            const auto iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
            for (std::size_t ox = 0; ox < out_.width; ++ox) {
              const auto ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(in_.height) &&
                                  ix < static_cast<long>(in_.width);
              cols(row, static_cast<Eigen::Index>(oy * out_.width + ox)) =
                  inside ? img[(c * in_.height + static_cast<std::size_t>(iy)) * in_.width + static_cast<std::size_t>(ix)]
                         : 0.0;
            }
          }
        }
      }
    }
  }

  void col2im(const Matrix& cols, double* img) const {
    const auto k = kernel_;
    for (std::size_t c = 0; c < in_.channels; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto row = static_cast<Eigen::Index>((c * k + ky) * k + kx);
          for (std::size_t oy = 0; oy < out_.height; ++oy) {
            const auto iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
            if (iy < 0 || iy >= static_cast<long>(in_.height)) continue;
            for (std::size_t ox = 0; ox < out_.width; ++ox) {
              const auto ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
              if (ix < 0 || ix >= static_cast<long>(in_.width)) continue;
              img[(c * in_.height + static_cast<std::size_t>(iy)) * in_.width + static_cast<std::size_t>(ix)] +=
                  cols(row, static_cast<Eigen::Index>(oy * out_.width + ox));
            }
          }
        }
      }
    }
  }

  ImageShape in_;
  ImageShape out_;
  std::size_t kernel_;
  std::size_t stride_;
  std::size_t pad_;
  Parameter weight_;
  Matrix input_;
};

/// Per-channel batch normalisation over (N, H, W).
class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(ImageShape shape, double momentum = 0.1, double eps = 1e-5)
      : shape_(shape), momentum_(momentum), eps_(eps) {
    const auto c = static_cast<Eigen::Index>(shape.channels);
    gamma_.value = Matrix::Ones(1, c);
    beta_.value = Matrix::Zero(1, c);
    gamma_.zero_grad();
    beta_.zero_grad();
    running_mean_ = Matrix::Zero(1, c);
    running_var_ = Matrix::Ones(1, c);
  }

  Matrix forward(const Matrix& x, Mode mode) override {
    check_width(x, shape_.size(), "BatchNorm2d");
    mode_ = mode;
    if (mode == Mode::kEval) {
      input_ = x;
      return infer(x);
    }

    const auto n = x.rows();
    const auto hw = static_cast<Eigen::Index>(shape_.height * shape_.width);
    const double count = static_cast<double>(n * hw);
    const auto channels = static_cast<Eigen::Index>(shape_.channels);
    inv_std_.resize(1, channels);
    xhat_.resize(x.rows(), x.cols());
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < channels; ++c) {
      const auto block = x.middleCols(c * hw, hw);
      const double mean = block.sum() / count;
      const double var = (block.array() - mean).square().sum() / count;
      const double inv_std = 1.0 / std::sqrt(var + eps_);
      inv_std_(0, c) = inv_std;
      xhat_.middleCols(c * hw, hw) = (block.array() - mean) * inv_std;
      y.middleCols(c * hw, hw) = (xhat_.middleCols(c * hw, hw).array() * gamma_.value(0, c) + beta_.value(0, c));
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      running_mean_(0, c) = (1.0 - momentum_) * running_mean_(0, c) + momentum_ * mean;
      running_var_(0, c) = (1.0 - momentum_) * running_var_(0, c) + momentum_ * unbiased;
    }
    return y;
  }

  Matrix infer(const Matrix& x) const override {
    check_width(x, shape_.size(), "BatchNorm2d");
    const auto hw = static_cast<Eigen::Index>(shape_.height * shape_.width);
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(shape_.channels); ++c) {
      const double scale = gamma_.value(0, c) / std::sqrt(running_var_(0, c) + eps_);
      const double shift = beta_.value(0, c) - running_mean_(0, c) * scale;
      y.middleCols(c * hw, hw) = (x.middleCols(c * hw, hw).array() * scale + shift);
    }
    return y;
  }

  Matrix backward(const Matrix& grad_out) override {
    const auto hw = static_cast<Eigen::Index>(shape_.height * shape_.width);
    Matrix dx(grad_out.rows(), grad_out.cols());
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(shape_.channels); ++c) {
      const auto g = grad_out.middleCols(c * hw, hw);
      if (mode_ == Mode::kEval) {
        const double inv_std = 1.0 / std::sqrt(running_var_(0, c) + eps_);
        const auto xh = (input_.middleCols(c * hw, hw).array() - running_mean_(0, c)) * inv_std;
        gamma_.grad(0, c) += (g.array() * xh).sum();
        beta_.grad(0, c) += g.sum();
        dx.middleCols(c * hw, hw) = g * (gamma_.value(0, c) * inv_std);
        continue;
      }
      const auto xh = xhat_.middleCols(c * hw, hw);
      const double count = static_cast<double>(g.size());
      const double sum_g = g.sum();
      const double sum_gx = (g.array() * xh.array()).sum();
      gamma_.grad(0, c) += sum_gx;
      beta_.grad(0, c) += sum_g;
      const double k = gamma_.value(0, c) * inv_std_(0, c) / count;
      dx.middleCols(c * hw, hw) = k * (count * g.array() - sum_g - xh.array() * sum_gx);
    }
    return dx;
  }

  void collect_parameters(std::vector<Parameter*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<Matrix*>& out) override {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  std::size_t input_size() const override { return shape_.size(); }
  std::size_t output_size() const override { return shape_.size(); }

 private:
  ImageShape shape_;
  double momentum_;
  double eps_;
  Parameter gamma_;
  Parameter beta_;
  Matrix running_mean_;
  Matrix running_var_;
  Mode mode_ = Mode::kTrain;
  Matrix input_;
  Matrix xhat_;
  Matrix inv_std_;
};

class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(ImageShape shape) : shape_(shape) {}

  Matrix forward(const Matrix& x, Mode /*mode*/) override { return infer(x); }

  Matrix infer(const Matrix& x) const override {
    check_width(x, shape_.size(), "GlobalAvgPool");
    const auto hw = static_cast<Eigen::Index>(shape_.height * shape_.width);
    Matrix y(x.rows(), static_cast<Eigen::Index>(shape_.channels));
    for (Eigen::Index c = 0; c < y.cols(); ++c) y.col(c) = x.middleCols(c * hw, hw).rowwise().mean();
    return y;
  }

  Matrix backward(const Matrix& grad_out) override {
    const auto hw = static_cast<Eigen::Index>(shape_.height * shape_.width);
    Matrix dx(grad_out.rows(), static_cast<Eigen::Index>(shape_.size()));
    for (Eigen::Index c = 0; c < grad_out.cols(); ++c) {
      dx.middleCols(c * hw, hw) = (grad_out.col(c) / static_cast<double>(hw)).replicate(1, hw);
    }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  std::size_t input_size() const override { return shape_.size(); }
  std::size_t output_size() const override { return shape_.channels; }

 private:
  ImageShape shape_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other) {
    for (const auto& layer : other.layers_) layers_.push_back(layer->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) *this = Sequential(other);
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer> layer) {
    if (!layers_.empty() && layers_.back()->output_size() != layer->input_size()) {
      throw InvalidInput("Sequential: layer width mismatch");
    }
    layers_.push_back(std::move(layer));
  }

  Matrix forward(const Matrix& x, Mode mode) override {
    Matrix h = x;
    for (auto& layer : layers_) h = layer->forward(h, mode);
    return h;
  }
  Matrix infer(const Matrix& x) const override {
    Matrix h = x;
    for (const auto& layer : layers_) h = layer->infer(h);
    return h;
  }
  Matrix backward(const Matrix& grad_out) override {
    Matrix g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void collect_parameters(std::vector<Parameter*>& out) override {
    for (auto& layer : layers_) layer->collect_parameters(out);
  }
  void collect_buffers(std::vector<Matrix*>& out) override {
    for (auto& layer : layers_) layer->collect_buffers(out);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }
  std::size_t input_size() const override { return layers_.empty() ? 0 : layers_.front()->input_size(); }
  std::size_t output_size() const override { return layers_.empty() ? 0 : layers_.back()->output_size(); }
  std::size_t depth() const noexcept { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// CIFAR-style residual block: two 3x3 convolutions with batch norm and a
/// parameter-free shortcut (strided subsampling plus zero channel padding
/// when the shape changes).
class BasicBlock final : public Layer {
 public:
  BasicBlock(ImageShape in, std::size_t out_channels, std::size_t stride, Rng& rng) : in_(in) {
    auto conv1 = std::make_unique<Conv2d>(in, out_channels, 3, stride, 1, rng);
    const auto mid = conv1->output_shape();
    out_ = mid;
    main_.add(std::move(conv1));
    main_.add(std::make_unique<BatchNorm2d>(mid));
    main_.add(std::make_unique<ReLU>(mid.size()));
    main_.add(std::make_unique<Conv2d>(mid, out_channels, 3, 1, 1, rng));
    main_.add(std::make_unique<BatchNorm2d>(mid));
    stride_ = stride;
    require(out_channels >= in.channels && (out_channels - in.channels) % 2 == 0,
            "BasicBlock: channel growth must be even");
  }

  Matrix forward(const Matrix& x, Mode mode) override {
    Matrix sum = main_.forward(x, mode) + shortcut(x);
    mask_ = (sum.array() > 0.0).cast<double>().matrix();
    return sum.cwiseMax(0.0);
  }
  Matrix infer(const Matrix& x) const override { return (main_.infer(x) + shortcut(x)).cwiseMax(0.0); }

  Matrix backward(const Matrix& grad_out) override {
    const Matrix g = grad_out.cwiseProduct(mask_);
    Matrix dx = main_.backward(g);
    shortcut_backward(g, dx);
    return dx;
  }

  void collect_parameters(std::vector<Parameter*>& out) override { main_.collect_parameters(out); }
  void collect_buffers(std::vector<Matrix*>& out) override { main_.collect_buffers(out); }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BasicBlock>(*this); }
  std::size_t input_size() const override { return in_.size(); }
  std::size_t output_size() const override { return out_.size(); }
  ImageShape output_shape() const { return out_; }

 private:
  std::size_t pad_front() const { return (out_.channels - in_.channels) / 2; }

  Matrix shortcut(const Matrix& x) const {
    if (stride_ == 1 && in_ == out_) return x;
    Matrix s = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(out_.size()));
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      for (std::size_t c = 0; c < in_.channels; ++c) {
        for (std::size_t y = 0; y < out_.height; ++y) {
          for (std::size_t xx = 0; xx < out_.width; ++xx) {
            s(n, static_cast<Eigen::Index>(((c + pad_front()) * out_.height + y) * out_.width + xx)) =
                x(n, static_cast<Eigen::Index>((c * in_.height + y * stride_) * in_.width + xx * stride_));
          }
        }
      }
    }
    return s;
  }

  void shortcut_backward(const Matrix& g, Matrix& dx) const {
    if (stride_ == 1 && in_ == out_) {
      dx += g;
      return;
    }
    for (Eigen::Index n = 0; n < g.rows(); ++n) {
      for (std::size_t c = 0; c < in_.channels; ++c) {
        for (std::size_t y = 0; y < out_.height; ++y) {
          for (std::size_t xx = 0; xx < out_.width; ++xx) {
            dx(n, static_cast<Eigen::Index>((c * in_.height + y * stride_) * in_.width + xx * stride_)) +=
                g(n, static_cast<Eigen::Index>(((c + pad_front()) * out_.height + y) * out_.width + xx));
          }
        }
      }
    }
  }

  ImageShape in_;
  ImageShape out_;
  std::size_t stride_ = 1;
  Sequential main_;
  Matrix mask_;
};

}  // namespace cedl::nn
