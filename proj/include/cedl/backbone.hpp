#pragma once

// Evidential classifier: a feature extractor followed by a linear head with
// one weight row per seen class. The head grows as tasks arrive; weight
// aligning and bias correction act on its rows.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "cedl/error.hpp"
#include "cedl/nn/layers.hpp"

namespace cedl {

using nn::Matrix;
using nn::Mode;

/// Everything needed to rebuild a backbone's layer graph.
struct ArchSpec {
  std::string id;
  std::size_t input_size = 0;
  nn::ImageShape image{};              // zero for non-image inputs
  std::vector<std::size_t> hidden{};   // MLP widths

  bool operator==(const ArchSpec&) const = default;
};

class EvidentialClassifier {
 public:
  EvidentialClassifier(ArchSpec arch, nn::Sequential features)
      : arch_(std::move(arch)), features_(std::move(features)), head_(features_.output_size(), 0) {}

  const ArchSpec& arch() const noexcept { return arch_; }
  const std::string& architecture_id() const noexcept { return arch_.id; }
  std::size_t input_size() const { return features_.input_size(); }
  std::size_t feature_size() const { return features_.output_size(); }
  std::size_t num_classes() const noexcept { return seen_classes_.size(); }
  const std::vector<int>& seen_classes() const noexcept { return seen_classes_; }

  /// Head row of `class_id`; throws for unseen classes.
  std::size_t index_of(int class_id) const {
    const auto it = std::find(seen_classes_.begin(), seen_classes_.end(), class_id);
    if (it == seen_classes_.end()) throw InvalidInput("class " + std::to_string(class_id) + " is not in the head");
    return static_cast<std::size_t>(it - seen_classes_.begin());
  }

  /// Training-path forward; caches activations for backward().
  Matrix forward(const Matrix& x, Mode mode) {
    check_input(x);
    return head_.forward(features_.forward(x, mode), mode);
  }

  /// Gradient of the loss w.r.t. the inputs; accumulates parameter gradients.
  Matrix backward(const Matrix& grad_logits) { return features_.backward(head_.backward(grad_logits)); }

  /// Raw logits in eval mode, without touching any cached state.
  Matrix infer(const Matrix& x) const {
    check_input(x);
    return head_.infer(features_.infer(x));
  }

  /// Penultimate-layer features in eval mode.
  Matrix features(const Matrix& x) const {
    check_input(x);
    return features_.infer(x);
  }

  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> out;
    features_.collect_parameters(out);
    head_.collect_parameters(out);
    return out;
  }

  std::vector<Matrix*> buffers() {
    std::vector<Matrix*> out;
    features_.collect_buffers(out);
    return out;
  }

  nn::Linear& head() noexcept { return head_; }
  const nn::Linear& head() const noexcept { return head_; }

  void append_classes(std::span<const int> ids) {
    head_.append_outputs(ids.size());
    seen_classes_.insert(seen_classes_.end(), ids.begin(), ids.end());
  }

 private:
  void check_input(const Matrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != input_size()) {
      throw InvalidInput("classifier input has " + std::to_string(x.cols()) + " features, expected " +
                         std::to_string(input_size()));
    }
  }

  ArchSpec arch_;
  nn::Sequential features_;
  nn::Linear head_;
  std::vector<int> seen_classes_;
};

// --- registry ---------------------------------------------------------------

namespace detail {

inline nn::Sequential build_mlp(const ArchSpec& arch, nn::Rng& rng) {
  require(arch.input_size > 0, "mlp-toy: input_size must be positive");
  require(!arch.hidden.empty(), "mlp-toy: need at least one hidden layer");
  nn::Sequential net;
  std::size_t width = arch.input_size;
  for (std::size_t h : arch.hidden) {
    require(h > 0, "mlp-toy: hidden widths must be positive");
    net.add(std::make_unique<nn::Linear>(width, h, rng));
    net.add(std::make_unique<nn::ReLU>(h));
    width = h;
  }
  return net;
}

/// ResNet-32 for 32x32 inputs: 3 stages of 5 basic blocks (16/32/64 channels).
inline nn::Sequential build_resnet32(const ArchSpec& arch, nn::Rng& rng) {
  const nn::ImageShape in = arch.image.size() ? arch.image : nn::ImageShape{3, 32, 32};
  nn::Sequential net;
  auto stem = std::make_unique<nn::Conv2d>(in, 16, 3, 1, 1, rng);
  nn::ImageShape shape = stem->output_shape();
  net.add(std::move(stem));
  net.add(std::make_unique<nn::BatchNorm2d>(shape));
  net.add(std::make_unique<nn::ReLU>(shape.size()));
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t channels = 16u << stage;
    for (std::size_t block = 0; block < 5; ++block) {
      const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
      auto b = std::make_unique<nn::BasicBlock>(shape, channels, stride, rng);
      shape = b->output_shape();
      net.add(std::move(b));
    }
  }
  net.add(std::make_unique<nn::GlobalAvgPool>(shape));
  return net;
}

using BackboneFactory = std::function<nn::Sequential(const ArchSpec&, nn::Rng&)>;

inline const std::map<std::string, BackboneFactory>& backbone_registry() {
  static const std::map<std::string, BackboneFactory> registry{
      {"mlp-toy", build_mlp},
      {"resnet32", build_resnet32},
  };
  return registry;
}

}  // namespace detail

inline std::vector<std::string> backbone_ids() {
  std::vector<std::string> ids;
  for (const auto& [id, _] : detail::backbone_registry()) ids.push_back(id);
  return ids;
}

/// Builds a classifier with an empty head.
inline EvidentialClassifier make_classifier(ArchSpec arch, std::uint64_t seed) {
  const auto& registry = detail::backbone_registry();
  const auto it = registry.find(arch.id);
  if (it == registry.end()) throw InvalidInput("unknown backbone '" + arch.id + "'");
  if (arch.id == "resnet32") {
    if (arch.image.size() == 0) arch.image = {3, 32, 32};
    arch.input_size = arch.image.size();
  }
  nn::Rng rng(seed);
  auto features = it->second(arch, rng);
  return EvidentialClassifier(std::move(arch), std::move(features));
}

// --- head operations ----------------------------------------------------------

inline void expand_head(EvidentialClassifier& model, std::span<const int> new_class_ids) {
  std::unordered_set<int> seen(model.seen_classes().begin(), model.seen_classes().end());
  for (int id : new_class_ids) {
    if (!seen.insert(id).second) throw InvalidInput("expand_head: duplicate class id " + std::to_string(id));
  }
  model.append_classes(new_class_ids);
}

/// Euclidean norms of head weight rows (bias excluded), in head order.
struct WeightNorms {
  std::vector<double> norms;
};

inline WeightNorms weight_norms(const EvidentialClassifier& model) {
  const auto& w = model.head().weight().value;
  WeightNorms out;
  out.norms.reserve(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index r = 0; r < w.rows(); ++r) out.norms.push_back(w.row(r).norm());
  return out;
}

/// Scales new-class rows by mean(|w_old|) / mean(|w_new|). Returns the factor.
inline double weight_align(EvidentialClassifier& model, std::span<const int> old_ids, std::span<const int> new_ids) {
  require(!old_ids.empty() && !new_ids.empty(), "weight_align: both class groups must be non-empty");
  const auto norms = weight_norms(model).norms;
  auto mean_norm = [&](std::span<const int> ids) {
    double sum = 0.0;
    for (int id : ids) sum += norms[model.index_of(id)];
    return sum / static_cast<double>(ids.size());
  };
  const double mean_old = mean_norm(old_ids);
  const double mean_new = mean_norm(new_ids);
  if (mean_new == 0.0) throw DegenerateModel("weight_align: new-class weights have zero norm");
  const double gamma = mean_old / mean_new;
  auto& w = model.head().weight().value;
  for (int id : new_ids) w.row(static_cast<Eigen::Index>(model.index_of(id))) *= gamma;
  return gamma;
}

/// Divides each logit column by its class's weight norm.
inline Matrix bias_corrected_logits(const Matrix& logits, const WeightNorms& norms) {
  require(static_cast<std::size_t>(logits.cols()) == norms.norms.size(), "bias_corrected_logits: width mismatch");
  Matrix out = logits;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double n = norms.norms[static_cast<std::size_t>(c)];
    if (!(n > 0.0)) throw DegenerateModel("bias_corrected_logits: zero weight norm for head row " + std::to_string(c));
    out.col(c) /= n;
  }
  return out;
}

// --- checkpoints --------------------------------------------------------------
//
// Layout (host byte order): "CEDLCKPT", u32 version, arch spec, seen class
// ids, then every parameter and buffer matrix as (rows, cols, raw doubles) in
// collection order.

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'C', 'E', 'D', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void write_matrix(std::ostream& os, const Matrix& m) {
  write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline void read_matrix_into(std::istream& is, Matrix& m) {
  const auto rows = read_pod<std::uint64_t>(is);
  const auto cols = read_pod<std::uint64_t>(is);
  if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols())) {
    throw std::runtime_error("checkpoint: tensor shape mismatch");
  }
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw std::runtime_error("checkpoint: truncated tensor");
}

}  // namespace detail

inline void save_checkpoint(EvidentialClassifier& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  using detail::write_pod;
  os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  write_pod(os, detail::kCheckpointVersion);
  const auto& arch = model.arch();
  write_pod<std::uint64_t>(os, arch.id.size());
  os.write(arch.id.data(), static_cast<std::streamsize>(arch.id.size()));
  write_pod<std::uint64_t>(os, arch.input_size);
  write_pod<std::uint64_t>(os, arch.image.channels);
  write_pod<std::uint64_t>(os, arch.image.height);
  write_pod<std::uint64_t>(os, arch.image.width);
  write_pod<std::uint64_t>(os, arch.hidden.size());
  for (auto h : arch.hidden) write_pod<std::uint64_t>(os, h);
  write_pod<std::uint64_t>(os, model.seen_classes().size());
  for (int id : model.seen_classes()) write_pod<std::int64_t>(os, id);
  const auto params = model.parameters();
  write_pod<std::uint64_t>(os, params.size());
  for (const auto* p : params) detail::write_matrix(os, p->value);
  const auto bufs = model.buffers();
  write_pod<std::uint64_t>(os, bufs.size());
  for (const auto* b : bufs) detail::write_matrix(os, *b);
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline EvidentialClassifier load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  using detail::read_pod;
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  if (read_pod<std::uint32_t>(is) != detail::kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  ArchSpec arch;
  arch.id.resize(read_pod<std::uint64_t>(is));
  is.read(arch.id.data(), static_cast<std::streamsize>(arch.id.size()));
  arch.input_size = read_pod<std::uint64_t>(is);
  arch.image.channels = read_pod<std::uint64_t>(is);
  arch.image.height = read_pod<std::uint64_t>(is);
  arch.image.width = read_pod<std::uint64_t>(is);
  arch.hidden.resize(read_pod<std::uint64_t>(is));
  for (auto& h : arch.hidden) h = read_pod<std::uint64_t>(is);
  std::vector<int> seen(read_pod<std::uint64_t>(is));
  for (auto& id : seen) id = static_cast<int>(read_pod<std::int64_t>(is));

  auto model = make_classifier(arch, 0);
  expand_head(model, seen);
  const auto params = model.parameters();
  if (read_pod<std::uint64_t>(is) != params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (auto* p : params) detail::read_matrix_into(is, p->value);
  const auto bufs = model.buffers();
  if (read_pod<std::uint64_t>(is) != bufs.size()) throw std::runtime_error("checkpoint: buffer count mismatch");
  for (auto* b : bufs) detail::read_matrix_into(is, *b);
  return model;
}

}  // namespace cedl
