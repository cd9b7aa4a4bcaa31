#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anchor/tensor.hpp"

namespace anchor {

struct ConvLayerSpec {
  int filters = 0;
  int kernel = 0;
  int stride = 1;
};

// Architecture description. Anchored models take the channel-doubled joint
// (reference, residual) input; everything past the first layer is identical
// to the standard variant.
struct ModelSpec {
  enum class Kind { mlp, small_cnn };
  Kind kind = Kind::small_cnn;
  int input_channels = 3;  // data channels, before any doubling
  int input_h = 16;
  int input_w = 16;
  int num_classes = 10;
  std::vector<int> mlp_hidden = {128, 128};
  // Each conv layer is conv(filters, kernel, stride, padding=kernel/2)
  // followed by relu and a 2x2 average pool.
  std::vector<ConvLayerSpec> conv_layers = {{16, 3, 1}, {32, 3, 1}};
  bool anchored = true;
  std::uint64_t init_seed = 0;

  int first_layer_channels() const {
    return anchored ? 2 * input_channels : input_channels;
  }
  void validate() const;
};

std::string model_kind_name(ModelSpec::Kind kind);
ModelSpec::Kind model_kind_from_name(const std::string& name);

class Model {
 public:
  // Fan-in uniform init: weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases
  // zero, deterministic in spec.init_seed.
  static Model build(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  ParamList& params() { return params_; }
  const ParamList& params() const { return params_; }
  std::int64_t parameter_count() const;

  // Logits [N, num_classes]. Records on the tape when one is supplied.
  Tensor forward(const Tensor& input, Tape* tape = nullptr) const;

  void reset_grads();

  // Instrumentation: number of samples pushed through forward() since the
  // last reset, across all models.
  static std::uint64_t forward_sample_count();
  static void reset_forward_sample_count();

 private:
  Model() = default;
  ModelSpec spec_;
  ParamList params_;

  static std::atomic<std::uint64_t> forward_samples_;
  friend Model load_checkpoint(const std::filesystem::path& path);
};

// Checkpoint layout: magic, u32 version, canonical spec JSON, then each named
// parameter in spec order as little-endian 64-bit floats. Round-trips are
// bitwise exact.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);

}  // namespace anchor
