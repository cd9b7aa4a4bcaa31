#include "anchor/model.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "anchor/rng.hpp"
#include "json.hpp"

namespace anchor {

std::atomic<std::uint64_t> Model::forward_samples_{0};

std::string model_kind_name(ModelSpec::Kind kind) {
  switch (kind) {
    case ModelSpec::Kind::mlp: return "mlp";
    case ModelSpec::Kind::small_cnn: return "small_cnn";
  }
  throw ValidationError("unknown model kind");
}

ModelSpec::Kind model_kind_from_name(const std::string& name) {
  if (name == "mlp") return ModelSpec::Kind::mlp;
  if (name == "small_cnn") return ModelSpec::Kind::small_cnn;
  throw ValidationError("unknown model kind '" + name + "'");
}

void ModelSpec::validate() const {
  if (input_channels < 1 || input_h < 1 || input_w < 1) {
    throw ValidationError("model spec: input dimensions must be positive");
  }
  if (num_classes < 2) throw ValidationError("model spec: num_classes must be >= 2");
  if (kind == Kind::mlp) {
    for (int w : mlp_hidden) {
      if (w < 1) throw ValidationError("model spec: zero-sized hidden layer");
    }
  } else {
    if (conv_layers.empty()) throw ValidationError("model spec: no conv layers");
    int h = input_h, w = input_w;
    for (const auto& layer : conv_layers) {
      if (layer.filters < 1 || layer.kernel < 1 || layer.stride < 1) {
        throw ValidationError("model spec: conv layer fields must be positive");
      }
      const int pad = layer.kernel / 2;
      h = (h + 2 * pad - layer.kernel) / layer.stride + 1;
      w = (w + 2 * pad - layer.kernel) / layer.stride + 1;
      if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0) {
        throw ValidationError(
            "model spec: conv stack does not pool evenly over input " +
            std::to_string(input_h) + "x" + std::to_string(input_w));
      }
      h /= 2;
      w /= 2;
    }
  }
}

namespace {

Tensor init_weight(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : values) v = rng.uniform_range(-bound, bound);
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor init_bias(std::int64_t n) {
  return Tensor(Shape{n}, 0.0, true);
}

}  // namespace

Model Model::build(const ModelSpec& spec) {
  spec.validate();
  Model model;
  model.spec_ = spec;
  Rng rng(derive_seed(spec.init_seed, "model_init"));

  if (spec.kind == ModelSpec::Kind::mlp) {
    std::int64_t in = static_cast<std::int64_t>(spec.first_layer_channels()) *
                      spec.input_h * spec.input_w;
    int layer = 1;
    for (int width : spec.mlp_hidden) {
      const std::string name = "fc" + std::to_string(layer++);
      model.params_.push_back({name + ".weight", init_weight({in, width}, in, rng)});
      model.params_.push_back({name + ".bias", init_bias(width)});
      in = width;
    }
    model.params_.push_back({"out.weight", init_weight({in, spec.num_classes}, in, rng)});
    model.params_.push_back({"out.bias", init_bias(spec.num_classes)});
  } else {
    std::int64_t cin = spec.first_layer_channels();
    std::int64_t h = spec.input_h, w = spec.input_w;
    int layer = 1;
    for (const auto& conv : spec.conv_layers) {
      const std::string name = "conv" + std::to_string(layer++);
      const std::int64_t fan_in = cin * conv.kernel * conv.kernel;
      model.params_.push_back(
          {name + ".weight",
           init_weight({conv.filters, cin, conv.kernel, conv.kernel}, fan_in, rng)});
      model.params_.push_back({name + ".bias", init_bias(conv.filters)});
      const int pad = conv.kernel / 2;
      h = (h + 2 * pad - conv.kernel) / conv.stride + 1;
      w = (w + 2 * pad - conv.kernel) / conv.stride + 1;
      h /= 2;
      w /= 2;
      cin = conv.filters;
    }
    const std::int64_t flat = cin * h * w;
    model.params_.push_back({"out.weight", init_weight({flat, spec.num_classes}, flat, rng)});
    model.params_.push_back({"out.bias", init_bias(spec.num_classes)});
  }
  return model;
}

std::int64_t Model::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : params_) total += p.tensor.size();
  return total;
}

void Model::reset_grads() {
  for (auto& p : params_) p.tensor.reset_grad();
}

std::uint64_t Model::forward_sample_count() { return forward_samples_.load(); }
void Model::reset_forward_sample_count() { forward_samples_.store(0); }

namespace {

Tensor flatten_rows(const Tensor& x) {
  const std::int64_t n = x.dim(0);
  return Tensor(Shape{n, x.size() / n}, x.values());
}

}  // namespace

Tensor Model::forward(const Tensor& input, Tape* tape) const {
  if (input.rank() != 4) {
    throw DimensionError("forward: expected [N,C,H,W] input, got " +
                         shape_str(input.shape()));
  }
  const int expected_c = spec_.first_layer_channels();
  if (input.dim(1) != expected_c || input.dim(2) != spec_.input_h ||
      input.dim(3) != spec_.input_w) {
    throw DimensionError("forward: input " + shape_str(input.shape()) +
                         " does not match model expecting [N," +
                         std::to_string(expected_c) + "," +
                         std::to_string(spec_.input_h) + "," +
                         std::to_string(spec_.input_w) + "]");
  }
  forward_samples_.fetch_add(static_cast<std::uint64_t>(input.dim(0)));

  auto param = [&](std::size_t i) -> const Tensor& { return params_[i].tensor; };

  if (spec_.kind == ModelSpec::Kind::mlp) {
    // Flattening keeps values identical; reuse the same storage so gradients
    // flow by routing through a recorded reshape.
    Tensor x = flatten_rows(input);
    if (tape && input.requires_grad()) {
      x.set_requires_grad(true);
      auto in_d = input.data();
      auto out_d = x.data();
      tape->record(out_d, [=] { in_d->accumulate_grad(out_d->grad.data(), out_d->grad.size()); });
    }
    std::size_t pi = 0;
    for (std::size_t layer = 0; layer < spec_.mlp_hidden.size(); ++layer) {
      x = relu(linear(x, param(pi), param(pi + 1), tape), tape);
      pi += 2;
    }
    return linear(x, param(pi), param(pi + 1), tape);
  }

  Tensor x = input;
  std::size_t pi = 0;
  for (const auto& conv : spec_.conv_layers) {
    x = conv2d(x, param(pi), param(pi + 1), conv.stride, conv.kernel / 2, tape);
    x = relu(x, tape);
    x = avg_pool2d(x, 2, tape);
    pi += 2;
  }
  Tensor flat = flatten_rows(x);
  if (tape && x.requires_grad()) {
    flat.set_requires_grad(true);
    auto xd = x.data();
    auto fd = flat.data();
    tape->record(fd, [=] { xd->accumulate_grad(fd->grad.data(), fd->grad.size()); });
  }
  return linear(flat, param(pi), param(pi + 1), tape);
}

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'N', 'C', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ofstream& os, std::uint32_t v) {
  std::array<unsigned char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

void write_u64(std::ofstream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint32_t read_u32(std::ifstream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::ifstream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::string model_spec_to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["kind"] = model_kind_name(spec.kind);
  j["input_channels"] = spec.input_channels;
  j["input_h"] = spec.input_h;
  j["input_w"] = spec.input_w;
  j["num_classes"] = spec.num_classes;
  j["mlp_hidden"] = spec.mlp_hidden;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& c : spec.conv_layers) {
    layers.push_back({c.filters, c.kernel, c.stride});
  }
  j["conv_layers"] = layers;
  j["anchored"] = spec.anchored;
  j["init_seed"] = spec.init_seed;
  return j.dump();
}

ModelSpec model_spec_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("model spec is not valid JSON");
  ModelSpec spec;
  try {
    spec.kind = model_kind_from_name(j.at("kind").get<std::string>());
    spec.input_channels = j.at("input_channels").get<int>();
    spec.input_h = j.at("input_h").get<int>();
    spec.input_w = j.at("input_w").get<int>();
    spec.num_classes = j.at("num_classes").get<int>();
    spec.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
    spec.conv_layers.clear();
    for (const auto& l : j.at("conv_layers")) {
      spec.conv_layers.push_back({l.at(0).get<int>(), l.at(1).get<int>(), l.at(2).get<int>()});
    }
    spec.anchored = j.at("anchored").get<bool>();
    spec.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model spec JSON missing field: ") + e.what());
  }
  return spec;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open checkpoint for write: " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u32(os, kCheckpointVersion);
  const std::string spec_json = model_spec_to_json(model.spec());
  write_u64(os, spec_json.size());
  os.write(spec_json.data(), static_cast<std::streamsize>(spec_json.size()));
  write_u64(os, model.params().size());
  for (const auto& p : model.params()) {
    write_u64(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u64(os, static_cast<std::uint64_t>(p.tensor.size()));
    for (double v : p.tensor.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      write_u64(os, bits);
    }
  }
  if (!os) throw FormatError("write failed for checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("bad checkpoint magic in " + path.string() + ", expected " +
                      std::string(kCheckpointMagic, 8));
  }
  const auto version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version mismatch: expected " +
                      std::to_string(kCheckpointVersion) + ", found " +
                      std::to_string(version));
  }
  const auto spec_len = read_u64(is);
  std::string spec_json(spec_len, '\0');
  is.read(spec_json.data(), static_cast<std::streamsize>(spec_len));
  const ModelSpec spec = model_spec_from_json(spec_json);

  // Rebuild with the recorded seed so parameter names and shapes line up,
  // then overwrite values from the file.
  Model model = Model::build(spec);
  const auto param_count = read_u64(is);
  if (param_count != model.params().size()) {
    throw FormatError("checkpoint parameter count mismatch: expected " +
                      std::to_string(model.params().size()) + ", found " +
                      std::to_string(param_count));
  }
  for (auto& p : model.params()) {
    const auto name_len = read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (name != p.name) {
      throw FormatError("checkpoint parameter order mismatch: expected '" + p.name +
                        "', found '" + name + "'");
    }
    const auto count = read_u64(is);
    if (count != static_cast<std::uint64_t>(p.tensor.size())) {
      throw FormatError("checkpoint parameter '" + name + "' size mismatch: expected " +
                        std::to_string(p.tensor.size()) + ", found " +
                        std::to_string(count));
    }
    for (auto& v : p.tensor.mutable_values()) {
      const std::uint64_t bits = read_u64(is);
      std::memcpy(&v, &bits, sizeof(v));
    }
  }
  if (!is) throw FormatError("short read on checkpoint " + path.string());
  return model;
}

}  // namespace anchor
