#include "bugscope/model_io.hpp"

#include "bugscope/binio.hpp"
#include "bugscope/error.hpp"

namespace bugscope {

namespace {

constexpr std::string_view kMagic = "BSNN";

enum LayerTag : std::uint32_t {
  kDense = 1,
  kConv = 2,
  kRelu = 3,
  kPool = 4,
  kFlatten = 5,
  kSigmoid = 6,
  kSoftmax = 7,
};

}  // namespace

std::vector<std::uint8_t> serialize_network(const Network& net) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kModelFormatVersion);
  w.shape(net.input_shape());
  w.u64(net.num_classes());
  w.u64(net.seed());
  w.u32(static_cast<std::uint32_t>(net.init_scheme()));
  w.u32(static_cast<std::uint32_t>(net.depth()));
  for (const Layer& layer : net.layers()) {
    if (const auto* d = std::get_if<Dense>(&layer)) {
      w.u32(kDense);
      w.tensor(d->weights);
      w.tensor(d->bias);
    } else if (const auto* c = std::get_if<Conv2D>(&layer)) {
      w.u32(kConv);
      w.u64(c->stride);
      w.u64(c->padding);
      w.tensor(c->kernels);
      w.tensor(c->bias);
    } else if (const auto* p = std::get_if<MaxPool2D>(&layer)) {
      w.u32(kPool);
      w.u64(p->window);
      w.u64(p->stride);
    } else if (std::holds_alternative<ReLU>(layer)) {
      w.u32(kRelu);
    } else if (std::holds_alternative<Flatten>(layer)) {
      w.u32(kFlatten);
    } else if (std::holds_alternative<Sigmoid>(layer)) {
      w.u32(kSigmoid);
    } else {
      w.u32(kSoftmax);
    }
  }
  w.str(provenance_to_json(net.provenance()));
  return w.bytes();
}

Network deserialize_network(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "model file");
  if (r.raw(kMagic.size()) != kMagic) throw FormatError("model file: bad magic bytes");
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw FormatError("model file: unsupported version " + std::to_string(version) +
                      " (supported: " + std::to_string(kModelFormatVersion) + ")");
  }
  Shape input = r.shape();
  const std::uint64_t classes = r.u64();
  const std::uint64_t seed = r.u64();
  const std::uint32_t scheme = r.u32();
  if (scheme != static_cast<std::uint32_t>(InitScheme::GlorotUniform)) {
    throw FormatError("model file: unknown init scheme " + std::to_string(scheme));
  }
  const std::uint32_t count = r.u32();
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t tag = r.u32();
    switch (tag) {
      case kDense: {
        Dense d;
        d.weights = r.tensor();
        d.bias = r.tensor();
        layers.emplace_back(std::move(d));
        break;
      }
      case kConv: {
        Conv2D c;
        c.stride = r.u64();
        c.padding = r.u64();
        c.kernels = r.tensor();
        c.bias = r.tensor();
        layers.emplace_back(std::move(c));
        break;
      }
      case kPool: {
        MaxPool2D p;
        p.window = r.u64();
        p.stride = r.u64();
        layers.emplace_back(p);
        break;
      }
      case kRelu: layers.emplace_back(ReLU{}); break;
      case kFlatten: layers.emplace_back(Flatten{}); break;
      case kSigmoid: layers.emplace_back(Sigmoid{}); break;
      case kSoftmax: layers.emplace_back(Softmax{}); break;
      default:
        throw FormatError("model file: unknown layer kind " + std::to_string(tag) +
                          " at layer " + std::to_string(i));
    }
  }
  const std::string provenance = r.str();
  if (!r.at_end()) throw FormatError("model file: trailing bytes after provenance");
  Network net(std::move(input), classes, std::move(layers), seed, /*initialize=*/false,
              static_cast<InitScheme>(scheme));
  net.mutable_provenance() = provenance_from_json(provenance);
  return net;
}

void save_network(const Network& net, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_network(net));
}

Network load_network(const std::filesystem::path& path) {
  return deserialize_network(read_file_bytes(path));
}

}  // namespace bugscope
