#include "nenn/model_io.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nenn/error.hpp"

namespace nenn {

namespace {

constexpr std::array<char, 4> kMagic{'N', 'E', 'N', 'N'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 8;

static_assert(std::endian::native == std::endian::little,
              "model I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void u8(std::uint8_t v) { put(v); }
  void u32(std::size_t v) { put(static_cast<std::uint32_t>(v)); }
  void f32(double v) { put(static_cast<float>(v)); }
  void floats(const Tensor& t) {
    for (double v : t.values()) f32(v);
  }
  void codes(const QuantTensor& q) {
    for (auto c : q.codes()) put(c);
  }

  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    if (size_ - pos_ < sizeof(T)) throw TruncatedFileError("model payload ends early");
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t u32() { return get<std::uint32_t>(); }
  Tensor floats(Shape shape) {
    const std::size_t n = shape_size(shape);
    if ((size_ - pos_) / sizeof(float) < n) throw TruncatedFileError("model payload ends early");
    std::vector<double> data(n);
    for (auto& v : data) v = get<float>();
    return Tensor(std::move(shape), std::move(data));
  }
  std::vector<std::int8_t> codes(std::size_t n) {
    if (size_ - pos_ < n) throw TruncatedFileError("model payload ends early");
    std::vector<std::int8_t> out(n);
    std::memcpy(out.data(), data_ + pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

void write_payload(Writer& w, const Model& model) {
  const auto& in = model.input_shape();
  w.u32(in.size());
  for (auto dim : in) w.u32(dim);
  w.u32(model.num_classes());
  w.u32(model.size());
  for (const auto& layer : model.layers()) {
    w.u8(static_cast<std::uint8_t>(layer.kind));
    if (!layer.is_linear()) continue;
    if (layer.kind == LayerKind::dense) {
      w.u32(layer.weight.shape()[0]);
      w.u32(layer.weight.shape()[1]);
    } else {
      for (auto dim : layer.weight.shape()) w.u32(dim);
      w.u32(layer.stride);
      w.u32(layer.padding);
    }
    w.floats(layer.weight);
    w.floats(layer.bias);
    w.f32(layer.noise_sigma);
    w.u8(layer.approx ? 1 : 0);
    if (layer.approx) {
      const auto& a = *layer.approx;
      w.u32(a.layer_id());
      w.u32(a.n());
      w.u32(a.k());
      w.u32(a.d());
      w.u32(a.projection().s());
      w.put<std::uint64_t>(a.projection().seed());
      w.f32(a.w_tilde().scale());
      w.codes(a.w_tilde());
      w.f32(a.b_tilde().scale());
      w.codes(a.b_tilde());
    }
  }
}

Model read_payload(Reader& r) {
  const std::size_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("implausible input rank " + std::to_string(rank));
  Shape input(rank);
  for (auto& dim : input) dim = r.u32();
  const std::size_t classes = r.u32();
  const std::size_t count = r.u32();

  std::vector<Layer> layers;
  for (std::size_t i = 0; i < count; ++i) {
    const auto tag = r.get<std::uint8_t>();
    Layer layer;
    switch (static_cast<LayerKind>(tag)) {
      case LayerKind::relu:
        layers.push_back(Layer::relu());
        continue;
      case LayerKind::flatten:
        layers.push_back(Layer::flatten());
        continue;
      case LayerKind::dense: {
        const std::size_t n = r.u32();
        const std::size_t d = r.u32();
        auto w = r.floats({n, d});
        auto b = r.floats({n});
        layer = Layer::dense(std::move(w), std::move(b));
        break;
      }
      case LayerKind::conv2d: {
        Shape k(4);
        for (auto& dim : k) dim = r.u32();
        const std::size_t stride = r.u32();
        const std::size_t padding = r.u32();
        auto w = r.floats(k);
        auto b = r.floats({k[0]});
        layer = Layer::conv2d(std::move(w), std::move(b), stride, padding);
        break;
      }
      default:
        throw UnsupportedLayerError("unsupported layer tag " + std::to_string(tag) +
                                    " in record " + std::to_string(i));
    }
    layer.noise_sigma = r.get<float>();
    if (r.get<std::uint8_t>() != 0) {
      const std::size_t layer_id = r.u32();
      const std::size_t n = r.u32();
      const std::size_t k = r.u32();
      const std::size_t d = r.u32();
      const std::size_t s = r.u32();
      const auto seed = r.get<std::uint64_t>();
      const double w_scale = r.get<float>();
      auto w_codes = r.codes(n * k);
      const double b_scale = r.get<float>();
      auto b_codes = r.codes(n);
      layer.approx.emplace(QuantTensor({n, k}, std::move(w_codes), w_scale),
                           QuantTensor({n}, std::move(b_codes), b_scale),
                           sample_projection(k, d, s, seed), layer_id);
    }
    layers.push_back(std::move(layer));
  }
  if (!r.done()) throw FormatError("unexpected bytes after the last layer record");
  return Model(std::move(input), classes, std::move(layers));
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  Writer payload;
  write_payload(payload, model);

  Writer file;
  for (char c : kMagic) file.put(c);
  file.put<std::uint16_t>(kModelFormatVersion);
  file.put<std::uint64_t>(payload.bytes().size());
  auto& out = file.bytes();
  out.insert(out.end(), payload.bytes().begin(), payload.bytes().end());
  file.put<std::uint32_t>(crc_of(out.data(), out.size()));
  return std::move(out);
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes) throw TruncatedFileError("model file shorter than its header");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw BadMagicError("not a NENN model file");
  }
  Reader header(bytes.data() + 4, kHeaderBytes - 4);
  const auto version = header.get<std::uint16_t>();
  if (version != kModelFormatVersion) {
    throw VersionMismatchError("model format version " + std::to_string(version) +
                               " is not supported (expected " +
                               std::to_string(kModelFormatVersion) + ")");
  }
  const auto payload_bytes = header.get<std::uint64_t>();
  if (bytes.size() - kHeaderBytes < 4 ||
      bytes.size() - kHeaderBytes - 4 < payload_bytes) {
    throw TruncatedFileError("model file is truncated");
  }
  if (bytes.size() - kHeaderBytes - 4 > payload_bytes) {
    throw FormatError("unexpected bytes after the checksum");
  }
  const std::size_t body = kHeaderBytes + payload_bytes;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (crc_of(bytes.data(), body) != stored) throw ChecksumError("model file checksum mismatch");

  Reader payload(bytes.data() + kHeaderBytes, payload_bytes);
  try {
    return read_payload(payload);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("invalid model contents: ") + e.what());
  }
}

void save_model(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace nenn
