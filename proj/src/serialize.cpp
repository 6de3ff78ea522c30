#include "fei/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fei {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'F', 'E', 'I', 'W', '0', '0', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "weight blobs are written in host order; big-endian hosts need byte swapping");

json shape_json(const Shape& s) {
  json arr = json::array();
  for (Index e : s) arr.push_back(e);
  return arr;
}

Shape json_shape(const json& j) {
  Shape s;
  for (const auto& e : j) s.push_back(e.get<Index>());
  return s;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

}  // namespace

std::string encode_weights(const NetworkModel& model) {
  model.validate();
  json header;
  header["format"] = "FEIW0001";
  header["num_classes"] = model.num_classes;
  header["input_shape"] = shape_json(model.input_shape);
  json layers = json::array();
  std::string blob;
  auto append = [&](const Tensor& t) {
    json entry;
    entry["shape"] = shape_json(t.shape());
    entry["offset"] = blob.size();
    entry["count"] = t.size();
    for (Index i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t[i]);
      char bytes[4];
      std::memcpy(bytes, &f, 4);
      blob.append(bytes, 4);
    }
    return entry;
  };
  for (const auto& l : model.layers) {
    json jl;
    jl["kind"] = std::string(to_string(l.kind));
    jl["is_feature_layer"] = l.is_feature_layer;
    if (l.kind == LayerKind::Conv2D) {
      jl["in_channels"] = l.in_channels;
      jl["out_channels"] = l.out_channels;
      jl["kernel"] = l.kernel;
      jl["stride"] = l.stride;
      jl["padding"] = l.padding;
    } else if (l.kind == LayerKind::Linear) {
      jl["in_features"] = l.in_features;
      jl["out_features"] = l.out_features;
    }
    if (l.has_weights()) {
      jl["weight"] = append(l.weight);
      jl["bias"] = append(l.bias);
    }
    layers.push_back(std::move(jl));
  }
  header["layers"] = std::move(layers);
  header["blob_bytes"] = blob.size();

  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += blob;
  return out;
}

NetworkModel decode_weights(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("bad-magic", "not a FEIW0001 weight file");
  }
  std::uint32_t header_len = 0;
  for (int i = 0; i < 4; ++i)
    header_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) {
    throw Error("truncated-blob", "header extends past end of file");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    throw Error("bad-header", std::string("weight header is not valid JSON: ") + e.what());
  }
  const std::string_view blob(bytes.data() + 12 + header_len, bytes.size() - 12 - header_len);

  NetworkModel model;
  try {
    const std::size_t declared = header.at("blob_bytes").get<std::size_t>();
    if (blob.size() < declared) {
      throw Error("truncated-blob", "header declares " + std::to_string(declared / 4) +
                                        " floats, blob holds " + std::to_string(blob.size() / 4));
    }
    if (blob.size() != declared) throw Error("header-mismatch", "trailing bytes after blob");

    model.num_classes = header.at("num_classes").get<Index>();
    model.input_shape = json_shape(header.at("input_shape"));

    auto read_tensor = [&](const json& entry, const Shape& expected) {
      const Shape shape = json_shape(entry.at("shape"));
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (shape != expected || static_cast<Index>(count) != shape_size(shape)) {
        throw Error("header-mismatch", "tensor shape " + shape_string(shape) +
                                           " disagrees with layer parameters " +
                                           shape_string(expected));
      }
      if (offset % 4 != 0 || offset + 4 * count > blob.size()) {
        throw Error("truncated-blob", "tensor at offset " + std::to_string(offset) +
                                          " runs past the blob");
      }
      Tensor t(shape);
      for (std::size_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, blob.data() + offset + 4 * i, 4);
        t[static_cast<Index>(i)] = f;
      }
      return t;
    };

    for (const auto& jl : header.at("layers")) {
      const LayerKind kind = parse_layer_kind(jl.at("kind").get<std::string>());
      LayerSpec l;
      switch (kind) {
        case LayerKind::Conv2D:
          l = conv2d(jl.at("in_channels"), jl.at("out_channels"), jl.at("kernel"), jl.at("stride"),
                     jl.at("padding"));
          break;
        case LayerKind::Linear:
          l = linear(jl.at("in_features"), jl.at("out_features"));
          break;
        case LayerKind::ReLU: l = relu(); break;
        case LayerKind::MaxPool2x2: l = maxpool2x2(); break;
        case LayerKind::Flatten: l = flatten(); break;
      }
      l.is_feature_layer = jl.at("is_feature_layer").get<bool>();
      if (l.has_weights()) {
        l.weight = read_tensor(jl.at("weight"), l.weight.shape());
        l.bias = read_tensor(jl.at("bias"), l.bias.shape());
      }
      model.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw Error("bad-header", std::string("weight header is missing fields: ") + e.what());
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw Error("header-mismatch", e.what());
  }
  return model;
}

void save_weights(const NetworkModel& model, const std::filesystem::path& path) {
  const std::string bytes = encode_weights(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io-error", "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io-error", "short write to " + path.string());
}

NetworkModel load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io-error", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_weights(ss.str());
}

}  // namespace fei
