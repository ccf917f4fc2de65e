#pragma once

// Emits small ONNX graphs that follow the raw detection-head layout:
// one output of shape [1, 4*(reg_max+1)+C, A] with the anchors of
// strides 8, 16 and 32 concatenated in that order.
//
// Each stride branch is a single patchifying convolution (kernel = stride,
// step = stride) followed by a reshape to [1, channels, -1]. Weights are
// drawn from a seeded generator so the same options always yield the same
// file bytes.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fracdet::tools {

// Minimal protobuf wire-format writer, enough for ModelProto.
class ProtoWriter {
 public:
  void varint(std::uint32_t field, std::uint64_t value) {
    tag(field, 0);
    raw_varint(value);
  }

  void bytes(std::uint32_t field, std::string_view data) {
    tag(field, 2);
    raw_varint(data.size());
    buf_.append(data);
  }

  void message(std::uint32_t field, const ProtoWriter& sub) { bytes(field, sub.buf_); }

  void float32(std::uint32_t field, float value) {
    tag(field, 5);
    char raw[4];
    std::memcpy(raw, &value, 4);
    buf_.append(raw, 4);
  }

  const std::string& str() const { return buf_; }

 private:
  void tag(std::uint32_t field, std::uint32_t wire) { raw_varint((std::uint64_t{field} << 3) | wire); }

  void raw_varint(std::uint64_t v) {
    while (v >= 0x80) {
      buf_.push_back(static_cast<char>((v & 0x7F) | 0x80));
      v >>= 7;
    }
    buf_.push_back(static_cast<char>(v));
  }

  std::string buf_;
};

struct TinyModelOptions {
  int input_size = 64;
  int num_classes = 2;
  int reg_max = 16;
  std::uint64_t seed = 0;
  float weight_scale = 0.05f;
  // When set, every convolution is zeroed and a constant is added to the
  // concatenated head output, so the model emits `constant_head` verbatim
  // regardless of the input pixels.
  std::vector<float> constant_head;
};

namespace detail {

inline ProtoWriter float_tensor(std::string_view name, const std::vector<std::int64_t>& dims,
                                const std::vector<float>& values) {
  ProtoWriter t;
  for (auto d : dims) t.varint(1, static_cast<std::uint64_t>(d));
  t.varint(2, 1);  // FLOAT
  t.bytes(8, name);
  std::string raw(values.size() * sizeof(float), '\0');
  std::memcpy(raw.data(), values.data(), raw.size());
  t.bytes(9, raw);
  return t;
}

inline ProtoWriter int64_tensor(std::string_view name, const std::vector<std::int64_t>& values) {
  ProtoWriter t;
  t.varint(1, values.size());
  t.varint(2, 7);  // INT64
  t.bytes(8, name);
  std::string raw(values.size() * sizeof(std::int64_t), '\0');
  std::memcpy(raw.data(), values.data(), raw.size());
  t.bytes(9, raw);
  return t;
}

inline ProtoWriter ints_attr(std::string_view name, const std::vector<std::int64_t>& values) {
  ProtoWriter a;
  a.bytes(1, name);
  for (auto v : values) a.varint(8, static_cast<std::uint64_t>(v));
  a.varint(20, 7);  // INTS
  return a;
}

inline ProtoWriter int_attr(std::string_view name, std::int64_t value) {
  ProtoWriter a;
  a.bytes(1, name);
  a.varint(3, static_cast<std::uint64_t>(value));
  a.varint(20, 2);  // INT
  return a;
}

inline ProtoWriter node(std::string_view op, std::string_view name, const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs, const std::vector<ProtoWriter>& attrs = {}) {
  ProtoWriter n;
  for (const auto& i : inputs) n.bytes(1, i);
  for (const auto& o : outputs) n.bytes(2, o);
  n.bytes(3, name);
  n.bytes(4, op);
  for (const auto& a : attrs) n.message(5, a);
  return n;
}

inline ProtoWriter value_info(std::string_view name, const std::vector<std::int64_t>& dims) {
  ProtoWriter shape;
  for (auto d : dims) {
    ProtoWriter dim;
    dim.varint(1, static_cast<std::uint64_t>(d));
    shape.message(1, dim);
  }
  ProtoWriter tensor_type;
  tensor_type.varint(1, 1);  // FLOAT
  tensor_type.message(2, shape);
  ProtoWriter type;
  type.message(1, tensor_type);
  ProtoWriter vi;
  vi.bytes(1, name);
  vi.message(2, type);
  return vi;
}

}  // namespace detail

inline int tiny_model_channels(const TinyModelOptions& o) { return 4 * (o.reg_max + 1) + o.num_classes; }

inline int tiny_model_anchors(const TinyModelOptions& o) {
  int n = 0;
  for (int s : {8, 16, 32}) n += (o.input_size / s) * (o.input_size / s);
  return n;
}

inline std::string build_tiny_model(const TinyModelOptions& o) {
  if (o.input_size <= 0 || o.input_size % 32 != 0) throw std::invalid_argument("input size must be a positive multiple of 32");
  if (o.num_classes < 1 || o.reg_max < 1) throw std::invalid_argument("num_classes and reg_max must be >= 1");
  const int channels = tiny_model_channels(o);
  const int anchors = tiny_model_anchors(o);
  const bool constant = !o.constant_head.empty();
  if (constant && o.constant_head.size() != static_cast<std::size_t>(channels) * anchors)
    throw std::invalid_argument("constant head has wrong element count");

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<float> normal(0.0f, o.weight_scale);

  using namespace detail;
  ProtoWriter graph;
  std::vector<std::string> branch_outputs;
  for (int s : {8, 16, 32}) {
    const std::string tag = std::to_string(s);
    std::vector<float> w(static_cast<std::size_t>(channels) * 3 * s * s);
    std::vector<float> b(static_cast<std::size_t>(channels));
    if (!constant) {
      for (auto& v : w) v = normal(rng);
      for (auto& v : b) v = normal(rng);
    }
    graph.message(5, float_tensor("w" + tag, {channels, 3, s, s}, w));
    graph.message(5, float_tensor("b" + tag, {channels}, b));
    graph.message(1, node("Conv", "conv" + tag, {"images", "w" + tag, "b" + tag}, {"feat" + tag},
                          {ints_attr("kernel_shape", {s, s}), ints_attr("strides", {s, s})}));
    graph.message(1, node("Reshape", "flat" + tag, {"feat" + tag, "flat_shape"}, {"flat" + tag}));
    branch_outputs.push_back("flat" + tag);
  }
  graph.message(5, int64_tensor("flat_shape", {1, channels, -1}));
  const std::string concat_out = constant ? "head_raw" : "output0";
  graph.message(1, node("Concat", "concat", branch_outputs, {concat_out}, {int_attr("axis", 2)}));
  if (constant) {
    graph.message(5, float_tensor("head_const", {1, channels, anchors}, o.constant_head));
    graph.message(1, node("Add", "add_const", {concat_out, "head_const"}, {"output0"}));
  }
  graph.bytes(2, "fracdet_tiny");
  graph.message(11, value_info("images", {1, 3, o.input_size, o.input_size}));
  graph.message(12, value_info("output0", {1, channels, anchors}));

  ProtoWriter opset;
  opset.bytes(1, "");
  opset.varint(2, 13);
  ProtoWriter model;
  model.varint(1, 7);  // ir_version
  model.bytes(2, "fracdet-make-test-model");
  model.message(7, graph);
  model.message(8, opset);
  return model.str();
}

inline void write_tiny_model(const std::string& path, const TinyModelOptions& o) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const auto bytes = build_tiny_model(o);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace fracdet::tools
