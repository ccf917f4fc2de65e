#pragma once

// Just enough of the protobuf wire format to read the declared graph input
// shape out of an ONNX ModelProto.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fracdet/error.hpp"

namespace fracdet {

namespace detail {

class ProtoReader {
 public:
  struct Field {
    std::uint32_t number = 0;
    std::uint32_t wire = 0;
    std::uint64_t varint = 0;
    std::string_view bytes;
  };

  explicit ProtoReader(std::string_view data) : data_(data) {}

  bool next(Field& f) {
    if (pos_ >= data_.size()) return false;
    const auto key = read_varint();
    f.number = static_cast<std::uint32_t>(key >> 3);
    f.wire = static_cast<std::uint32_t>(key & 7);
    f.bytes = {};
    f.varint = 0;
    switch (f.wire) {
      case 0: f.varint = read_varint(); break;
      case 1: skip(8); break;
      case 2: {
        const auto len = read_varint();
        if (len > data_.size() - pos_) throw MalformedModelError("truncated protobuf field");
        f.bytes = data_.substr(pos_, static_cast<std::size_t>(len));
        pos_ += static_cast<std::size_t>(len);
        break;
      }
      case 5: skip(4); break;
      default: throw MalformedModelError("unsupported protobuf wire type " + std::to_string(f.wire));
    }
    return true;
  }

 private:
  std::uint64_t read_varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      if (pos_ >= data_.size()) throw MalformedModelError("truncated protobuf varint");
      const auto b = static_cast<unsigned char>(data_[pos_++]);
      v |= std::uint64_t{b & 0x7Fu} << shift;
      if (!(b & 0x80)) return v;
    }
    throw MalformedModelError("overlong protobuf varint");
  }

  void skip(std::size_t n) {
    if (n > data_.size() - pos_) throw MalformedModelError("truncated protobuf field");
    pos_ += n;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Declared shape of the graph's first non-initializer input. Symbolic
/// dimensions come back as nullopt.
struct OnnxInputShape {
  std::string name;
  std::vector<std::optional<std::int64_t>> dims;
};

inline OnnxInputShape read_onnx_input_shape(std::string_view model_bytes) {
  using detail::ProtoReader;
  ProtoReader model(model_bytes);
  ProtoReader::Field f;
  std::optional<std::string_view> graph;
  bool saw_ir = false;
  while (model.next(f)) {
    if (f.number == 1 && f.wire == 0) saw_ir = true;
    if (f.number == 7 && f.wire == 2) graph = f.bytes;
  }
  if (!saw_ir || !graph) throw MalformedModelError("not an ONNX model: missing ir_version or graph");

  std::set<std::string_view> initializers;
  std::vector<std::string_view> inputs;
  {
    ProtoReader g(*graph);
    while (g.next(f)) {
      if (f.number == 5 && f.wire == 2) {
        ProtoReader t(f.bytes);
        ProtoReader::Field tf;
        while (t.next(tf))
          if (tf.number == 8 && tf.wire == 2) initializers.insert(tf.bytes);
      } else if (f.number == 11 && f.wire == 2) {
        inputs.push_back(f.bytes);
      }
    }
  }
  for (auto vi_bytes : inputs) {
    OnnxInputShape shape;
    std::string_view type;
    ProtoReader vi(vi_bytes);
    while (vi.next(f)) {
      if (f.number == 1 && f.wire == 2) shape.name = std::string(f.bytes);
      if (f.number == 2 && f.wire == 2) type = f.bytes;
    }
    if (initializers.count(shape.name)) continue;
    // TypeProto.tensor_type(1) -> TensorShapeProto shape(2) -> dim(1)
    auto sub = [&](std::string_view msg, std::uint32_t field) -> std::string_view {
      ProtoReader r(msg);
      ProtoReader::Field x;
      std::string_view out;
      while (r.next(x))
        if (x.number == field && x.wire == 2) out = x.bytes;
      return out;
    };
    const auto tensor_shape = sub(sub(type, 1), 2);
    ProtoReader dims(tensor_shape);
    while (dims.next(f)) {
      if (f.number != 1 || f.wire != 2) continue;
      ProtoReader d(f.bytes);
      ProtoReader::Field df;
      std::optional<std::int64_t> value;
      while (d.next(df))
        if (df.number == 1 && df.wire == 0) value = static_cast<std::int64_t>(df.varint);
      shape.dims.push_back(value);
    }
    return shape;
  }
  throw MalformedModelError("ONNX graph declares no input");
}

}  // namespace fracdet
