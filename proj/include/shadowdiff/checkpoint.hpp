#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "shadowdiff/nn/param.hpp"
#include "shadowdiff/schedule.hpp"
#include "shadowdiff/tensor.hpp"

namespace shadowdiff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<unsigned char> bytes;  // little-endian values

  template <typename T>
  static CheckpointRecord from(std::string name, const Tensor<T>& t) {
    CheckpointRecord r{std::move(name), dtype_of<T>(), t.shape(), {}};
    r.bytes.resize(t.size() * sizeof(T));
    std::memcpy(r.bytes.data(), t.data(), r.bytes.size());
    return r;
  }

  /// Converts between f32 and f64 if needed.
  template <typename T>
  Tensor<T> as() const {
    Tensor<T> out(shape);
    const std::size_t n = out.size();
    if (dtype == DType::f32) {
      std::vector<float> v(n);
      std::memcpy(v.data(), bytes.data(), n * sizeof(float));
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(v[i]);
    } else {
      std::vector<double> v(n);
      std::memcpy(v.data(), bytes.data(), n * sizeof(double));
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(v[i]);
    }
    return out;
  }
};

/// Container: magic "SHDWDIFF", version, schedule block, free-text metadata, then named tensor records.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  ScheduleTable schedule;
  std::string meta;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }

  template <typename T>
  void add_store(const nn::ParamStore<T>& store) {
    for (const auto& e : store.entries()) {
      if (find(e.name)) throw std::invalid_argument("duplicate checkpoint record " + e.name);
      records.push_back(CheckpointRecord::from(e.name, e.param->value));
    }
  }

  /// Loads every parameter of the store; missing names or shape mismatches throw DataError.
  template <typename T>
  void load_store(nn::ParamStore<T>& store) const {
    for (const auto& e : store.entries()) {
      const CheckpointRecord* r = find(e.name);
      if (!r) throw DataError("checkpoint has no record " + e.name);
      if (r->shape != e.param->value.shape())
        throw DataError("checkpoint record " + e.name + " has shape " + shape_str(r->shape) + ", expected " +
                        shape_str(e.param->value.shape()));
      e.param->value = r->as<T>();
    }
  }

  bool has_store(const std::vector<std::string>& names) const {
    for (const auto& n : names)
      if (!find(n)) return false;
    return true;
  }
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace shadowdiff
