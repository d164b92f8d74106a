#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "clustertab/nn/tensor.hpp"

namespace clustertab::nn {

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  const Tensor* tensor = nullptr;
};

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

/// Layout: 8-byte magic "CTABCKPT", little-endian u64 header length, JSON
/// header {format_version, dtype: "f64", tensors: [{name, shape, offset}], meta},
/// then the tensor payloads as little-endian f64 (offsets relative to the
/// payload start).
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace clustertab::nn
