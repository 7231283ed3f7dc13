#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pmf/tensor.hpp"

namespace pmf {

inline constexpr int kFormatVersion = 1;

/// Named float32 tensors plus a JSON metadata block.
///
/// On disk: the 8-byte magic "PMFTENS1", a little-endian uint64 header
/// length, a JSON header {"format_version": 1, "metadata": {...},
/// "tensors": [{"name", "shape": [n,c,h,w], "offset"}]}, then raw
/// little-endian float32 payloads at the given byte offsets.
struct TensorFile {
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    [[nodiscard]] const Tensor<float>* find(const std::string& name) const;
    void add(std::string name, Tensor<float> tensor) { tensors.emplace_back(std::move(name), std::move(tensor)); }
};

/// Writes to a sibling temporary file and renames it into place, so a
/// reader never observes a partial file.
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);

/// Throws DataError on a missing file, bad magic, unsupported version or
/// truncated payload.
TensorFile read_tensor_file(const std::filesystem::path& path);

} // namespace pmf
