#include "pmf/tensor_file.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "pmf/errors.hpp"

namespace pmf {

namespace {

constexpr std::array<char, 8> kMagic{'P', 'M', 'F', 'T', 'E', 'N', 'S', '1'};

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

} // namespace

const Tensor<float>* TensorFile::find(const std::string& name) const
{
    for (const auto& [key, tensor] : tensors) {
        if (key == name) {
            return &tensor;
        }
    }
    return nullptr;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file)
{
    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["metadata"] = file.metadata;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : file.tensors) {
        const Shape& s = t.shape();
        header["tensors"].push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
    }
    const std::string text = header.dump();
    const std::uint64_t header_len = text.size();

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot open " + tmp.string() + " for writing");
        }
        out.write(kMagic.data(), kMagic.size());
        out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& entry : file.tensors) {
            const auto& t = entry.second;
            out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        if (!out) {
            throw DataError("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

TensorFile read_tensor_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open tensor file " + path.string());
    }
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) {
        throw DataError("not a tensor file: " + path.string());
    }
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || header_len > (1ull << 32)) {
        throw DataError("corrupt header in " + path.string());
    }
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw DataError("truncated header in " + path.string());
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt header in " + path.string() + ": " + e.what());
    }
    if (header.value("format_version", 0) != kFormatVersion) {
        throw DataError("unsupported format_version in " + path.string());
    }

    TensorFile file;
    file.metadata = header.value("metadata", nlohmann::json::object());
    const std::streamoff base = in.tellg();
    for (const auto& entry : header.at("tensors")) {
        const auto dims = entry.at("shape").get<std::vector<int>>();
        if (dims.size() != 4) {
            throw DataError("tensor " + entry.at("name").get<std::string>() + " is not 4-d in " + path.string());
        }
        Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
        in.seekg(base + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!in) {
            throw DataError("truncated payload for " + entry.at("name").get<std::string>() + " in " + path.string());
        }
        file.add(entry.at("name").get<std::string>(), std::move(t));
    }
    return file;
}

} // namespace pmf
