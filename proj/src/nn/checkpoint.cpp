#include "clustertab/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "clustertab/errors.hpp"

namespace clustertab::nn {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'A', 'B', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["dtype"] = "f64";
  header["meta"] = meta;
  auto list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& nt : tensors) {
    list.push_back({{"name", nt.name}, {"shape", nt.tensor->shape()}, {"offset", offset}});
    offset += nt.tensor->size() * sizeof(double);
  }
  header["tensors"] = std::move(list);
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::vector<double> buf;
    for (const auto& nt : tensors) {
      buf.assign(nt.tensor->values().begin(), nt.tensor->values().end());
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw InvalidInput(path.string() + ": not a checkpoint file");
  const std::uint64_t len = read_u64(in);
  if (!in || len > (1ULL << 32)) throw InvalidInput(path.string() + ": corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  if (!header.contains("format_version"))
    throw InvalidInput(path.string() + ": checkpoint header lacks format_version");
  if (header["format_version"].get<int>() != kCheckpointFormatVersion)
    throw InvalidInput(path.string() + ": unsupported checkpoint format_version " + header["format_version"].dump());
  if (header.value("dtype", "") != "f64") throw InvalidInput(path.string() + ": unsupported dtype");

  const std::streamoff base = in.tellg();
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    Shape shape = t.at("shape").get<Shape>();
    const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_size(shape);
    std::vector<double> buf(n);
    in.seekg(base + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw InvalidInput(path.string() + ": truncated tensor " + t.at("name").get<std::string>());
    ck.tensors.emplace(t.at("name").get<std::string>(), Tensor(shape, std::vector<Scalar>(buf.begin(), buf.end())));
  }
  return ck;
}

}  // namespace clustertab::nn
