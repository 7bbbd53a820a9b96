#include "tatrans/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tatrans/error.hpp"

namespace tatrans::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'A', 'T', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

struct RawHeader {
  nlohmann::json json;
  std::uint64_t blob_start = 0;
};

RawHeader read_raw_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ValidationError("not a checkpoint file: " + path.string());
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in) throw ValidationError("truncated checkpoint header: " + path.string());
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError("truncated checkpoint header: " + path.string());
  RawHeader h;
  try {
    h.json = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  h.blob_start = 8 + sizeof version + sizeof len + len;
  return h;
}

CheckpointHeader to_header(const nlohmann::json& j) {
  CheckpointHeader h;
  h.dtype = j.at("dtype").get<std::string>();
  h.step_count = j.at("step_count").get<std::uint64_t>();
  h.config_digest = j.at("config_digest").get<std::string>();
  h.metadata = j.at("metadata");
  return h;
}

template <typename Src, typename Dst>
void read_blob(std::ifstream& in, std::vector<Dst>& dst, const std::filesystem::path& path) {
  std::vector<Src> buf(dst.size());
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(Src)));
  if (!in) throw ValidationError("truncated checkpoint blob: " + path.string());
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<Dst>(buf[i]);
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& store,
                     const nlohmann::json& metadata, const std::string& config_digest) {
  nlohmann::json header;
  header["dtype"] = dtype_name<T>();
  header["step_count"] = store.step_count;
  header["config_digest"] = config_digest;
  header["metadata"] = metadata;
  auto params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    params.push_back({{"name", p.name}, {"shape", p.value.shape}, {"offset", offset}});
    offset += 3 * p.value.size() * sizeof(T);
  }
  header["params"] = std::move(params);
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw RuntimeError("cannot write checkpoint: " + path.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& p = store[i];
      for (const auto* blob : {&p.value.data, &p.moment1, &p.moment2}) {
        out.write(reinterpret_cast<const char*>(blob->data()), static_cast<std::streamsize>(blob->size() * sizeof(T)));
      }
    }
    if (!out) throw RuntimeError("failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  return to_header(read_raw_header(in, path).json);
}

template <typename T>
CheckpointHeader load_checkpoint(const std::filesystem::path& path, ParameterStore<T>& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  const RawHeader raw = read_raw_header(in, path);
  CheckpointHeader header = to_header(raw.json);
  const auto& params = raw.json.at("params");
  if (params.size() != store.size()) {
    throw ValidationError("checkpoint has " + std::to_string(params.size()) + " parameters, model expects " +
                          std::to_string(store.size()));
  }
  const bool f32 = header.dtype == "f32";
  if (!f32 && header.dtype != "f64") throw ValidationError("unknown checkpoint dtype " + header.dtype);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    const auto name = params[i].at("name").get<std::string>();
    const auto shape = params[i].at("shape").get<Shape>();
    if (name != p.name || shape != p.value.shape) {
      throw ValidationError("checkpoint parameter '" + name + "' " + shape_string(shape) + " does not match model '" +
                            p.name + "' " + shape_string(p.value.shape));
    }
    for (auto* blob : {&p.value.data, &p.moment1, &p.moment2}) {
      if (f32) {
        read_blob<float>(in, *blob, path);
      } else {
        read_blob<double>(in, *blob, path);
      }
    }
    std::fill(p.grad.begin(), p.grad.end(), T{});
  }
  store.step_count = header.step_count;
  return header;
}

template void save_checkpoint(const std::filesystem::path&, const ParameterStore<float>&, const nlohmann::json&,
                              const std::string&);
template void save_checkpoint(const std::filesystem::path&, const ParameterStore<double>&, const nlohmann::json&,
                              const std::string&);
template CheckpointHeader load_checkpoint(const std::filesystem::path&, ParameterStore<float>&);
template CheckpointHeader load_checkpoint(const std::filesystem::path&, ParameterStore<double>&);

}  // namespace tatrans::nn
