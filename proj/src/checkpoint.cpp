#include "lrm/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

namespace lrm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blob format assumes a little-endian host");

namespace {

using nlohmann::json;

void append_tensor(json& tensors, std::ofstream& blob, size_t& offset, const std::string& name,
                   const Shape& shape, const std::vector<float>& data) {
  const size_t bytes = data.size() * sizeof(float);
  tensors[name] = {{"shape", shape}, {"dtype", "f32"}, {"offset", offset}, {"length", bytes}};
  blob.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(bytes));
  offset += bytes;
}

std::vector<float> read_tensor(const json& tensors, std::ifstream& blob, size_t blob_size,
                               const std::string& name, const Shape& want_shape) {
  auto it = tensors.find(name);
  LRM_REQUIRE(it != tensors.end(), "missing parameter tensor '", name, "' in checkpoint manifest");
  const json& e = *it;
  LRM_REQUIRE(e.value("dtype", "") == "f32", "tensor '", name, "': unsupported dtype");
  const Shape shape = e.at("shape").get<Shape>();
  LRM_REQUIRE(shape == want_shape, "tensor '", name, "': checkpoint shape ", shape_str(shape),
              " does not match expected ", shape_str(want_shape));
  const size_t offset = e.at("offset").get<size_t>();
  const size_t length = e.at("length").get<size_t>();
  LRM_REQUIRE(length == static_cast<size_t>(numel(shape)) * sizeof(float), "tensor '", name,
              "': length/shape mismatch in manifest");
  LRM_REQUIRE(offset + length <= blob_size, "tensor '", name, "': range exceeds params.bin size");
  std::vector<float> data(static_cast<size_t>(numel(shape)));
  blob.seekg(static_cast<std::streamoff>(offset));
  blob.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(length));
  LRM_REQUIRE(blob.good(), "tensor '", name, "': short read from params.bin");
  return data;
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParamStore& store, const json& extra) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  LRM_REQUIRE(!ec, "cannot create checkpoint directory '", dir, "': ", ec.message());

  const std::string blob_path = dir + "/params.bin";
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  LRM_REQUIRE(blob.good(), "cannot open '", blob_path, "' for writing");

  json tensors = json::object();
  size_t offset = 0;
  for (const auto& name : store.names()) {
    const ParamInfo& info = store.at(name);
    append_tensor(tensors, blob, offset, name, info.shape, info.value);
    if (!info.m.empty()) {
      append_tensor(tensors, blob, offset, "optim.m." + name, info.shape, info.m);
      append_tensor(tensors, blob, offset, "optim.v." + name, info.shape, info.v);
    }
  }
  blob.close();
  LRM_REQUIRE(blob.good(), "write failure on '", blob_path, "'");

  json manifest = {{"tensors", std::move(tensors)}, {"extra", extra}};
  const std::string man_path = dir + "/manifest.json";
  std::ofstream man(man_path, std::ios::trunc);
  LRM_REQUIRE(man.good(), "cannot open '", man_path, "' for writing");
  man << manifest.dump(2) << "\n";
  man.close();
  LRM_REQUIRE(man.good(), "write failure on '", man_path, "'");
}

json load_checkpoint(const std::string& dir, ParamStore& store) {
  const std::string man_path = dir + "/manifest.json";
  std::ifstream man(man_path);
  LRM_REQUIRE(man.good(), "missing checkpoint: cannot open '", man_path, "'");
  json manifest;
  try {
    man >> manifest;
  } catch (const std::exception& e) {
    throw Error(format_msg("malformed checkpoint manifest '", man_path, "': ", e.what()));
  }
  LRM_REQUIRE(manifest.contains("tensors"), "checkpoint manifest '", man_path,
              "' has no 'tensors' table");
  const json& tensors = manifest["tensors"];

  const std::string blob_path = dir + "/params.bin";
  std::ifstream blob(blob_path, std::ios::binary);
  LRM_REQUIRE(blob.good(), "missing checkpoint blob: cannot open '", blob_path, "'");
  blob.seekg(0, std::ios::end);
  const size_t blob_size = static_cast<size_t>(blob.tellg());

  for (const auto& name : store.names()) {
    ParamInfo& info = store.at(name);
    info.value = read_tensor(tensors, blob, blob_size, name, info.shape);
    if (tensors.contains("optim.m." + name)) {
      info.m = read_tensor(tensors, blob, blob_size, "optim.m." + name, info.shape);
      info.v = read_tensor(tensors, blob, blob_size, "optim.v." + name, info.shape);
    }
  }
  return manifest.value("extra", json::object());
}

json read_checkpoint_extra(const std::string& dir) {
  const std::string man_path = dir + "/manifest.json";
  std::ifstream man(man_path);
  LRM_REQUIRE(man.good(), "missing checkpoint: cannot open '", man_path, "'");
  json manifest;
  try {
    man >> manifest;
  } catch (const std::exception& e) {
    throw Error(format_msg("malformed checkpoint manifest '", man_path, "': ", e.what()));
  }
  return manifest.value("extra", json::object());
}

}  // namespace lrm
