#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "unetmer/io.hpp"
#include "unetmer/model.hpp"

namespace unetmer {

// Checkpoint file: magic "UNMK", u64 json length, json header (config plus
// the ordered tensor names), then one UNMA array blob per tensor. The echoed
// config makes a checkpoint self-describing.

inline nlohmann::json config_to_json(const UNetmerConfig& cfg) {
  return nlohmann::json{
      {"backbone",
       {{"variant", to_string(cfg.backbone.variant)},
        {"in_channels", cfg.backbone.in_channels},
        {"base_channels", cfg.backbone.base_channels},
        {"n_pool", cfg.backbone.n_pool},
        {"num_classes", cfg.backbone.num_classes}}},
      {"transformer",
       {{"num_layers", cfg.transformer.num_layers},
        {"num_heads", cfg.transformer.num_heads},
        {"mlp_ratio", cfg.transformer.mlp_ratio},
        {"embed_dim", cfg.transformer.embed_dim}}},
      {"scales", cfg.scales},
      {"input_h", cfg.input_h},
      {"input_w", cfg.input_w},
      {"use_transformer", cfg.use_transformer}};
}

inline UNetmerConfig config_from_json(const nlohmann::json& j) {
  UNetmerConfig cfg;
  const auto& b = j.at("backbone");
  cfg.backbone.variant = variant_from_string(b.at("variant").get<std::string>());
  cfg.backbone.in_channels = b.at("in_channels").get<int>();
  cfg.backbone.base_channels = b.at("base_channels").get<int>();
  cfg.backbone.n_pool = b.at("n_pool").get<int>();
  cfg.backbone.num_classes = b.at("num_classes").get<int>();
  const auto& t = j.at("transformer");
  cfg.transformer.num_layers = t.at("num_layers").get<int>();
  cfg.transformer.num_heads = t.at("num_heads").get<int>();
  cfg.transformer.mlp_ratio = t.at("mlp_ratio").get<double>();
  cfg.transformer.embed_dim = t.at("embed_dim").get<int>();
  cfg.scales = j.at("scales").get<std::vector<int>>();
  cfg.input_h = j.at("input_h").get<std::size_t>();
  cfg.input_w = j.at("input_w").get<std::size_t>();
  cfg.use_transformer = j.at("use_transformer").get<bool>();
  return cfg;
}

template <class T>
void save_checkpoint(UNetmer<T>& model, const std::filesystem::path& path) {
  auto params = model.parameters();
  auto bufs = model.buffers();

  nlohmann::json header;
  header["format"] = 1;
  header["config"] = config_to_json(model.config());
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, p] : params) tensors.push_back({{"name", name}, {"kind", "param"}});
  for (const auto& [name, b] : bufs) tensors.push_back({{"name", name}, {"kind", "buffer"}});
  header["tensors"] = tensors;

  std::ofstream os(path, std::ios::binary);
  check_io(bool(os), "cannot open checkpoint for write: " + path.string());
  os.write("UNMK", 4);
  const std::string js = header.dump();
  detail::write_u64(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto& [name, p] : params) write_array(os, p->value);
  for (const auto& [name, b] : bufs) write_array(os, *b);
  check_io(bool(os), "failed writing checkpoint: " + path.string());
}

template <class T>
UNetmer<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  check_io(bool(is), "cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  check_io(bool(is) && std::string(magic, 4) == "UNMK", "bad checkpoint magic");
  const std::uint64_t len = detail::read_u64(is);
  std::string js(len, '\0');
  is.read(js.data(), static_cast<std::streamsize>(len));
  check_io(bool(is), "truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }
  UNetmer<T> model(config_from_json(header.at("config")));

  std::map<std::string, Tensor<T>*> slots;
  auto params = model.parameters();
  for (const auto& [name, p] : params) slots[name] = &p->value;
  auto bufs = model.buffers();
  for (const auto& [name, b] : bufs) slots[name] = b;

  std::size_t filled = 0;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    auto it = slots.find(name);
    check(it != slots.end(), "checkpoint has unknown tensor: " + name);
    Tensor<T> value = read_array<T>(is);
    check(value.shape() == it->second->shape(),
          "checkpoint tensor " + name + " has shape " + value.shape_str() + ", expected " +
              it->second->shape_str());
    *it->second = std::move(value);
    ++filled;
  }
  check(filled == slots.size(), "checkpoint is missing tensors for this config");
  return model;
}

}  // namespace unetmer
