#pragma once

// Self-describing model container: an eight-byte magic, a JSON manifest
// (tensor names, shapes, dtypes, byte offsets, plus the serialized
// configuration and optional optimizer scalars), then raw little-endian
// 32-bit float payloads. Everything needed to rebuild the model travels in
// the file, and a structural mismatch on load reports the differing tensor
// names instead of corrupting anything silently.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "uformer/config.hpp"
#include "uformer/optim.hpp"
#include "uformer/parameters.hpp"

namespace uformer {

inline constexpr const char kCheckpointMagic[9] = "UFCKPT01";

namespace ckpt_detail {

inline void put_f32(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof(u));
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

inline float get_f32(const std::string& buf, std::size_t pos) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i)
    u |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i]))
         << (8 * i);
  float f;
  std::memcpy(&f, &u, sizeof(f));
  return f;
}

template <std::floating_point T>
void append_tensor(nlohmann::json& table, std::string& payload,
                   const std::string& name, const Tensor<T>& t,
                   bool trainable) {
  nlohmann::json entry;
  entry["name"] = name;
  entry["shape"] = t.shape();
  entry["dtype"] = "f32";
  entry["offset"] = payload.size();
  entry["trainable"] = trainable;
  table.push_back(std::move(entry));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    put_f32(payload, static_cast<float>(t[i]));
}

struct FileImage {
  nlohmann::json manifest;
  std::string payload;
};

inline FileImage read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(in.good(), "cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  require<IoError>(buf.size() >= 12 && buf.compare(0, 8, kCheckpointMagic) == 0,
                   path + ": not a checkpoint file");
  std::uint32_t mlen = 0;
  for (int i = 0; i < 4; ++i)
    mlen |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[8 + i]))
            << (8 * i);
  require<IoError>(12 + static_cast<std::size_t>(mlen) <= buf.size(),
                   path + ": manifest overruns the file");
  FileImage img;
  try {
    img.manifest = nlohmann::json::parse(buf.substr(12, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": manifest is not valid JSON: " + e.what());
  }
  img.payload = buf.substr(12 + mlen);
  return img;
}

// Tensor table indexed by name, with bounds already vetted.
struct TensorView {
  Shape shape;
  std::size_t offset = 0;
  bool trainable = false;
};

inline std::unordered_map<std::string, TensorView> index_tensors(
    const FileImage& img, const std::string& path) {
  std::unordered_map<std::string, TensorView> out;
  for (const auto& entry : img.manifest.at("tensors")) {
    TensorView v;
    v.shape = entry.at("shape").get<Shape>();
    v.offset = entry.at("offset").get<std::size_t>();
    v.trainable = entry.value("trainable", true);
    const auto bytes = static_cast<std::size_t>(shape_numel(v.shape)) * 4;
    require<IoError>(v.offset + bytes <= img.payload.size(),
                     path + ": tensor payload overruns the file");
    out.emplace(entry.at("name").get<std::string>(), std::move(v));
  }
  return out;
}

template <std::floating_point T>
Tensor<T> extract(const FileImage& img, const TensorView& view) {
  Tensor<T> t(view.shape);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(
        get_f32(img.payload, view.offset + 4 * static_cast<std::size_t>(i)));
  return t;
}

}  // namespace ckpt_detail

// Writes every store tensor (weights and running statistics alike) and,
// when given, the optimizer moments under reserved opt.m. / opt.v. names.
template <std::floating_point T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store,
                     const UformerConfig& cfg,
                     const AdamState<T>* opt = nullptr) {
  nlohmann::json manifest;
  manifest["config"] = serialize_config(cfg);
  manifest["has_optimizer"] = opt != nullptr;
  manifest["step"] = opt ? opt->step : 0;
  manifest["lr"] = opt ? opt->lr : 0.0;

  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  for (std::size_t s = 0; s < store.size(); ++s) {
    const auto& slot = store.at(static_cast<int>(s));
    ckpt_detail::append_tensor(table, payload, slot.name, slot.value,
                               slot.trainable);
  }
  if (opt) {
    require<ValueError>(opt->m.size() == store.size() &&
                            opt->v.size() == store.size(),
                        "optimizer state does not match the parameter store");
    for (std::size_t s = 0; s < store.size(); ++s) {
      const auto& slot = store.at(static_cast<int>(s));
      if (!slot.trainable) continue;
      ckpt_detail::append_tensor(table, payload, "opt.m." + slot.name,
                                 opt->m[s], false);
      ckpt_detail::append_tensor(table, payload, "opt.v." + slot.name,
                                 opt->v[s], false);
    }
  }
  manifest["tensors"] = std::move(table);

  const std::string mtext = manifest.dump();
  std::string out;
  out += kCheckpointMagic;
  const auto mlen = static_cast<std::uint32_t>(mtext.size());
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((mlen >> (8 * i)) & 0xff));
  out += mtext;
  out += payload;

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  require<IoError>(file.good(), "cannot create checkpoint: " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  require<IoError>(file.good(), "failed writing checkpoint: " + path);
}

// The configuration the checkpoint was trained under, for rebuilding the
// model before loading tensors into it.
inline UformerConfig checkpoint_config(const std::string& path) {
  const auto img = ckpt_detail::read_image(path);
  require<IoError>(img.manifest.contains("config"),
                   path + ": manifest has no config");
  return parse_config_text(img.manifest["config"].get<std::string>());
}

// Loads tensors by name into an already-built store. The store and the file
// must describe the same structure; any missing, unexpected, or reshaped
// tensor aborts the load with a full name-by-name diff. Requesting the
// optimizer restores moments, step count, and learning rate as well.
template <std::floating_point T>
void load_checkpoint(const std::string& path, ParameterStore<T>& store,
                     AdamState<T>* opt = nullptr) {
  const auto img = ckpt_detail::read_image(path);
  auto table = ckpt_detail::index_tensors(img, path);

  std::vector<std::string> problems;
  for (std::size_t s = 0; s < store.size(); ++s) {
    const auto& slot = store.at(static_cast<int>(s));
    const auto it = table.find(slot.name);
    if (it == table.end()) {
      problems.push_back("missing from file: " + slot.name);
    } else if (it->second.shape != slot.value.shape()) {
      problems.push_back("shape mismatch: " + slot.name + " is " +
                         shape_str(slot.value.shape()) + " here but " +
                         shape_str(it->second.shape) + " in the file");
    }
  }
  for (const auto& [name, view] : table) {
    if (name.starts_with("opt.m.") || name.starts_with("opt.v.")) continue;
    if (store.find(name) < 0) problems.push_back("unexpected in file: " + name);
  }
  if (!problems.empty()) {
    std::string msg = path + ": checkpoint does not match the model:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IoError(msg);
  }

  if (opt) {
    require<IoError>(img.manifest.value("has_optimizer", false),
                     path + ": checkpoint carries no optimizer state");
    opt->step = img.manifest.at("step").get<std::int64_t>();
    opt->lr = img.manifest.at("lr").get<double>();
    opt->m.assign(store.size(), Tensor<T>());
    opt->v.assign(store.size(), Tensor<T>());
  }

  for (std::size_t s = 0; s < store.size(); ++s) {
    auto& slot = store.at(static_cast<int>(s));
    slot.value = ckpt_detail::extract<T>(img, table.at(slot.name));
    if (opt && slot.trainable) {
      const auto mi = table.find("opt.m." + slot.name);
      const auto vi = table.find("opt.v." + slot.name);
      require<IoError>(mi != table.end() && vi != table.end(),
                       path + ": optimizer moments missing for " + slot.name);
      require<IoError>(mi->second.shape == slot.value.shape() &&
                           vi->second.shape == slot.value.shape(),
                       path + ": optimizer moment shape mismatch for " +
                           slot.name);
      opt->m[s] = ckpt_detail::extract<T>(img, mi->second);
      opt->v[s] = ckpt_detail::extract<T>(img, vi->second);
    } else if (opt) {
      opt->m[s] = Tensor<T>(slot.value.shape());
      opt->v[s] = Tensor<T>(slot.value.shape());
    }
  }
}

}  // namespace uformer
