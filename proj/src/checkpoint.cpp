#include <cstring>
#include <fstream>

#include "fscil/common.hpp"
#include "fscil/model.hpp"

namespace fscil {

namespace {

constexpr uint32_t kMagic = 0x4b435346u;  // "FSCK"
constexpr uint32_t kVersion = 1;

uint64_t fnv1a64(const uint8_t* p, size_t n) {
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  size_t off = buf.size();
  buf.resize(off + 4);
  std::memcpy(buf.data() + off, &v, 4);
}

void put_u64(std::vector<uint8_t>& buf, uint64_t v) {
  size_t off = buf.size();
  buf.resize(off + 8);
  std::memcpy(buf.data() + off, &v, 8);
}

void put_bytes(std::vector<uint8_t>& buf, const void* p, size_t n) {
  size_t off = buf.size();
  buf.resize(off + n);
  std::memcpy(buf.data() + off, p, n);
}

struct Cursor {
  const uint8_t* p;
  size_t left;
  std::string where;

  void need(size_t n) {
    if (left < n) throw CheckpointError("checkpoint truncated while reading " + where);
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    left -= 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, p, 8);
    p += 8;
    left -= 8;
    return v;
  }
  std::string str() {
    uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
  std::vector<float> floats() {
    uint64_t n = u64();
    need(n * 4);
    std::vector<float> v(n);
    std::memcpy(v.data(), p, n * 4);
    p += n * 4;
    left -= n * 4;
    return v;
  }
};

}  // namespace

const std::vector<float>* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::vector<uint8_t> buf;
  put_u32(buf, kMagic);
  put_u32(buf, kVersion);
  std::string meta = data.meta.dump();
  put_u64(buf, meta.size());
  put_bytes(buf, meta.data(), meta.size());
  put_u64(buf, data.tensors.size());
  for (const auto& [name, t] : data.tensors) {
    put_u64(buf, name.size());
    put_bytes(buf, name.data(), name.size());
    put_u64(buf, t.size());
    put_bytes(buf, t.data(), t.size() * 4);
  }
  put_u64(buf, fnv1a64(buf.data(), buf.size()));

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  auto size = static_cast<size_t>(in.tellg());
  if (size < 24) throw CheckpointError("checkpoint " + path.string() + " too small");
  std::vector<uint8_t> buf(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
  if (!in) throw CheckpointError("short read from " + path.string());

  uint64_t stored;
  std::memcpy(&stored, buf.data() + size - 8, 8);
  if (stored != fnv1a64(buf.data(), size - 8))
    throw CheckpointError("checkpoint " + path.string() + " failed checksum (corrupt file)");

  Cursor c{buf.data(), size - 8, path.string()};
  if (c.u32() != kMagic) throw CheckpointError(path.string() + " is not a checkpoint file");
  uint32_t version = c.u32();
  if (version != kVersion)
    throw CheckpointError("checkpoint " + path.string() + " has unsupported version " +
                          std::to_string(version));
  CheckpointData data;
  std::string meta = c.str();
  try {
    data.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + " has invalid metadata: " + e.what());
  }
  uint64_t count = c.u64();
  data.tensors.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = c.str();
    data.tensors.emplace_back(std::move(name), c.floats());
  }
  return data;
}

namespace {

void fill_model(const CheckpointData& data, Model& model, SgdOptimizer* opt,
                const std::string& where) {
  ParamSet params = model.params();
  ParamSet buffers = model.buffers();
  auto copy_into = [&](const ParamRef& ref) {
    const auto* t = data.find(ref.name);
    if (!t) throw CheckpointError(where + ": missing tensor " + ref.name);
    if (t->size() != ref.value->size())
      throw CheckpointError(where + ": tensor " + ref.name + " has " +
                            std::to_string(t->size()) + " elements, model expects " +
                            std::to_string(ref.value->size()));
    *ref.value = *t;
  };
  for (const auto& ref : params.refs()) copy_into(ref);
  for (const auto& ref : buffers.refs()) copy_into(ref);
  if (opt) {
    if (!data.meta.value("has_optimizer", false))
      throw CheckpointError(where + ": no optimizer state stored");
    auto& vel = opt->state();
    vel.clear();
    for (const auto& ref : params.refs()) {
      const auto* t = data.find("opt/" + ref.name);
      if (!t) throw CheckpointError(where + ": missing optimizer state for " + ref.name);
      if (t->size() != ref.value->size())
        throw CheckpointError(where + ": optimizer state size mismatch for " + ref.name);
      vel.push_back(*t);
    }
  }
}

}  // namespace

void save_model_checkpoint(const std::filesystem::path& path, Model& model,
                           const SgdOptimizer* opt, const nlohmann::json& extra_meta) {
  CheckpointData data;
  data.meta = {
      {"backbone",
       {{"depth", model.backbone_cfg.depth},
        {"width", model.backbone_cfg.width},
        {"in_channels", model.backbone_cfg.in_channels}}},
      {"head",
       {{"kind", to_string(model.head.kind())},
        {"embedding_dim", model.head.embedding_dim()},
        {"num_classes", model.head.num_classes()},
        {"init_temperature", model.head_cfg.init_temperature}}},
      {"has_optimizer", opt != nullptr},
  };
  for (auto& [k, v] : extra_meta.items()) data.meta[k] = v;

  ParamSet params = model.params();
  ParamSet buffers = model.buffers();
  for (const auto& ref : params.refs()) data.tensors.emplace_back(ref.name, *ref.value);
  for (const auto& ref : buffers.refs()) data.tensors.emplace_back(ref.name, *ref.value);
  if (opt) {
    const auto& vel = opt->state();
    const auto& refs = params.refs();
    for (size_t i = 0; i < refs.size(); ++i) {
      // an optimizer that never stepped has no buffers yet; store zeros
      if (i < vel.size()) {
        data.tensors.emplace_back("opt/" + refs[i].name, vel[i]);
      } else {
        data.tensors.emplace_back("opt/" + refs[i].name,
                                  std::vector<float>(refs[i].value->size(), 0.0f));
      }
    }
  }
  save_checkpoint(path, data);
}

nlohmann::json load_model_checkpoint(const std::filesystem::path& path, Model& out_model,
                                     SgdOptimizer* opt) {
  CheckpointData data = load_checkpoint(path);
  const auto& meta = data.meta;
  try {
    if (meta.at("backbone").at("depth") != out_model.backbone_cfg.depth ||
        meta.at("backbone").at("width") != out_model.backbone_cfg.width ||
        meta.at("backbone").at("in_channels") != out_model.backbone_cfg.in_channels)
      throw CheckpointError(path.string() + ": backbone shape differs from target model");
    if (meta.at("head").at("kind") != to_string(out_model.head.kind()) ||
        meta.at("head").at("num_classes") != out_model.head.num_classes())
      throw CheckpointError(path.string() + ": head shape differs from target model");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": metadata incomplete: " + e.what());
  }
  fill_model(data, out_model, opt, path.string());
  return data.meta;
}

Model model_from_checkpoint(const std::filesystem::path& path, SgdOptimizer* opt,
                            nlohmann::json* meta_out) {
  CheckpointData data = load_checkpoint(path);
  BackboneConfig bc;
  HeadConfig hc;
  try {
    const auto& meta = data.meta;
    bc.depth = meta.at("backbone").at("depth");
    bc.width = meta.at("backbone").at("width");
    bc.in_channels = meta.at("backbone").at("in_channels");
    hc.kind = head_kind_from_string(meta.at("head").at("kind"));
    hc.embedding_dim = meta.at("head").at("embedding_dim");
    hc.num_classes = meta.at("head").at("num_classes");
    hc.init_temperature = meta.at("head").at("init_temperature");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": metadata incomplete: " + e.what());
  }
  if (hc.embedding_dim != bc.embedding_dim())
    throw CheckpointError(path.string() + ": embedding dim inconsistent with backbone");
  Model model(bc, hc);
  fill_model(data, model, opt, path.string());
  if (meta_out) *meta_out = data.meta;
  return model;
}

}  // namespace fscil
