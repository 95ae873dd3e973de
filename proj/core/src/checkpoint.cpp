#include "forec/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "forec/errors.hpp"

namespace forec::ckpt {

namespace {

constexpr char kMagic[8] = {'F', 'O', 'R', 'E', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

// This writer assumes a little-endian host, which covers every platform the
// project targets; the reader rejects nothing it cannot verify.
template <class T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& f, const char* what) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

}  // namespace

void write_checkpoint(const CheckpointData& data, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
  f.write(kMagic, sizeof(kMagic));
  put<uint32_t>(f, kVersion);
  put<uint32_t>(f, uint32_t(data.tensors.size()));
  for (const NamedTensor& t : data.tensors) {
    if (t.name.size() > 0xffff) throw ValueError("checkpoint tensor name too long: " + t.name);
    put<uint16_t>(f, uint16_t(t.name.size()));
    f.write(t.name.data(), std::streamsize(t.name.size()));
    put<uint8_t>(f, 0);  // dtype f32
    put<uint8_t>(f, uint8_t(t.value.ndim()));
    for (int d : t.value.shape) put<uint32_t>(f, uint32_t(d));
    f.write(reinterpret_cast<const char*>(t.value.data.data()),
            std::streamsize(t.value.data.size() * sizeof(float)));
  }
  put<uint64_t>(f, data.step);
  f.write(reinterpret_cast<const char*>(data.rng_state.data()),
          std::streamsize(data.rng_state.size()));
  if (!f) throw IoError("checkpoint write failed: " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("checkpoint magic mismatch: " + path.string());
  uint32_t version = get<uint32_t>(f, "version");
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  uint32_t count = get<uint32_t>(f, "tensor count");

  CheckpointData data;
  data.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = get<uint16_t>(f, "name length");
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw IoError("checkpoint truncated while reading tensor name");
    uint8_t dtype = get<uint8_t>(f, "dtype");
    if (dtype != 0) throw IoError("unsupported tensor dtype in checkpoint: " + name);
    uint8_t ndim = get<uint8_t>(f, "ndim");
    std::vector<int> shape(ndim);
    int64_t numel = 1;
    for (auto& d : shape) {
      uint32_t v = get<uint32_t>(f, "dimension");
      if (v == 0 || v > (1u << 28)) throw IoError("implausible tensor dimension in checkpoint");
      d = int(v);
      numel *= d;
    }
    std::vector<float> payload(static_cast<size_t>(numel));
    f.read(reinterpret_cast<char*>(payload.data()), std::streamsize(payload.size() * sizeof(float)));
    if (!f) throw IoError("checkpoint truncated while reading tensor data: " + name);
    data.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(payload))});
  }
  data.step = get<uint64_t>(f, "step");
  f.read(reinterpret_cast<char*>(data.rng_state.data()), std::streamsize(data.rng_state.size()));
  if (!f) throw IoError("checkpoint truncated while reading rng state");
  return data;
}

std::vector<NamedTensor> collect(const net::Network& network, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const tape::Parameter* p : network.params()) out.push_back({prefix + p->name, p->value});
  return out;
}

void save_checkpoint(const net::Network& network, const std::filesystem::path& path) {
  CheckpointData data;
  data.tensors = collect(network);
  write_checkpoint(data, path);
}

namespace {

// Strips `prefix` from matching names; returns only the matching subset.
std::vector<NamedTensor> select_prefixed(const std::vector<NamedTensor>& tensors,
                                         const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const NamedTensor& t : tensors)
    if (t.name.rfind(prefix, 0) == 0) out.push_back({t.name.substr(prefix.size()), t.value});
  return out;
}

const Tensor* find(const std::map<std::string, const Tensor*>& table, const std::string& name) {
  auto it = table.find(name);
  return it == table.end() ? nullptr : it->second;
}

}  // namespace

net::Network network_from_tensors(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> table;
  for (const NamedTensor& t : tensors) {
    if (!table.emplace(t.name, &t.value).second)
      throw IoError("duplicate tensor in checkpoint: " + t.name);
  }

  const Tensor* e0 = find(table, "enc0.c0.w");
  if (!e0 || e0->ndim() != 4) throw IoError("checkpoint lacks a recognizable encoder");
  net::NetworkConfig cfg;
  cfg.base_width = e0->dim(0);
  cfg.in_channels = e0->dim(1);
  cfg.stages = 0;
  while (find(table, "enc" + std::to_string(cfg.stages) + ".c0.w")) ++cfg.stages;

  const Tensor* sh = find(table, "seg.head.w");
  if (!sh || sh->ndim() != 4) throw IoError("checkpoint lacks the segmentation head");
  cfg.num_classes = sh->dim(0);
  cfg.latent_dim = sh->dim(1);

  if (const Tensor* ah = find(table, "aux.head.w")) {
    if (ah->dim(0) == 2 && find(table, "aux.head.b"))
      cfg.aux = net::AuxKind::FgBg;
    else if (ah->dim(0) == 3 && !find(table, "aux.head.b"))
      cfg.aux = net::AuxKind::Reconstruction;
    else
      throw IoError("unrecognized auxiliary head shape in checkpoint");
  } else {
    cfg.aux = net::AuxKind::None;
  }

  net::Network network = net::build(cfg, 0).student;

  size_t used = 0;
  for (tape::Parameter* p : network.params()) {
    const Tensor* src = find(table, p->name);
    if (!src) throw IoError("checkpoint missing tensor " + p->name);
    if (src->shape != p->value.shape)
      throw IoError("checkpoint tensor " + p->name + " has shape " + src->shape_str() +
                    ", expected " + p->value.shape_str());
    p->value = *src;
    ++used;
  }
  if (used != table.size())
    throw IoError("checkpoint holds tensors that do not belong to the architecture");
  return network;
}

net::Network load_checkpoint(const std::filesystem::path& path) {
  CheckpointData data = read_checkpoint(path);
  for (const char* prefix : {"teacher.", "student."}) {
    std::vector<NamedTensor> subset = select_prefixed(data.tensors, prefix);
    if (!subset.empty()) return network_from_tensors(subset);
  }
  return network_from_tensors(data.tensors);
}

}  // namespace forec::ckpt
