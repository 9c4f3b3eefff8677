#include <algorithm>
#include <cstring>
#include <fstream>

#include "kvt/model.hpp"
#include "kvt/text_format.hpp"

namespace kvt {

namespace {

constexpr char kMagic[8] = {'K', 'V', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("checkpoint truncated");
  return v;
}

std::string read_string(std::istream& in, std::uint64_t limit = 1ULL << 32) {
  const auto n = read_u64(in);
  if (n > limit) throw IoError("checkpoint string length out of range");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::vector<std::string>& vocab,
                     const std::string& task) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  auto meta = model.config().to_map();
  meta["task"] = task;
  write_string(out, write_key_values(meta));
  write_u64(out, vocab.size());
  for (const auto& token : vocab) write_string(out, token);
  const auto params = model.named_parameters();
  write_u64(out, params.size());
  for (const auto& [name, tensor] : params) {
    write_string(out, name);
    write_u64(out, tensor.ndim());
    for (auto s : tensor.shape()) write_u64(out, s);
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError(path.string() + " is not a checkpoint file");
  }
  Checkpoint ckpt;
  auto meta = parse_key_values(read_string(in));
  if (auto it = meta.find("task"); it != meta.end()) {
    ckpt.task = it->second;
    meta.erase(it);
  }
  ckpt.config = ModelConfig::from_map(meta);
  const auto vocab_n = read_u64(in);
  if (vocab_n > (1ULL << 24)) throw IoError("checkpoint vocabulary size out of range");
  for (std::uint64_t i = 0; i < vocab_n; ++i) ckpt.vocab.push_back(read_string(in));
  const auto count = read_u64(in);
  if (count > (1ULL << 20)) throw IoError("checkpoint tensor count out of range");
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = read_string(in, 4096);
    const auto ndim = read_u64(in);
    if (ndim == 0 || ndim > 8) throw IoError("checkpoint tensor '" + name + "' has bad rank");
    Shape shape(ndim);
    for (auto& s : shape) s = read_u64(in);
    std::vector<float> values(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)))) {
      throw IoError("checkpoint truncated in tensor '" + name + "'");
    }
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return ckpt;
}

Model load_model(const Checkpoint& checkpoint) {
  Model model(checkpoint.config);
  auto params = model.named_parameters();
  if (params.size() != checkpoint.tensors.size()) {
    throw IoError("checkpoint holds " + std::to_string(checkpoint.tensors.size()) + " tensors, model expects " +
                  std::to_string(params.size()));
  }
  for (auto& [name, tensor] : params) {
    const auto it = std::find_if(checkpoint.tensors.begin(), checkpoint.tensors.end(),
                                 [&](const auto& entry) { return entry.first == name; });
    if (it == checkpoint.tensors.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != tensor.shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                    shape_str(tensor.shape()));
    }
    std::copy(it->second.data().begin(), it->second.data().end(), tensor.mutable_data().begin());
  }
  return model;
}

}  // namespace kvt
