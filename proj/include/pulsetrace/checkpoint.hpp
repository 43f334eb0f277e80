#ifndef PULSETRACE_CHECKPOINT_HPP
#define PULSETRACE_CHECKPOINT_HPP

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pulsetrace/adam.hpp"
#include "pulsetrace/model.hpp"

// Checkpoint container:
//   "PTCK" | u32 version | u32 metadata byte length | metadata ("k=v\n"
//   UTF-8 lines, keys sorted) | repeated [u32 key length | key | tensor
//   blob] until EOF.
// Tensor payloads are the f32 blobs of tensor.hpp, so save -> load -> save
// is byte-stable.

namespace pulsetrace {

inline constexpr char kCheckpointMagic[4] = {'P', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& key) const {
    for (const auto& [k, t] : tensors) {
      if (k == key) return &t;
    }
    return nullptr;
  }
};

inline void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kCheckpointMagic, 4);
  io::write_pod<std::uint32_t>(out, kCheckpointVersion);
  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) {
    meta += k;
    meta += '=';
    meta += v;
    meta += '\n';
  }
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  for (const auto& [key, tensor] : ckpt.tensors) {
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(key.size()));
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    write_tensor(out, tensor);
  }
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for write: " + path.string());
  save_checkpoint(out, ckpt);
  if (!out) throw FormatError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in) throw TruncatedError("checkpoint: truncated magic");
  if (std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
    throw BadMagicError("checkpoint: bad magic '" + std::string(magic, 4) +
                        "'");
  }
  const auto version = io::read_pod<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("checkpoint: unsupported version " +
                                  std::to_string(version));
  }
  const auto meta_len =
      io::read_pod<std::uint32_t>(in, "checkpoint metadata length");
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  if (!in) throw TruncatedError("checkpoint: truncated metadata");

  Checkpoint ckpt;
  std::istringstream lines(meta);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("checkpoint: metadata line without '=': " + line);
    }
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }

  while (true) {
    std::uint32_t key_len = 0;
    in.read(reinterpret_cast<char*>(&key_len), sizeof(key_len));
    if (in.eof()) break;
    if (!in) throw TruncatedError("checkpoint: truncated record key length");
    std::string key(key_len, '\0');
    in.read(key.data(), key_len);
    if (!in) throw TruncatedError("checkpoint: truncated record key");
    ckpt.tensors.emplace_back(std::move(key), read_tensor<float>(in));
  }
  return ckpt;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  return load_checkpoint(in);
}

// --- model <-> checkpoint -----------------------------------------------------

template <typename T>
Checkpoint checkpoint_from_model(Model<T>& model) {
  Checkpoint ckpt;
  ckpt.metadata["format"] = "pulsetrace-checkpoint";
  ckpt.metadata["profile"] = to_string(model.profile);
  ckpt.metadata["variant"] = to_string(model.variant);
  for (auto& [key, param] : model.param_registry()) {
    if constexpr (std::is_same_v<T, float>) {
      ckpt.tensors.emplace_back(key, param->value);
    } else {
      Tensor<float> f(param->value.shape());
      for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = static_cast<float>(param->value[i]);
      }
      ckpt.tensors.emplace_back(key, std::move(f));
    }
  }
  return ckpt;
}

// Appends optimizer moments and step counter for exact training resume.
template <typename T>
void append_optimizer_state(Checkpoint& ckpt, const AdamOptimizer<T>& opt) {
  ckpt.metadata["optim.step"] = std::to_string(opt.step_count());
  for (std::size_t i = 0; i < opt.keys().size(); ++i) {
    auto to_f32 = [](const Tensor<T>& t) {
      Tensor<float> f(t.shape());
      for (std::size_t j = 0; j < f.size(); ++j) {
        f[j] = static_cast<float>(t[j]);
      }
      return f;
    };
    ckpt.tensors.emplace_back("optim." + opt.keys()[i] + ".m",
                              to_f32(opt.first_moment(i)));
    ckpt.tensors.emplace_back("optim." + opt.keys()[i] + ".v",
                              to_f32(opt.second_moment(i)));
  }
}

// Fills an existing model; profile/variant metadata and every tensor shape
// must match.
template <typename T>
void load_model_from_checkpoint(const Checkpoint& ckpt, Model<T>& model) {
  auto meta = [&](const std::string& key) {
    const auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) {
      throw FormatError("checkpoint: missing metadata '" + key + "'");
    }
    return it->second;
  };
  if (meta("profile") != to_string(model.profile)) {
    throw FormatError("checkpoint: profile mismatch, checkpoint is '" +
                      meta("profile") + "', model is '" +
                      to_string(model.profile) + "'");
  }
  if (meta("variant") != to_string(model.variant)) {
    throw FormatError("checkpoint: variant mismatch, checkpoint is '" +
                      meta("variant") + "', model is '" +
                      to_string(model.variant) + "'");
  }
  for (auto& [key, param] : model.param_registry()) {
    const Tensor<float>* stored = ckpt.find(key);
    if (!stored) throw FormatError("checkpoint: missing key '" + key + "'");
    if (stored->shape() != param->value.shape()) {
      throw FormatError("checkpoint: payload size mismatch for '" + key +
                        "': stored " +
                        Tensor<float>::shape_string(stored->shape()) +
                        ", model needs " +
                        Tensor<float>::shape_string(param->value.shape()));
    }
    for (std::size_t i = 0; i < stored->size(); ++i) {
      param->value[i] = static_cast<T>((*stored)[i]);
    }
    param->zero_grad();
  }
}

// Convenience: construct the model a checkpoint describes, then fill it.
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
  const auto profile_it = ckpt.metadata.find("profile");
  const auto variant_it = ckpt.metadata.find("variant");
  if (profile_it == ckpt.metadata.end() ||
      variant_it == ckpt.metadata.end()) {
    throw FormatError("checkpoint: missing profile/variant metadata");
  }
  auto model = Model<T>::create(parse_profile(profile_it->second),
                                parse_variant(variant_it->second), 0);
  load_model_from_checkpoint(ckpt, model);
  return model;
}

}  // namespace pulsetrace

#endif  // PULSETRACE_CHECKPOINT_HPP
