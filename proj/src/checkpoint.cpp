#include "hfan/checkpoint.hpp"

#include <cstring>
#include <map>
#include <set>

#include "hfan/tensor_io.hpp"

namespace hfan {

Tensor<float> encode_counter(std::uint64_t v) {
  Tensor<float> t({4});
  for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<float>((v >> (16 * i)) & 0xffffu);
  return t;
}

std::uint64_t decode_counter(const Tensor<float>& t) {
  if (t.shape() != Shape{4}) throw FormatError("counter entry has shape " + shape_str(t.shape()));
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const float c = t[i];
    if (!(c >= 0.0f && c <= 65535.0f) || c != static_cast<float>(static_cast<std::uint32_t>(c))) {
      throw FormatError("counter entry is not a 16-bit chunk");
    }
    v |= std::uint64_t(static_cast<std::uint32_t>(c)) << (16 * i);
  }
  return v;
}

namespace {

using Entries = std::vector<std::pair<std::string, Tensor<float>>>;

Entries collect_entries(SegNet<float>& model, AdamW<float>* optim) {
  Entries e;
  ModuleState<float> st = model.state();
  for (Parameter<float>* p : st.params) e.emplace_back("param:" + p->name, p->value);
  for (const auto& bn : st.batchnorms) {
    e.emplace_back("bn:" + bn.name + ".running_mean", bn.state->running_mean);
    e.emplace_back("bn:" + bn.name + ".running_var", bn.state->running_var);
    e.emplace_back("bn:" + bn.name + ".batches", encode_counter(bn.state->batches));
  }
  if (optim) {
    auto& o = *optim;
    for (std::size_t k = 0; k < o.params().size(); ++k) {
      e.emplace_back("adam_m:" + o.params()[k]->name, o.first_moments()[k]);
      e.emplace_back("adam_v:" + o.params()[k]->name, o.second_moments()[k]);
    }
    e.emplace_back("optim.step", encode_counter(o.steps()));
  }
  return e;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, SegNet<float>& model, AdamW<float>* optim) {
  const Entries entries = collect_entries(model, optim);
  std::vector<std::uint8_t> bytes(kCheckpointMagic, kCheckpointMagic + 4);
  io::append_u32(bytes, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    io::append_u32(bytes, static_cast<std::uint32_t>(name.size()));
    bytes.insert(bytes.end(), name.begin(), name.end());
    io::encode_tensor(bytes, t);
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

CheckpointInfo load_checkpoint(const std::filesystem::path& path, SegNet<float>& model, AdamW<float>* optim) {
  const std::vector<std::uint8_t> bytes = io::read_file(path);
  std::map<std::string, Tensor<float>> stored;
  try {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
      throw FormatError("bad checkpoint magic at offset 0 (expected HFC1)");
    }
    std::size_t offset = 4;
    const std::uint32_t count = io::read_u32(bytes, offset);
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t len = io::read_u32(bytes, offset);
      if (len > bytes.size() - offset) throw FormatError("truncated entry name at offset " + std::to_string(offset));
      std::string name(bytes.begin() + long(offset), bytes.begin() + long(offset + len));
      offset += len;
      stored[name] = io::decode_tensor(bytes, offset);
    }
    if (offset != bytes.size()) throw FormatError("trailing bytes at offset " + std::to_string(offset));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  CheckpointInfo info;
  info.has_optimizer = stored.count("optim.step") > 0;
  // Validate everything before touching the model so a bad file leaves it unchanged.
  Entries expected = collect_entries(model, info.has_optimizer ? optim : nullptr);
  std::set<std::string> wanted;
  for (const auto& [name, t] : expected) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      throw FormatError(path.string() + ": no entry '" + name + "' (checkpoint does not match the model config)");
    }
    if (it->second.shape() != t.shape()) {
      throw FormatError(path.string() + ": entry '" + name + "' has shape " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(t.shape()));
    }
    wanted.insert(name);
  }
  for (const auto& [name, t] : stored) {
    if (!wanted.count(name) && !(name.rfind("adam_", 0) == 0 || name == "optim.step")) {
      throw FormatError(path.string() + ": entry '" + name + "' is not part of this model config");
    }
  }

  ModuleState<float> st = model.state();
  for (Parameter<float>* p : st.params) p->value = stored.at("param:" + p->name);
  for (const auto& bn : st.batchnorms) {
    bn.state->running_mean = stored.at("bn:" + bn.name + ".running_mean");
    bn.state->running_var = stored.at("bn:" + bn.name + ".running_var");
    bn.state->batches = decode_counter(stored.at("bn:" + bn.name + ".batches"));
  }
  if (info.has_optimizer) {
    info.step = decode_counter(stored.at("optim.step"));
    if (optim) {
      for (std::size_t k = 0; k < optim->params().size(); ++k) {
        optim->first_moments()[k] = stored.at("adam_m:" + optim->params()[k]->name);
        optim->second_moments()[k] = stored.at("adam_v:" + optim->params()[k]->name);
      }
      optim->set_steps(info.step);
    }
  }
  return info;
}

}  // namespace hfan
