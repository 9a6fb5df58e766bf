// Copyright 2026 The voxtopo Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// .v2vw checkpoint files.
//
//   bytes 0..3   "V2VW"
//   bytes 4..7   format version (u32, little endian)
//   bytes 8..11  manifest length in bytes (u32)
//   manifest     UTF-8 JSON: model architectures, tensor table, training state
//   payload      f32 little endian, tensors in manifest order
//
// The manifest's tensor table gives name, shape, and float offset of every
// tensor so a reader never has to infer layout from the architecture.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxtopo/error.hpp"
#include "voxtopo/neural/model.hpp"
#include "voxtopo/neural/optim.hpp"

namespace voxtopo::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Where training resumes and everything needed to continue bit-exactly.
struct TrainingState {
  std::uint64_t seed = 0;
  int stage = 0;          // next batch position
  int epoch = 0;
  int batch = 0;
  std::int64_t step = 0;  // completed optimizer steps
  nlohmann::json config;  // resolved training configuration
  Adam<float> opt_g, opt_d;
};

struct CheckpointContents {
  std::optional<Model<float>> generator;
  std::optional<Model<float>> discriminator;
  std::optional<TrainingState> training;
  nlohmann::json manifest;
};

namespace detail {

struct PayloadWriter {
  nlohmann::json table = nlohmann::json::array();
  std::vector<float> data;

  void add(const std::string& name, const std::vector<int>& shape, const std::vector<float>& values) {
    table.push_back({{"name", name}, {"shape", shape}, {"offset", data.size()}, {"count", values.size()}});
    data.insert(data.end(), values.begin(), values.end());
  }
};

inline void add_model(PayloadWriter& w, nlohmann::json& models, Model<float>& m) {
  const std::size_t start = w.table.size();
  for (auto& p : m.params()) w.add(m.kind() + "." + p.name, p.shape, *p.value);
  nlohmann::json arch = m.architecture();
  arch["tensors"] = nlohmann::json::array();
  for (std::size_t i = start; i < w.table.size(); ++i) arch["tensors"].push_back(w.table[i]["name"]);
  models[m.kind()] = arch;
}

inline void add_optimizer(PayloadWriter& w, nlohmann::json& out, const std::string& who, Model<float>& m,
                          Adam<float>& opt) {
  const auto params = Adam<float>::trainable(m);
  out[who] = {{"t", opt.steps()},
              {"lr", opt.config().lr},
              {"beta1", opt.config().beta1},
              {"beta2", opt.config().beta2},
              {"eps", opt.config().eps}};
  if (opt.first_moments().empty()) return;
  for (std::size_t k = 0; k < params.size(); ++k) {
    w.add("adam." + who + ".m." + params[k].name, params[k].shape, opt.first_moments()[k]);
    w.add("adam." + who + ".v." + params[k].name, params[k].shape, opt.second_moments()[k]);
  }
}

template <typename U>
void put_le(std::vector<unsigned char>& out, U v) {
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.insert(out.end(), buf, buf + sizeof(U));
}

}  // namespace detail

/// Serialises any subset of {generator, discriminator, training state}.
/// Training state requires both models.
inline std::vector<unsigned char> checkpoint_bytes(Model<float>* gen, Model<float>* disc,
                                                   TrainingState* state = nullptr) {
  detail::PayloadWriter w;
  nlohmann::json manifest;
  manifest["format"] = "v2vw";
  nlohmann::json models = nlohmann::json::object();
  if (gen) detail::add_model(w, models, *gen);
  if (disc) detail::add_model(w, models, *disc);
  if (models.empty()) throw std::invalid_argument("checkpoint needs at least one model");
  manifest["models"] = models;
  if (state) {
    if (!gen || !disc) throw std::invalid_argument("training state requires both models");
    nlohmann::json opt;
    detail::add_optimizer(w, opt, "generator", *gen, state->opt_g);
    detail::add_optimizer(w, opt, "discriminator", *disc, state->opt_d);
    manifest["training"] = {{"seed", state->seed},   {"stage", state->stage}, {"epoch", state->epoch},
                            {"batch", state->batch}, {"step", state->step},   {"config", state->config},
                            {"optimizers", opt}};
  }
  manifest["tensors"] = w.table;
  manifest["payload_floats"] = w.data.size();

  const std::string text = manifest.dump();
  std::vector<unsigned char> out{'V', '2', 'V', 'W'};
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const auto* bytes = reinterpret_cast<const unsigned char*>(w.data.data());
  out.insert(out.end(), bytes, bytes + w.data.size() * sizeof(float));
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, Model<float>* gen, Model<float>* disc,
                            TrainingState* state = nullptr) {
  const auto bytes = checkpoint_bytes(gen, disc, state);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

struct TensorTable {
  std::map<std::string, nlohmann::json> entries;
  const float* payload = nullptr;
  std::size_t floats = 0;

  const float* find(const std::string& name, const std::vector<int>& shape, std::size_t count) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw CheckpointError("checkpoint lacks tensor " + name);
    const auto& e = it->second;
    if (e.at("shape").get<std::vector<int>>() != shape || e.at("count").get<std::size_t>() != count)
      throw CheckpointError("tensor " + name + " has shape " + e.at("shape").dump() + ", model expects " +
                            nlohmann::json(shape).dump());
    const std::size_t off = e.at("offset").get<std::size_t>();
    if (off + count > floats) throw FormatError("tensor " + name + " extends past the payload");
    return payload + off;
  }
};

inline Model<float> rebuild(const nlohmann::json& arch) {
  const std::string kind = arch.at("kind").get<std::string>();
  Model<float> m;
  if (kind == "generator") {
    GeneratorOptions opt;
    for (auto& l : arch.at("layers"))
      if (l.at("kind") == "dropout") {
        opt.dropout_rate = l.at("rate").get<double>();
        break;
      }
    m = build_generator<float>(arch.at("out_channels").get<int>(), opt);
  } else if (kind == "discriminator") {
    DiscriminatorOptions opt;
    for (auto& l : arch.at("layers"))
      if (l.at("kind") == "batchnorm3d") opt.batchnorm = true;
    m = build_discriminator<float>(arch.at("in_channels").get<int>(), opt);
  } else {
    throw CheckpointError("unknown model kind '" + kind + "' in checkpoint");
  }
  const auto want = m.architecture();
  const auto& got = arch.at("layers");
  if (got.size() != want["layers"].size())
    throw CheckpointError(kind + " manifest lists " + std::to_string(got.size()) + " layers, architecture has " +
                          std::to_string(want["layers"].size()));
  for (std::size_t i = 0; i < got.size(); ++i)
    if (got[i] != want["layers"][i])
      throw CheckpointError(kind + " layer " + std::to_string(i) + " differs: manifest " + got[i].dump() +
                            ", architecture " + want["layers"][i].dump());
  if (arch.at("parameter_count") != want["parameter_count"])
    throw CheckpointError(kind + " parameter count mismatch");
  return m;
}

inline void fill_model(Model<float>& m, const TensorTable& t) {
  for (auto& p : m.params()) {
    const float* src = t.find(m.kind() + "." + p.name, p.shape, p.value->size());
    std::copy_n(src, p.value->size(), p.value->begin());
  }
}

inline void fill_optimizer(Adam<float>& opt, const nlohmann::json& j, const std::string& who, Model<float>& m,
                           const TensorTable& t) {
  opt = Adam<float>(AdamConfig{j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
                               j.at("eps").get<double>()});
  opt.set_steps(j.at("t").get<std::int64_t>());
  if (opt.steps() == 0) return;
  for (auto& p : Adam<float>::trainable(m)) {
    const float* mm = t.find("adam." + who + ".m." + p.name, p.shape, p.value->size());
    const float* vv = t.find("adam." + who + ".v." + p.name, p.shape, p.value->size());
    opt.first_moments().emplace_back(mm, mm + p.value->size());
    opt.second_moments().emplace_back(vv, vv + p.value->size());
  }
}

}  // namespace detail

inline CheckpointContents parse_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "V2VW", 4) != 0) throw FormatError("not a V2VW checkpoint (bad magic)");
  std::uint32_t version, len;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&len, bytes.data() + 8, 4);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  if (12 + std::size_t(len) > bytes.size()) throw FormatError("checkpoint manifest length exceeds file size");
  CheckpointContents out;
  try {
    out.manifest = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const std::size_t payload_bytes = bytes.size() - 12 - len;
  const std::size_t floats = out.manifest.value("payload_floats", std::size_t{0});
  if (payload_bytes != floats * sizeof(float))
    throw FormatError("checkpoint payload holds " + std::to_string(payload_bytes) + " bytes, manifest declares " +
                      std::to_string(floats) + " floats");
  std::vector<float> payload(floats);
  std::memcpy(payload.data(), bytes.data() + 12 + len, payload_bytes);

  detail::TensorTable table;
  table.payload = payload.data();
  table.floats = floats;
  try {
    for (auto& e : out.manifest.at("tensors")) table.entries[e.at("name").get<std::string>()] = e;
    const auto& models = out.manifest.at("models");
    for (const char* kind : {"generator", "discriminator"}) {
      if (!models.contains(kind)) continue;
      Model<float> m = detail::rebuild(models.at(kind));
      detail::fill_model(m, table);
      (std::string(kind) == "generator" ? out.generator : out.discriminator) = std::move(m);
    }
    if (out.manifest.contains("training")) {
      const auto& t = out.manifest["training"];
      if (!out.generator || !out.discriminator) throw CheckpointError("training state without both models");
      TrainingState st;
      st.seed = t.at("seed").get<std::uint64_t>();
      st.stage = t.at("stage").get<int>();
      st.epoch = t.at("epoch").get<int>();
      st.batch = t.at("batch").get<int>();
      st.step = t.at("step").get<std::int64_t>();
      st.config = t.at("config");
      detail::fill_optimizer(st.opt_g, t.at("optimizers").at("generator"), "generator", *out.generator, table);
      detail::fill_optimizer(st.opt_d, t.at("optimizers").at("discriminator"), "discriminator", *out.discriminator,
                             table);
      out.training = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

inline CheckpointContents load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file_bytes(path));
}

namespace detail {
inline std::string model_kinds(const CheckpointContents& c) {
  std::string kinds;
  for (auto& [k, v] : c.manifest["models"].items()) kinds += (kinds.empty() ? "" : ", ") + k;
  return kinds;
}
}  // namespace detail

/// Loads the generator; optionally insists on an output channel count.
inline Model<float> load_generator(const std::filesystem::path& path, std::optional<int> out_channels = {}) {
  auto c = load_checkpoint(path);
  if (!c.generator) throw CheckpointError(path.string() + " holds no generator (found: " + detail::model_kinds(c) + ")");
  if (out_channels && c.generator->out_channels() != *out_channels)
    throw CheckpointError("generator in " + path.string() + " has " + std::to_string(c.generator->out_channels()) +
                          " output channels, expected " + std::to_string(*out_channels));
  return std::move(*c.generator);
}

inline Model<float> load_discriminator(const std::filesystem::path& path) {
  auto c = load_checkpoint(path);
  if (!c.discriminator)
    throw CheckpointError(path.string() + " holds no discriminator (found: " + detail::model_kinds(c) + ")");
  return std::move(*c.discriminator);
}

}  // namespace voxtopo::nn
