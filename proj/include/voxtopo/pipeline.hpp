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

// Mesh -> blob -> generator -> network -> mesh, plus the glue the CLI needs
// (stage errors, dataset-to-training conversion).

#pragma once

#include <functional>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "voxtopo/meshio.hpp"
#include "voxtopo/netgen.hpp"
#include "voxtopo/neural.hpp"
#include "voxtopo/procnet.hpp"
#include "voxtopo/spatial_graph.hpp"
#include "voxtopo/voxgrid.hpp"

namespace voxtopo {

/// Wraps a failure with the name of the stage that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what, bool usage)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), usage_(usage) {}
  const std::string& stage() const noexcept { return stage_; }
  /// True for configuration / argument problems found before heavy work.
  bool usage() const noexcept { return usage_; }

 private:
  std::string stage_;
  bool usage_;
};

template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError& e) {
    throw StageError(stage, e.what(), true);
  } catch (const std::invalid_argument& e) {
    throw StageError(stage, e.what(), true);
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), false);
  }
}

inline ExtractParams extract_defaults(Style s) {
  return ExtractParams::for_mode(s == Style::network3d ? ExtractMode::network3d : ExtractMode::ghirigoro);
}

inline MeshStyle mesh_style_for(Style s) {
  MeshStyle m;
  m.draw_nodes = s == Style::network3d;
  return m;
}

/// Max-pool by an integer factor per axis. Keeps thin structures and the
/// blob-contains-target relation of a pair.
inline VoxelGrid downsample_max(const VoxelGrid& g, int factor) {
  const GridDims d = g.dims();
  if (factor < 1 || d.d % factor || d.h % factor || d.w % factor)
    throw std::invalid_argument("downsample factor " + std::to_string(factor) + " does not divide " + to_string(d));
  const GridDims o{d.d / factor, d.h / factor, d.w / factor};
  VoxelGrid out(o, g.channels(), 0.0f, g.voxel_size() * factor);
  for (int c = 0; c < g.channels(); ++c)
    for (int z = 0; z < d.d; ++z)
      for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) {
          float& v = out.at(c, z / factor, y / factor, x / factor);
          v = std::max(v, g.at(c, z, y, x));
        }
  return out;
}

/// Training pairs for every stage resolution. The dataset resolution must be
/// a multiple of each stage resolution.
inline nn::TrainingData training_data(const LoadedDataset& ds, const std::vector<nn::TrainStage>& stages) {
  nn::TrainingData out;
  for (const auto& st : stages) {
    if (out.count(st.resolution)) continue;
    if (st.resolution <= 0 || ds.resolution % st.resolution != 0)
      throw ConfigError("stage resolution " + std::to_string(st.resolution) + " does not divide dataset resolution " +
                        std::to_string(ds.resolution));
    const int f = ds.resolution / st.resolution;
    auto& v = out[st.resolution];
    v.reserve(ds.pairs.size());
    for (const auto& p : ds.pairs)
      v.push_back(f == 1 ? nn::TrainingPair{p.input_blob, p.target}
                         : nn::TrainingPair{downsample_max(p.input_blob, f), downsample_max(p.target, f)});
  }
  return out;
}

/// Parses "res:batch:epochs[:max_steps]" items separated by commas.
inline std::vector<nn::TrainStage> parse_stages(const std::string& text, int default_batch = 8) {
  std::vector<nn::TrainStage> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    std::vector<long long> f;
    std::size_t p = 0;
    while (p <= item.size()) {
      const std::size_t e = std::min(item.find(':', p), item.size());
      const std::string tok = item.substr(p, e - p);
      p = e + 1;
      try {
        std::size_t used = 0;
        f.push_back(std::stoll(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError("bad stage item '" + item + "' (expected res:batch:epochs[:max_steps])");
      }
    }
    if (f.size() < 1 || f.size() > 4) throw ConfigError("bad stage item '" + item + "'");
    nn::TrainStage st;
    st.resolution = int(f[0]);
    st.batch_size = f.size() > 1 ? int(f[1]) : default_batch;
    st.epochs = f.size() > 2 ? int(f[2]) : 1;
    st.max_steps = f.size() > 3 ? f[3] : -1;
    out.push_back(st);
  }
  if (out.empty()) throw ConfigError("empty stage list");
  return out;
}

inline void check_resolution(const std::string& what, int res) {
  if (res <= 0 || res % 16 != 0)
    throw ConfigError(what + " resolution " + std::to_string(res) + " is not a positive multiple of 16");
}

struct PipelineConfig {
  Style style = Style::network3d;
  int resolution = 192;  // inference
  int margin = 2;
  ExtractParams extract = extract_defaults(Style::network3d);
  MeshStyle mesh = mesh_style_for(Style::network3d);
  nn::InferOptions infer;
  std::uint64_t seed = 0;

  void validate() const {
    check_resolution("inference", resolution);
    if (margin < 0 || 2 * margin + 2 > resolution) throw ConfigError("margin " + std::to_string(margin) + " too large");
    extract.validate();
  }

  nlohmann::json to_json() const {
    return {{"style", style_name(style)},
            {"resolution", resolution},
            {"margin", margin},
            {"seed", seed},
            {"dropout_at_inference", infer.dropout_at_inference},
            {"extract",
             {{"mode", mode_name(extract.mode)},
              {"k_nodes", extract.k_nodes},
              {"link_multiplier", extract.link_multiplier},
              {"tau", extract.tau},
              {"cell_size", extract.cell_size},
              {"rounds", extract.rounds},
              {"max_link_length", extract.max_link_length},
              {"seed", extract.seed}}},
            {"mesh",
             {{"draw_nodes", mesh.draw_nodes},
              {"link_radius", mesh.link_radius},
              {"capsules", mesh.capsules}}}};
  }
};

/// Channel count a generator must have for a style.
inline void check_generator(const nn::Model<float>& gen, Style s) {
  if (gen.out_channels() != style_channels(s))
    throw ConfigError("checkpoint generator has " + std::to_string(gen.out_channels()) + " output channels; style " +
                      style_name(s) + " needs " + std::to_string(style_channels(s)));
}

inline SpatialGraph extract_for_style(const VoxelGrid& out, Style s, const ExtractParams& p, ExtractStats* st = nullptr) {
  if (s == Style::network3d) {
    if (out.channels() != 2) throw InvalidInput("network3d extraction needs a 2-channel grid");
    return extract_network(out, 0, out, 1, p, st);
  }
  return extract_ghirigoro(out, 0, p, st);
}

struct PipelineResult {
  VoxelGrid blob;
  VoxelGrid output;
  SpatialGraph graph;
  TriMesh mesh;
  ExtractStats stats;
};

using StageLog = std::function<void(const std::string& stage, const nlohmann::json& info)>;

inline PipelineResult run_pipeline(const TriMesh& input, nn::Model<float>& gen, const PipelineConfig& cfg,
                                   const StageLog& log = {}) {
  run_stage("config", [&] {
    cfg.validate();
    check_generator(gen, cfg.style);
  });
  PipelineResult r;
  r.blob = run_stage("voxelize", [&] { return voxelize_mesh(input, cfg.resolution, cfg.margin); });
  if (log) log("voxelize", {{"occupied", std::count(r.blob.data().begin(), r.blob.data().end(), 1.0f)}});
  r.output = run_stage("infer", [&] { return nn::infer(gen, r.blob, cfg.infer); });
  if (log) log("infer", {{"channels", r.output.channels()}});
  r.graph = run_stage("extract", [&] { return extract_for_style(r.output, cfg.style, cfg.extract, &r.stats); });
  if (log) log("extract", {{"nodes", r.graph.nodes.size()}, {"links", r.graph.links.size()}});
  r.mesh = run_stage("export", [&] { return network_to_mesh(r.graph, cfg.mesh); });
  if (log) log("export", {{"vertices", r.mesh.vertices.size()}, {"triangles", r.mesh.triangles.size()}});
  return r;
}

}  // namespace voxtopo
