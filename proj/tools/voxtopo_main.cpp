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

// voxtopo command-line tool. Status records go to stderr as one JSON object
// per line; `inspect` writes its report to stdout.

#include <CLI11.hpp>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "voxtopo/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace voxtopo;

namespace {

const auto g_start = std::chrono::steady_clock::now();

void log_record(const std::string& stage, const std::string& event, json info = json::object()) {
  const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - g_start).count();
  json rec = {{"t", std::round(t * 1000) / 1000}, {"stage", stage}, {"event", event}};
  rec.update(info);
  std::cerr << rec.dump() << '\n';
}

struct Globals {
  int threads = 0;
  bool deterministic = false;
  std::uint64_t seed = 0;
};

struct ExtractFlags {
  std::optional<int> k_nodes, link_mult, rounds;
  std::optional<double> tau, cell_size, max_link;

  void add(CLI::App* sub) {
    sub->add_option("--k-nodes", k_nodes, "Number of node centers");
    sub->add_option("--link-mult", link_mult, "Link points per node center");
    sub->add_option("--tau", tau, "Voxel weight threshold in [0,1)");
    sub->add_option("--rounds", rounds, "Shifted-lattice rounds");
    sub->add_option("--cell-size", cell_size, "Proximity lattice side in voxels (default: from occupancy)");
    sub->add_option("--max-link", max_link, "Longest accepted link path in voxels (default: 15 per 64 voxels)");
  }
  ExtractParams apply(ExtractParams p, std::uint64_t seed) const {
    if (k_nodes) p.k_nodes = *k_nodes;
    if (link_mult) p.link_multiplier = *link_mult;
    if (rounds) p.rounds = *rounds;
    if (tau) p.tau = *tau;
    if (cell_size) p.cell_size = *cell_size;
    if (max_link) p.max_link_length = *max_link;
    p.seed = seed;
    return p;
  }
};

bool is_mesh_path(const fs::path& p) {
  const auto e = lower_extension(p);
  return e == ".obj" || e == ".stl";
}

fs::path graph_side_file(const fs::path& mesh_out) {
  fs::path p = mesh_out;
  p.replace_extension(".graph.json");
  return p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Writes the resolved options (globals plus the active subcommand) next to
/// an output file, in the format --config reads.
void emit_config(const CLI::App& app, const fs::path& out, const json& resolved) {
  fs::path p = out;
  p += ".run.toml";
  ensure_parent(p);
  const std::string sub = app.get_subcommands().front()->get_name() + ".";
  std::istringstream all(app.config_to_str(true, false));
  std::ofstream f(p);
  for (std::string line; std::getline(all, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.substr(eq + 1) == "\"\"") continue;
    const std::string key = line.substr(0, eq);
    if (key.find('.') == std::string::npos || key.rfind(sub, 0) == 0) f << line << '\n';
  }
  log_record("config", "resolved", {{"file", p.string()}, {"config", resolved}});
}

void write_graph_outputs(const SpatialGraph& g, const fs::path& out, const MeshStyle& style,
                         const TriMesh* built = nullptr) {
  ensure_parent(out);
  if (is_mesh_path(out)) {
    const auto mesh = built ? *built : network_to_mesh(g, style);
    save_mesh(mesh, out);
    save_graph(g, graph_side_file(out).string());
    log_record("export", "written",
               {{"mesh", out.string()}, {"graph", graph_side_file(out).string()}, {"triangles", mesh.triangles.size()}});
  } else {
    save_graph(g, out.string());
    log_record("export", "written", {{"graph", out.string()}});
  }
}

json stats_json(const ExtractStats& s) {
  return {{"node_voxels", s.node_voxels}, {"link_voxels", s.link_voxels}, {"k_nodes", s.k_nodes},
          {"k_links", s.k_links},         {"cell_size", s.cell_size},     {"max_link_length", s.max_link_length},
          {"proximity_edges", s.proximity_edges}, {"truncated_cells", s.truncated_cells},
          {"candidate_pairs", s.candidate_pairs}, {"unreachable", s.unreachable},
          {"dropped_near_node", s.dropped_near_node}};
}

json inspect_file(const fs::path& path) {
  if (fs::is_directory(path)) {
    if (!fs::exists(path / "manifest.json")) throw InvalidInput("directory has no manifest.json");
    return inspect_file(path / "manifest.json");
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  char magic[4] = {};
  f.read(magic, 4);
  f.seekg(0);
  if (f.gcount() == 4 && std::memcmp(magic, "VXGD", 4) == 0) {
    const auto h = read_vgrid_header(f);
    return {{"type", "vgrid"},
            {"version", h.version},
            {"dims", {h.dims.d, h.dims.h, h.dims.w}},
            {"channels", h.channels},
            {"voxel_size", h.voxel_size}};
  }
  if (std::memcmp(magic, "V2VW", 4) == 0) {
    unsigned char head[12];
    f.read(reinterpret_cast<char*>(head), 12);
    if (f.gcount() != 12) throw FormatError("truncated checkpoint header");
    auto le32 = [&](int o) { return std::uint32_t(head[o]) | std::uint32_t(head[o + 1]) << 8 |
                                    std::uint32_t(head[o + 2]) << 16 | std::uint32_t(head[o + 3]) << 24; };
    std::string text(le32(8), '\0');
    f.read(text.data(), std::streamsize(text.size()));
    if (f.gcount() != std::streamsize(text.size())) throw FormatError("truncated checkpoint manifest");
    json m = json::parse(text);
    json out = {{"type", "checkpoint"}, {"version", le32(4)}, {"payload_floats", m.value("payload_floats", 0)}};
    for (auto& [name, model] : m.at("models").items()) {
      out["models"][name] = {{"in_channels", model.value("in_channels", 0)},
                             {"out_channels", model.value("out_channels", 0)},
                             {"parameter_count", model.value("parameter_count", 0)},
                             {"blocks", model.value("blocks", json::array())}};
    }
    if (m.contains("training")) {
      json t = m["training"];
      t.erase("optimizers");
      out["training"] = t;
    }
    return out;
  }
  const json j = json::parse(read_text_file(path));
  if (j.value("format", "") == "voxtopo-dataset") {
    json out = j;
    out.erase("samples");
    out["type"] = "dataset";
    out["sample_count"] = j.at("samples").size();
    return out;
  }
  if (j.contains("nodes") && j.contains("links")) {
    const auto g = graph_from_json(j);
    std::size_t points = 0;
    for (auto& l : g.links) points += l.path.size();
    return {{"type", "graph"}, {"nodes", g.nodes.size()}, {"links", g.links.size()}, {"polyline_points", points}};
  }
  throw InvalidInput("unrecognized file: " + path.string());
}

int run(int argc, char** argv) {
  CLI::App app{"voxtopo: voxel shapes to spatial networks"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML-style key = value file; command-line flags take precedence");
  Globals G;
  app.add_option("--threads", G.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_flag("--deterministic", G.deterministic, "Bit-exact mode (results independent of --threads)");
  app.add_option("--seed", G.seed, "Global seed");

  // voxelize
  auto* vox = app.add_subcommand("voxelize", "Mesh (OBJ/STL) to a filled occupancy grid");
  std::string vox_in, vox_out;
  int vox_res = 64, vox_margin = 2;
  vox->add_option("mesh", vox_in, "Input mesh")->required()->check(CLI::ExistingFile);
  vox->add_option("--res", vox_res, "Grid resolution")->check(CLI::PositiveNumber);
  vox->add_option("--margin", vox_margin, "Empty border in voxels")->check(CLI::NonNegativeNumber);
  vox->add_option("-o,--out", vox_out, "Output .vgrid")->required();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Synthesize a blob/target training dataset");
  std::string gen_out, gen_style = "network3d";
  DatasetConfig dcfg;
  gen->add_option("--style", gen_style, "network3d or ghirigoro")->check(CLI::IsMember({"network3d", "ghirigoro"}));
  gen->add_option("--res", dcfg.resolution, "Grid resolution");
  gen->add_option("--margin", dcfg.margin, "Empty border in voxels");
  gen->add_option("--networks", dcfg.networks, "Base networks");
  gen->add_option("--augment", dcfg.augment_count, "Rotations per network");
  gen->add_option("--n-min", dcfg.n_min, "Smallest node count");
  gen->add_option("--n-max", dcfg.n_max, "Largest node count");
  gen->add_option("-o,--out", gen_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train the generator/discriminator pair on a dataset");
  std::string tr_data, tr_out, tr_stages = "32:8:10,64:8:10,64:2:10,64:1:10", tr_resume;
  int tr_batch = 8;
  std::int64_t tr_ckpt_every = 0;
  double tr_lambda = 100.0;
  tr->add_option("dataset", tr_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--stages", tr_stages, "res:batch:epochs[:max_steps], comma separated");
  tr->add_option("--batch", tr_batch, "Batch size for stages that give none")->check(CLI::PositiveNumber);
  tr->add_option("--checkpoint-every", tr_ckpt_every, "Extra checkpoint every N steps (0 = per stage only)");
  tr->add_option("--lambda-l1", tr_lambda, "Weight of the L1 term");
  tr->add_option("--resume", tr_resume, "Checkpoint with training state")->check(CLI::ExistingFile);
  tr->add_option("-o,--out", tr_out, "Output directory")->required();

  // infer
  auto* inf = app.add_subcommand("infer", "Run the generator on a blob grid");
  std::string inf_in, inf_out, inf_ckpt;
  std::optional<int> inf_res;
  bool inf_dropout = false;
  inf->add_option("blob", inf_in, "Input .vgrid (1 channel)")->required()->check(CLI::ExistingFile);
  inf->add_option("--ckpt", inf_ckpt, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--res", inf_res, "Expected grid resolution");
  inf->add_flag("--dropout-at-inference", inf_dropout, "Keep dropout active");
  inf->add_option("-o,--out", inf_out, "Output .vgrid")->required();

  // extract
  auto* ex = app.add_subcommand("extract", "Generator output grid to a spatial network");
  std::string ex_in, ex_out;
  std::optional<std::string> ex_style;
  ExtractFlags ex_flags;
  ex->add_option("grid", ex_in, "Generator output .vgrid")->required()->check(CLI::ExistingFile);
  ex->add_option("--style", ex_style, "network3d or ghirigoro (default: from channel count)")
      ->check(CLI::IsMember({"network3d", "ghirigoro"}));
  ex_flags.add(ex);
  ex->add_option("-o,--out", ex_out, "Output graph .json, or .obj/.stl (graph written alongside)")->required();

  // baseline
  auto* bl = app.add_subcommand("baseline", "Network straight from the filled shape (no generator)");
  std::string bl_in, bl_out;
  ExtractFlags bl_flags;
  bl->add_option("grid", bl_in, "Filled .vgrid")->required()->check(CLI::ExistingFile);
  bl_flags.add(bl);
  bl->add_option("-o,--out", bl_out, "Output graph .json, or .obj/.stl (graph written alongside)")->required();

  // export
  auto* exp = app.add_subcommand("export", "Graph JSON to a triangle mesh");
  std::string exp_in, exp_out, exp_style = "network3d";
  double exp_link_radius = 1.0;
  bool exp_capsules = false;
  exp->add_option("graph", exp_in, "Graph .json")->required()->check(CLI::ExistingFile);
  exp->add_option("--style", exp_style, "network3d (spheres) or ghirigoro (tubes only)")
      ->check(CLI::IsMember({"network3d", "ghirigoro"}));
  exp->add_option("--link-radius", exp_link_radius, "Tube radius in voxels");
  exp->add_flag("--capsules", exp_capsules, "Cylinders with joint spheres instead of sphere chains");
  exp->add_option("-o,--out", exp_out, "Output .obj or .stl")->required();

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "voxelize, infer, extract and export in one go");
  std::string pl_in, pl_out, pl_ckpt, pl_style = "network3d";
  int pl_res = 192, pl_margin = 2;
  bool pl_dropout = false;
  double pl_link_radius = 1.0;
  ExtractFlags pl_flags;
  pl->add_option("mesh", pl_in, "Input mesh")->required()->check(CLI::ExistingFile);
  pl->add_option("--style", pl_style, "network3d or ghirigoro")->check(CLI::IsMember({"network3d", "ghirigoro"}));
  pl->add_option("--ckpt", pl_ckpt, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  pl->add_option("--res", pl_res, "Inference resolution (multiple of 16)");
  pl->add_option("--margin", pl_margin, "Empty border in voxels");
  pl->add_flag("--dropout-at-inference", pl_dropout, "Keep dropout active");
  pl->add_option("--link-radius", pl_link_radius, "Tube radius in voxels");
  pl_flags.add(pl);
  pl->add_option("-o,--out", pl_out, "Output .obj or .stl")->required();

  // inspect
  auto* ins = app.add_subcommand("inspect", "Print the header of a grid, checkpoint, dataset or graph");
  std::string ins_in;
  ins->add_option("file", ins_in, "File or dataset directory")->required()->check(CLI::ExistingPath);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  set_thread_count(G.threads);
  const json globals = {{"threads", G.threads}, {"deterministic", G.deterministic}, {"seed", G.seed}};
  log_record("main", "start", {{"command", app.get_subcommands().front()->get_name()}, {"globals", globals}});

  if (vox->parsed()) {
    const auto grid = run_stage("voxelize", [&] {
      if (vox_margin * 2 + 2 > vox_res) throw ConfigError("margin too large for resolution");
      emit_config(app, vox_out, {{"res", vox_res}, {"margin", vox_margin}, {"globals", globals}});
      const auto mesh = load_mesh(vox_in);
      auto r = voxelize_mesh_detailed(mesh, vox_res, vox_margin);
      ensure_parent(vox_out);
      save_vgrid(r.grid, vox_out);
      log_record("voxelize", "written",
                 {{"file", vox_out}, {"triangles", mesh.triangles.size()}, {"surface", r.surface_voxels},
                  {"occupied", std::count(r.grid.data().begin(), r.grid.data().end(), 1.0f)}});
      return r.grid;
    });
    (void)grid;
  } else if (gen->parsed()) {
    run_stage("gen-data", [&] {
      dcfg.style = parse_style(gen_style);
      dcfg.seed = G.seed;
      dcfg.validate();
      emit_config(app, fs::path(gen_out) / "dataset", to_json(dcfg));
      const auto man = build_dataset(dcfg, gen_out);
      log_record("gen-data", "written", {{"dir", gen_out}, {"pairs", man.samples.size()}});
    });
  } else if (tr->parsed()) {
    run_stage("train", [&] {
      nn::TrainConfig cfg;
      cfg.stages = parse_stages(tr_stages, tr_batch);
      cfg.seed = G.seed;
      cfg.checkpoint_every = tr_ckpt_every;
      cfg.gan.lambda_l1 = tr_lambda;
      for (const auto& s : cfg.stages) check_resolution("training stage", s.resolution);
      const auto ds = load_dataset(tr_data);
      cfg.out_channels = ds.channels;
      const auto data = training_data(ds, cfg.stages);
      nn::validate_training(cfg, data);
      std::optional<nn::CheckpointContents> resume;
      if (!tr_resume.empty()) resume = nn::load_checkpoint(tr_resume);
      emit_config(app, fs::path(tr_out) / "train", nn::to_json(cfg));
      const auto report = nn::train(cfg, data, tr_out, std::move(resume), [](std::int64_t step, const nn::StepLosses& l) {
        if (step % 10 == 0) log_record("train", "step", {{"step", step}, {"d_loss", l.d_loss}, {"g_adv", l.g_adv}, {"g_l1", l.g_l1}});
      });
      log_record("train", "done", {{"steps", report.final_step}, {"checkpoint", report.checkpoints.back().string()}});
    });
  } else if (inf->parsed()) {
    run_stage("infer", [&] {
      const auto blob = load_vgrid(inf_in);
      if (inf_res) {
        check_resolution("inference", *inf_res);
        const GridDims want{*inf_res, *inf_res, *inf_res};
        if (!(blob.dims() == want))
          throw ConfigError("blob dims " + to_string(blob.dims()) + " differ from --res " + std::to_string(*inf_res));
      }
      auto model = nn::load_generator(inf_ckpt);
      emit_config(app, inf_out, {{"ckpt", inf_ckpt}, {"dropout_at_inference", inf_dropout}, {"globals", globals}});
      const auto out = nn::infer(model, blob, {inf_dropout, derive_seed(G.seed, 0x64726f70ULL)});
      ensure_parent(inf_out);
      save_vgrid(out, inf_out);
      log_record("infer", "written", {{"file", inf_out}, {"channels", out.channels()}});
    });
  } else if (ex->parsed()) {
    run_stage("extract", [&] {
      const auto grid = load_vgrid(ex_in);
      Style style = grid.channels() >= 2 ? Style::network3d : Style::ghirigoro;
      if (ex_style) style = parse_style(*ex_style);
      if (style == Style::network3d && grid.channels() < 2) throw ConfigError("network3d extraction needs 2 channels");
      const auto p = ex_flags.apply(extract_defaults(style), G.seed);
      p.validate();
      emit_config(app, ex_out, {{"style", style_name(style)}, {"globals", globals}});
      ExtractStats st;
      const auto g = extract_for_style(grid, style, p, &st);
      log_record("extract", "done", {{"nodes", g.nodes.size()}, {"links", g.links.size()}, {"stats", stats_json(st)}});
      write_graph_outputs(g, ex_out, mesh_style_for(style));
    });
  } else if (bl->parsed()) {
    run_stage("baseline", [&] {
      const auto p = bl_flags.apply(ExtractParams::for_mode(ExtractMode::baseline), G.seed);
      p.validate();
      const auto grid = load_vgrid(bl_in);
      if (grid.channels() != 1) throw InvalidInput("baseline needs a 1-channel filled grid");
      emit_config(app, bl_out, {{"k_nodes", p.k_nodes}, {"link_multiplier", p.link_multiplier}, {"globals", globals}});
      ExtractStats st;
      const auto g = baseline_extract(grid, p, &st);
      log_record("baseline", "done", {{"nodes", g.nodes.size()}, {"links", g.links.size()}, {"stats", stats_json(st)}});
      write_graph_outputs(g, bl_out, mesh_style_for(Style::network3d));
    });
  } else if (exp->parsed()) {
    run_stage("export", [&] {
      if (!is_mesh_path(exp_out)) throw ConfigError("export output must end in .obj or .stl");
      auto style = mesh_style_for(parse_style(exp_style));
      style.link_radius = exp_link_radius;
      style.capsules = exp_capsules;
      const auto g = load_graph(exp_in);
      const auto mesh = network_to_mesh(g, style);
      ensure_parent(exp_out);
      save_mesh(mesh, exp_out);
      log_record("export", "written", {{"mesh", exp_out}, {"triangles", mesh.triangles.size()}});
    });
  } else if (pl->parsed()) {
    PipelineConfig cfg;
    nn::Model<float> model = run_stage("config", [&] {
      cfg.style = parse_style(pl_style);
      cfg.resolution = pl_res;
      cfg.margin = pl_margin;
      cfg.seed = G.seed;
      cfg.extract = pl_flags.apply(extract_defaults(cfg.style), G.seed);
      cfg.mesh = mesh_style_for(cfg.style);
      cfg.mesh.link_radius = pl_link_radius;
      cfg.infer = {pl_dropout, derive_seed(G.seed, 0x64726f70ULL)};
      if (!is_mesh_path(pl_out)) throw ConfigError("pipeline output must end in .obj or .stl");
      cfg.validate();
      auto m = nn::load_generator(pl_ckpt);
      check_generator(m, cfg.style);
      return m;
    });
    const auto mesh = run_stage("load", [&] { return load_mesh(pl_in); });
    emit_config(app, pl_out, cfg.to_json());
    const auto r = run_pipeline(mesh, model, cfg, [](const std::string& stage, const json& info) {
      log_record(stage, "done", info);
    });
    run_stage("export", [&] { write_graph_outputs(r.graph, pl_out, cfg.mesh, &r.mesh); });
  } else if (ins->parsed()) {
    run_stage("inspect", [&] { std::cout << inspect_file(ins_in).dump(2) << '\n'; });
  }
  log_record("main", "done");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const StageError& e) {
    log_record(e.stage(), "error", {{"message", e.what()}});
    std::cerr << "voxtopo: " << e.what() << '\n';
    return e.usage() ? 2 : 1;
  } catch (const std::exception& e) {
    log_record("main", "error", {{"message", e.what()}});
    std::cerr << "voxtopo: " << e.what() << '\n';
    return 1;
  }
}
