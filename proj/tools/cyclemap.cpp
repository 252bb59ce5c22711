// Command-line front end: preprocess, train, infer, eval, colorize, synth.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cyclemap/error.hpp"
#include "cyclemap/parallel.hpp"
#include "cyclemap/pipeline.hpp"
#include "json.hpp"

using namespace cyclemap;

namespace {

// TrainConfig keys exposed as --flags (underscores become dashes).
const char* kTrainKeys[] = {"batch_size", "epochs",  "steps_per_epoch", "coupling_epochs", "learning_rate",
                            "beta1",      "beta2",   "epsilon",         "clip_norm",       "k",
                            "m",          "s",       "L",               "reg",             "objective",
                            "coupling_weight", "seed", "self_pairs"};

std::string dashed(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

int run(int argc, char** argv) {
  CLI::App app{"Unsupervised cyclic functional-map correspondence"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: CYCLEMAP_THREADS or all cores)");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Decimate, basis, descriptors and distances per mesh");
  std::string pre_in, pre_out;
  PreprocessConfig pc;
  bool force = false;
  pre->add_option("mesh_dir", pre_in, "Directory of .off/.obj/.ply meshes")->required();
  pre->add_option("cache_dir", pre_out, "Output directory for .cysh caches")->required();
  pre->add_option("--target-n", pc.target_n, "Decimate meshes above this vertex count");
  pre->add_option("--k", pc.k, "Eigenfunctions");
  pre->add_option("--m", pc.m, "Descriptor scales");
  pre->add_option("--s", pc.s, "Descriptor width");
  pre->add_option("--bins", pc.bins, "Cosine bins per SHOT sector");
  pre->add_option("--radius-fraction", pc.radius_fraction, "SHOT radius as a fraction of the geodesic diameter");
  pre->add_option("--scale-lo", pc.scale_lo);
  pre->add_option("--scale-hi", pc.scale_hi);
  pre->add_option("--distance-samples", pc.distance_samples, "FPS sample size for distances (0: all vertices)");
  pre->add_flag("--force", force, "Recompute everything, ignoring existing caches");

  // train
  auto* tr = app.add_subcommand("train", "Train on cached shapes");
  TrainRequest treq;
  std::string tr_cache, tr_ckpt, tr_log, tr_resume, tr_config_file;
  bool one_shot = false;
  std::map<std::string, std::string> tr_values;
  tr->add_option("cache_dir", tr_cache)->required();
  tr->add_option("checkpoint", tr_ckpt, "Checkpoint path, rewritten every epoch")->required();
  tr->add_option("--log", tr_log, "Loss CSV (default: <checkpoint>.losses.csv)");
  tr->add_option("--resume", tr_resume, "Continue from this checkpoint");
  tr->add_option("--config", tr_config_file, "key=value file with defaults; flags override it");
  tr->add_flag("--one-shot", one_shot, "Single-pair training on exactly two shapes");
  for (const char* key : kTrainKeys) tr->add_option("--" + dashed(key), tr_values[key]);

  // infer
  auto* inf = app.add_subcommand("infer", "Dense map X -> Y from a trained checkpoint");
  std::string inf_ckpt, inf_x, inf_y, inf_out, inf_soft;
  inf->add_option("checkpoint", inf_ckpt)->required();
  inf->add_option("cache_x", inf_x)->required();
  inf->add_option("cache_y", inf_y)->required();
  inf->add_option("--out", inf_out, "Map CSV")->required();
  inf->add_option("--emit-soft", inf_soft, "Also write P (target x source) as .npy");

  // eval
  auto* ev = app.add_subcommand("eval", "Geodesic error of a map against ground truth");
  std::string ev_map, ev_gt, ev_cache, ev_errors, ev_curve, ev_thresholds, ev_summary;
  ev->add_option("map_csv", ev_map)->required();
  ev->add_option("gt_csv", ev_gt)->required();
  ev->add_option("cache_y", ev_cache)->required();
  ev->add_option("--errors", ev_errors, "Per-vertex error CSV")->required();
  ev->add_option("--curve", ev_curve, "Cumulative curve CSV")->required();
  ev->add_option("--thresholds", ev_thresholds, "lo:hi:step or a comma list (default 0:0.25:0.0025)");
  ev->add_option("--summary", ev_summary, "Also write the summary as JSON");

  // colorize
  auto* col = app.add_subcommand("colorize", "Colour both shapes so corresponding vertices match");
  std::string col_x, col_y, col_map, col_out_x, col_out_y;
  col->add_option("cache_x", col_x)->required();
  col->add_option("cache_y", col_y)->required();
  col->add_option("map_csv", col_map)->required();
  col->add_option("out_x", col_out_x, "PLY for the source")->required();
  col->add_option("out_y", col_out_y, "PLY for the target")->required();

  // synth
  auto* syn = app.add_subcommand("synth", "Synthetic bumpy sphere or grid with bent and stretched copies");
  SynthRequest sreq;
  std::string syn_out, syn_kind = "icosphere";
  syn->add_option("out_dir", syn_out)->required();
  syn->add_option("--kind", syn_kind, "icosphere or grid")->check(CLI::IsMember({"icosphere", "grid"}));
  syn->add_option("--subdivisions", sreq.base.subdivisions);
  syn->add_option("--grid-size", sreq.base.grid_size);
  syn->add_option("--bumps", sreq.base.bumps);
  syn->add_option("--seed", sreq.base.seed);
  syn->add_option("--bend", sreq.bend_angle, "Total bend angle in radians");
  syn->add_option("--stretch", sreq.stretch, "Peak relative radial stretch (0 disables)");
  syn->add_option("--stretch-cap", sreq.stretch_cap, "Stretch cap half-angle in radians");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (threads > 0) set_thread_count(threads);

  if (*pre) {
    const auto report = cmd_preprocess(pre_in, pre_out, pc, force);
    for (const auto& it : report.items) {
      if (it.status == "failed") {
        std::cerr << "error: " << it.error << "\n";
        continue;
      }
      std::printf("%-24s %-8s n=%zu k=%d mesh=%.2fs basis=%.2fs descriptor=%.2fs distance=%.2fs\n", it.file.c_str(),
                  it.status.c_str(), it.n, it.k, it.timings.mesh, it.timings.basis, it.timings.descriptor,
                  it.timings.distance);
    }
    return report.ok() ? 0 : static_cast<int>(ErrorKind::Data);
  }

  if (*tr) {
    TrainConfig c;
    if (!tr_config_file.empty()) {
      std::ifstream f(tr_config_file);
      if (!f) throw DataError("cannot open " + tr_config_file);
      c = TrainConfig::decode(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
    }
    for (const auto& [key, value] : tr_values)
      if (tr->count("--" + dashed(key))) c.set(key, value);
    if (one_shot) c.one_shot = true;
    if (const char* seed = std::getenv("CYCLEMAP_SEED")) c.set("seed", seed);
    c.validate();
    treq.cache_dir = tr_cache;
    treq.checkpoint = tr_ckpt;
    treq.loss_log = tr_log;
    if (!tr_resume.empty()) treq.resume = fs::path(tr_resume);
    treq.config = c;
    const auto res = cmd_train(treq);
    std::printf("trained %lld steps over %lld epochs -> %s\n", static_cast<long long>(res.checkpoint.step),
                static_cast<long long>(res.checkpoint.epoch), tr_ckpt.c_str());
    return 0;
  }

  if (*inf) {
    const auto map = cmd_infer(inf_ckpt, inf_x, inf_y, inf_out,
                               inf_soft.empty() ? std::nullopt : std::optional<fs::path>(inf_soft));
    std::printf("wrote %zu correspondences to %s\n", map.size(), inf_out.c_str());
    return 0;
  }

  if (*ev) {
    const auto thresholds = ev_thresholds.empty() ? default_thresholds() : parse_thresholds(ev_thresholds);
    const auto s = cmd_eval(ev_map, ev_gt, ev_cache, ev_errors, ev_curve, thresholds);
    std::printf("n=%zu mean=%.6g median=%.6g sum=%.6g\n", s.n, s.mean, s.median, s.sum);
    if (!ev_summary.empty()) {
      nlohmann::json j = {{"n", s.n}, {"mean", s.mean}, {"median", s.median}, {"sum", s.sum}};
      std::ofstream f(ev_summary);
      if (!f) throw DataError("cannot write " + ev_summary);
      f << j.dump(2) << "\n";
    }
    return 0;
  }

  if (*col) {
    cmd_colorize(col_x, col_y, col_map, col_out_x, col_out_y);
    return 0;
  }

  if (*syn) {
    sreq.base.kind = syn_kind == "grid" ? SynthBase::Kind::Grid : SynthBase::Kind::Icosphere;
    for (const auto& p : cmd_synth(sreq, syn_out)) std::printf("%s\n", p.string().c_str());
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Data);
  }
}
