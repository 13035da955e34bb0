#include "trikit/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "trikit/eval.hpp"
#include "trikit/io.hpp"
#include "trikit/synth.hpp"

namespace trikit {

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : fallback;
}

void apply_threads(int threads, FitConfig* fit = nullptr) {
  int n = threads;
  if (n <= 0) {
    const std::string env = env_or("TRIKIT_THREADS", "");
    if (!env.empty()) n = std::atoi(env.c_str());
  }
  if (n > 0) {
    omp_set_num_threads(n);
    if (fit) fit->raster.threads = n;
  }
}

std::filesystem::path resolve_out_dir(const std::string& out) {
  std::filesystem::path dir = out.empty() ? env_or("TRIKIT_OUT", "out") : out;
  std::filesystem::create_directories(dir);
  return dir;
}

void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "step,total,mse,normal,cam,filter_scale\n";
  char line[256];
  for (const LossRecord& rec : history) {
    std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", rec.step, rec.total,
                  rec.mse, rec.normal, rec.cam, rec.filter_scale);
    out << line;
  }
}

AssembleParams assemble_params_from(const SceneManifest& manifest) {
  AssembleParams params;
  params.stride = manifest.assembly_stride;
  params.s_min = manifest.s_min;
  params.s_max = manifest.s_max;
  params.init_density_logit = manifest.init_density_logit;
  params.init_blur_raw = manifest.init_blur_raw;
  params.init_scale_logit = manifest.init_scale_logit;
  params.init_color_from_image = manifest.init_color_from_image;
  params.schedule = manifest.schedule;
  params.normals = manifest.fit.normals;
  return params;
}

int cmd_fit(const std::string& manifest_path, const std::string& out, uint64_t seed,
            int threads) {
  SceneManifest manifest = parse_config(manifest_path);
  for (const std::string& w : manifest.warnings) std::cerr << "warning: " << w << "\n";
  (void)seed;
  apply_threads(threads, &manifest.fit);

  const std::filesystem::path dir = resolve_out_dir(out);
  const std::vector<FitView> views = load_views(manifest);
  const TriangleSet initial = assemble_from_views(views, assemble_params_from(manifest));
  std::cout << "assembled " << initial.size() << " primitives from " << views.size()
            << " views\n";

  const FitResult result = fit_scene(initial, views, manifest.fit, manifest.weights);
  if (result.aborted) {
    write_tspt(result.scene, dir / "scene_abort.tspt");
    write_loss_csv(result.history, dir / "loss.csv");
    std::cerr << "fit aborted: " << result.abort_reason << " (snapshot written)\n";
    return 1;
  }
  write_tspt(result.scene, dir / "scene.tspt");
  write_loss_csv(result.history, dir / "loss.csv");
  if (!result.history.empty()) {
    const LossRecord& last = result.history.back();
    std::cout << "final losses: total " << last.total << " mse " << last.mse << " normal "
              << last.normal << "\n";
  }
  std::cout << "wrote " << (dir / "scene.tspt").string() << "\n";
  return 0;
}

int cmd_render(const std::string& manifest_path, const std::string& scene_path,
               const std::string& out, int step, int threads) {
  SceneManifest manifest = parse_config(manifest_path);
  apply_threads(threads, &manifest.fit);
  const std::filesystem::path dir = resolve_out_dir(out);
  const TriangleSet scene = read_tspt(scene_path);
  const ScheduleState sched = schedule_state(step, manifest.schedule);
  RasterConfig raster = manifest.fit.raster;

  for (size_t v = 0; v < manifest.views.size(); ++v) {
    const ManifestView& mv = manifest.views[v];
    const RenderOutput ro = render(scene, mv.pose, mv.intr, sched, manifest.schedule, raster);
    const std::string stem = "view" + std::to_string(v);
    write_ppm(ro.rgb, dir / (stem + ".ppm"));
    write_tspg(tspg_from_scalar(ro.depth.depths), dir / (stem + "_depth.tspg"));
    write_tspg(tspg_from_vec3(ro.normal.normals), dir / (stem + "_normal.tspg"));
    write_tspg(tspg_from_scalar(ro.alpha), dir / (stem + "_alpha.tspg"));
  }
  std::cout << "rendered " << manifest.views.size() << " views to " << dir.string() << "\n";
  return 0;
}

int cmd_export_mesh(const std::string& scene_path, const std::string& out,
                    const std::string& format, double threshold, double tau, double exponent,
                    double precision) {
  const TriangleSet scene = read_tspt(scene_path);
  ExportConfig cfg;
  cfg.prune_threshold = threshold;
  cfg.prune_tau = tau;
  cfg.prune_exponent = exponent;
  cfg.dedup_precision = precision;
  const ExportResult result = export_mesh(scene, cfg);
  if (result.empty_after_prune) {
    std::cerr << "warning: no primitives survive pruning; writing an empty mesh\n";
  }
  MeshFormat fmt = MeshFormat::kPly;
  if (format == "obj") fmt = MeshFormat::kObj;
  else if (format == "ply") fmt = MeshFormat::kPly;
  else {
    const std::string ext = std::filesystem::path(out).extension().string();
    fmt = (ext == ".obj" || ext == ".OBJ") ? MeshFormat::kObj : MeshFormat::kPly;
  }
  write_mesh(result.mesh, fmt, out);
  std::cout << "kept " << result.kept_primitives << " primitives; mesh with "
            << result.mesh.vertices.size() << " vertices, " << result.mesh.faces.size()
            << " faces -> " << out << "\n";
  return 0;
}

int cmd_eval_mesh(const std::string& pred_path, const std::string& gt_path,
                  const std::string& out, const std::string& json_out, size_t samples,
                  double delta, double voxel, uint64_t seed) {
  const Mesh pred = read_mesh(pred_path);
  const Mesh gt = read_mesh(gt_path);
  ChamferConfig cfg;
  cfg.samples = samples;
  cfg.delta = delta;
  cfg.voxel = voxel;
  cfg.seed = seed;
  const EvalReport report = chamfer_report(pred, gt, cfg);

  char text[512];
  std::snprintf(text, sizeof(text),
                "cd: %.6f\nprecision: %.6f\nrecall: %.6f\nf1: %.6f\n"
                "pred_sampled: %zu\npred_downsampled: %zu\ngt_sampled: %zu\n"
                "gt_downsampled: %zu\n",
                report.cd, report.precision, report.recall, report.f1,
                report.counts.pred_sampled, report.counts.pred_downsampled,
                report.counts.gt_sampled, report.counts.gt_downsampled);
  std::cout << text;
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot open " + out);
    f << text;
  }
  if (!json_out.empty()) {
    nlohmann::json j{{"cd", report.cd},
                     {"precision", report.precision},
                     {"recall", report.recall},
                     {"f1", report.f1},
                     {"counts",
                      {{"pred_sampled", report.counts.pred_sampled},
                       {"pred_downsampled", report.counts.pred_downsampled},
                       {"gt_sampled", report.counts.gt_sampled},
                       {"gt_downsampled", report.counts.gt_downsampled}}}};
    std::ofstream f(json_out);
    if (!f) throw std::runtime_error("cannot open " + json_out);
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_normals(const std::string& manifest_path, const std::string& out, int threads) {
  SceneManifest manifest = parse_config(manifest_path);
  apply_threads(threads, &manifest.fit);
  const std::filesystem::path dir = resolve_out_dir(out);
  const std::vector<FitView> views = load_views(manifest);
  const NormalConfig& nc = manifest.fit.normals;
  const ScheduleState sched = schedule_state(0, manifest.schedule);

  for (size_t v = 0; v < views.size(); ++v) {
    const FitView& view = views[v];
    const NormalField geo =
        geometry_normals(view.point_map, nc.smooth_window, nc.detach_points, nc.degenerate_eps);
    const NormalField smooth = orientation_aware_filter(geo, nc.filter_window);
    NormalField fwd = smooth;
    if (view.teacher.rows() > 0) fwd = bootstrap_blend(smooth, view.teacher, sched.alpha);
    const std::string stem = "view" + std::to_string(v);
    write_tspg(tspg_from_vec3(geo.normals), dir / (stem + "_ngeo.tspg"));
    write_tspg(tspg_from_vec3(smooth.normals), dir / (stem + "_nsm.tspg"));
    write_tspg(tspg_from_vec3(fwd.normals), dir / (stem + "_nfwd.tspg"));
    write_tspg(tspg_from_mask(geo.mask), dir / (stem + "_mask.tspg"));
  }
  std::cout << "wrote normal fields for " << views.size() << " views to " << dir.string()
            << "\n";
  return 0;
}

int cmd_gradcheck(double h, uint64_t seed, const std::string& out) {
  const GradcheckScene gs = make_gradcheck_scene(seed);
  FdSample sample;
  sample.seed = seed;
  const FdReport report = finite_difference_check(gs.scene, gs.pose, gs.intr, gs.sched,
                                                  gs.sched_cfg, gs.raster, sample, h);

  char text[512];
  std::snprintf(text, sizeof(text),
                "params_checked: %zu\nexcluded_band_edge: %zu\nfrac_below_1e-3: %.4f\n"
                "p95_rel_error: %.3e\nmax_rel_error: %.3e\ncolor_max_rel_error: %.3e\n",
                report.entries.size(), report.excluded_count, report.frac_below_1e3,
                report.p95_rel, report.max_rel, report.color_max_rel);
  std::cout << text;
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot open " + out);
    f << text;
  }
  const bool pass = report.frac_below_1e3 >= 0.95 && report.color_max_rel < 1e-8;
  std::cout << (pass ? "gradcheck: PASS\n" : "gradcheck: FAIL\n");
  return pass ? 0 : 1;
}

int cmd_schedule_dump(const std::string& manifest_path, const std::string& out, int t_max,
                      int stride) {
  ScheduleConfig sched_cfg;
  if (!manifest_path.empty()) sched_cfg = parse_config(manifest_path).schedule;
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot open " + out);
  f << "t,e,tau,beta,alpha\n";
  char line[256];
  for (int t = 0; t <= t_max; t += stride) {
    const ScheduleState s = schedule_state(t, sched_cfg);
    std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%.12g,%.12g\n", t, s.e, s.tau, s.beta,
                  s.alpha);
    f << line;
  }
  // Always land exactly on t_max.
  if (t_max % stride != 0) {
    const ScheduleState s = schedule_state(t_max, sched_cfg);
    std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%.12g,%.12g\n", t_max, s.e, s.tau, s.beta,
                  s.alpha);
    f << line;
  }
  std::cout << "wrote schedule table to " << out << "\n";
  return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, std::string kind) {
  if (kind == "auto") {
    const std::string ext = std::filesystem::path(a_path).extension().string();
    if (ext == ".ppm") {
      kind = "image";
    } else {
      const TspgGrid g = read_tspg(a_path);
      kind = g.channels == 3 ? "normal" : "depth";
    }
  }
  if (kind == "image") {
    const ImageRGB a = read_ppm(a_path);
    const ImageRGB b = read_ppm(b_path);
    const double value = psnr(a, b);
    std::printf("psnr: %.6f\n", value);
    return 0;
  }
  if (kind == "depth") {
    const ScalarGrid a = scalar_from_tspg(read_tspg(a_path));
    const ScalarGrid b = scalar_from_tspg(read_tspg(b_path));
    require(a.same_shape(b), "compare: shape mismatch");
    std::vector<double> absrel, absdiff;
    for (size_t i = 0; i < a.size(); ++i) {
      if (b.data[i] <= 0.0) continue;  // reference validity
      absdiff.push_back(std::abs(a.data[i] - b.data[i]));
      absrel.push_back(std::abs(a.data[i] - b.data[i]) / b.data[i]);
    }
    std::printf("absrel: %.6f\nabsdiff: %.6f\nvalid: %zu\n", pairwise_mean(absrel),
                pairwise_mean(absdiff), absrel.size());
    return 0;
  }
  if (kind == "normal") {
    const Vec3Grid a = vec3_from_tspg(read_tspg(a_path));
    const Vec3Grid b = vec3_from_tspg(read_tspg(b_path));
    require(a.same_shape(b), "compare: shape mismatch");
    std::vector<double> angles;
    size_t within30 = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      const double na = a.data[i].norm();
      const double nb = b.data[i].norm();
      if (na < 1e-6 || nb < 1e-6) continue;
      const double cosv = std::clamp(a.data[i].dot(b.data[i]) / (na * nb), -1.0, 1.0);
      const double deg = std::acos(cosv) * 180.0 / M_PI;
      angles.push_back(deg);
      if (deg <= 30.0) ++within30;
    }
    const double pct = angles.empty() ? 0.0 : 100.0 * within30 / angles.size();
    std::printf("mean_angular_error_deg: %.6f\npct_within_30deg: %.6f\nvalid: %zu\n",
                pairwise_mean(angles), pct, angles.size());
    return 0;
  }
  throw std::invalid_argument("compare: unknown kind '" + kind + "'");
}

}  // namespace

int run_command(int argc, const char* const* argv) {
  CLI::App app{"triangle-splatting scene toolkit"};
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand("fit", "per-scene optimization of a triangle scene");
  std::string fit_manifest, fit_out;
  uint64_t fit_seed = 0;
  int fit_threads = 0;
  fit->add_option("--manifest", fit_manifest, "scene manifest")->required();
  fit->add_option("--out", fit_out, "output directory");
  fit->add_option("--seed", fit_seed, "random seed");
  fit->add_option("--threads", fit_threads, "worker thread cap");

  // render
  auto* rnd = app.add_subcommand("render", "render a scene checkpoint for manifest views");
  std::string rnd_manifest, rnd_scene, rnd_out;
  int rnd_step = 1 << 20;
  int rnd_threads = 0;
  rnd->add_option("--manifest", rnd_manifest, "scene manifest")->required();
  rnd->add_option("--scene", rnd_scene, "TSPT scene file")->required();
  rnd->add_option("--out", rnd_out, "output directory");
  rnd->add_option("--step", rnd_step, "schedule step (default: fully sharpened)");
  rnd->add_option("--threads", rnd_threads, "worker thread cap");

  // export-mesh
  auto* exp = app.add_subcommand("export-mesh", "direct mesh export from a scene checkpoint");
  std::string exp_scene, exp_out, exp_format = "auto";
  double exp_threshold = 0.10, exp_tau = 5.0, exp_exponent = 2.0, exp_precision = 1e-5;
  exp->add_option("--scene", exp_scene, "TSPT scene file")->required();
  exp->add_option("--out", exp_out, "output mesh path (.obj or .ply)")->required();
  exp->add_option("--format", exp_format, "obj | ply | auto");
  exp->add_option("--threshold", exp_threshold, "prune threshold on sharpened opacity");
  exp->add_option("--tau", exp_tau, "sharpening temperature at export");
  exp->add_option("--exponent", exp_exponent, "opacity-map exponent at export");
  exp->add_option("--precision", exp_precision, "vertex dedup quantization");

  // eval-mesh
  auto* ev = app.add_subcommand("eval-mesh", "CD / precision / recall / F1 against ground truth");
  std::string ev_pred, ev_gt, ev_out, ev_json;
  size_t ev_samples = 100000;
  double ev_delta = 0.05, ev_voxel = 0.02;
  uint64_t ev_seed = 0;
  ev->add_option("--pred", ev_pred, "predicted mesh (OBJ/PLY)")->required();
  ev->add_option("--gt", ev_gt, "ground-truth mesh or point cloud (PLY/OBJ)")->required();
  ev->add_option("--out", ev_out, "text report path");
  ev->add_option("--json", ev_json, "JSON report path");
  ev->add_option("--samples", ev_samples, "surface samples per side");
  ev->add_option("--delta", ev_delta, "inlier distance");
  ev->add_option("--voxel", ev_voxel, "downsample voxel size");
  ev->add_option("--seed", ev_seed, "sampling seed");

  // normals
  auto* nrm = app.add_subcommand("normals", "dump geometry/smoothed/forward normal fields");
  std::string nrm_manifest, nrm_out;
  int nrm_threads = 0;
  nrm->add_option("--manifest", nrm_manifest, "scene manifest")->required();
  nrm->add_option("--out", nrm_out, "output directory");
  nrm->add_option("--threads", nrm_threads, "worker thread cap");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check on the bundled scene");
  double gc_h = 1e-4;
  uint64_t gc_seed = 0;
  std::string gc_out;
  gc->add_option("--fd-step", gc_h, "finite-difference step");
  gc->add_option("--seed", gc_seed, "scene seed");
  gc->add_option("--out", gc_out, "report path");

  // schedule-dump
  auto* sd = app.add_subcommand("schedule-dump", "CSV of e/tau/beta/alpha against step");
  std::string sd_manifest, sd_out = "schedule.csv";
  int sd_tmax = 16000, sd_stride = 100;
  sd->add_option("--manifest", sd_manifest, "manifest with schedule overrides");
  sd->add_option("--out", sd_out, "CSV path");
  sd->add_option("--t-max", sd_tmax, "last step");
  sd->add_option("--stride", sd_stride, "step stride");

  // compare
  auto* cmp = app.add_subcommand("compare", "PSNR / depth / normal metrics for file pairs");
  std::string cmp_a, cmp_b, cmp_kind = "auto";
  cmp->add_option("--a", cmp_a, "prediction file (PPM or TSPG)")->required();
  cmp->add_option("--b", cmp_b, "reference file of the same kind")->required();
  cmp->add_option("--kind", cmp_kind, "image | depth | normal | auto");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (fit->parsed()) return cmd_fit(fit_manifest, fit_out, fit_seed, fit_threads);
    if (rnd->parsed()) return cmd_render(rnd_manifest, rnd_scene, rnd_out, rnd_step, rnd_threads);
    if (exp->parsed())
      return cmd_export_mesh(exp_scene, exp_out, exp_format, exp_threshold, exp_tau,
                             exp_exponent, exp_precision);
    if (ev->parsed())
      return cmd_eval_mesh(ev_pred, ev_gt, ev_out, ev_json, ev_samples, ev_delta, ev_voxel,
                           ev_seed);
    if (nrm->parsed()) return cmd_normals(nrm_manifest, nrm_out, nrm_threads);
    if (gc->parsed()) return cmd_gradcheck(gc_h, gc_seed, gc_out);
    if (sd->parsed()) return cmd_schedule_dump(sd_manifest, sd_out, sd_tmax, sd_stride);
    if (cmp->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_kind);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace trikit
