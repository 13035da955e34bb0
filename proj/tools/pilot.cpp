// Desk-scale end-to-end pilot: synthetic two-plane scene, 6 training views
// at 128x128, noised point-map initialization, 2000 fit steps. Prints the
// held-out PSNR and exported-mesh F1 backing the acceptance thresholds.

#include <chrono>
#include <cstdio>

#include "trikit/eval.hpp"
#include "trikit/synth.hpp"

using namespace trikit;

int main(int argc, char** argv) {
  const int steps = argc > 1 ? std::atoi(argv[1]) : 2000;
  const int stride = argc > 2 ? std::atoi(argv[2]) : 2;

  const auto t0 = std::chrono::steady_clock::now();
  TwoPlaneScene scene = make_two_plane_scene(128, 6, 0, 0.01);
  std::printf("scene: extent %.2f, noise sigma %.4f\n", scene.extent, scene.noise_sigma);

  AssembleParams params;
  params.stride = stride;
  params.schedule.bootstrap = {0, 1};  // rely on geometry normals at assembly
  FitConfig cfg;
  cfg.steps = steps;
  cfg.schedule = params.schedule;
  // Desk-scaled curriculum: ramps complete inside the run.
  cfg.schedule.e_steps = steps / 2;
  cfg.schedule.tau_steps = steps / 2;
  cfg.schedule.beta_steps = steps / 2;
  params.schedule = cfg.schedule;
  LossWeights weights;

  const TriangleSet initial = assemble_from_views(scene.train_views, params);
  std::printf("assembled %zu primitives\n", initial.size());

  const FitResult result = fit_scene(initial, scene.train_views, cfg, weights);
  if (result.aborted) {
    std::printf("fit aborted: %s\n", result.abort_reason.c_str());
    return 1;
  }
  const double fit_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // Held-out view at the fully sharpened schedule.
  const ScheduleState final_sched = schedule_state(1 << 20, cfg.schedule);
  const RenderOutput held =
      render(result.scene, scene.heldout.pose, scene.heldout.intr, final_sched, cfg.schedule,
             cfg.raster);
  const double held_psnr = psnr(held.rgb, scene.heldout.image);

  const ExportResult exported = export_mesh(result.scene);
  const EvalReport report = chamfer_report(exported.mesh, scene.gt_mesh);

  if (!result.history.empty()) {
    const LossRecord& last = result.history.back();
    std::printf("final losses: total %.5f mse %.5f normal %.5f\n", last.total, last.mse,
                last.normal);
  }
  std::printf("fit time: %.1f s (%d steps, stride %d)\n", fit_s, steps, stride);
  std::printf("held-out PSNR: %.2f dB\n", held_psnr);
  std::printf("mesh: %zu faces kept of %zu primitives\n", exported.mesh.faces.size(),
              result.scene.size());
  std::printf("mesh eval: CD %.4f precision %.4f recall %.4f F1 %.4f\n", report.cd,
              report.precision, report.recall, report.f1);
  const bool pass = held_psnr >= 28.0 && report.f1 >= 0.90;
  std::printf("pilot thresholds (PSNR >= 28, F1 >= 0.90): %s\n", pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}
