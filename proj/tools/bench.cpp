// Timing comparison between the untiled serial reference compositor and the
// tile-parallel kernels, forward and backward.

#include <omp.h>

#include <chrono>
#include <cstdio>

#include "trikit/synth.hpp"

using namespace trikit;

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

template <typename F>
double time_best_of(int repeats, F&& fn) {
  double best = 1e300;
  for (int i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, ms_since(start));
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 3;
  const int max_threads = omp_get_max_threads();

  GradcheckScene gs = make_gradcheck_scene(0);
  // Scale the bundled scene up for measurable timings.
  gs.intr = Intrinsics{220.0, 220.0, 128.0, 128.0, 256, 256};

  const CanonicalTemplate tmpl = CanonicalTemplate::standard();
  const auto screen =
      project_triangles(gs.scene, tmpl, gs.pose, gs.intr, gs.sched, gs.sched_cfg, gs.raster);
  const TileBins bins = bin_tiles(screen, gs.raster.tile_size, gs.intr.width, gs.intr.height);

  PixelGradients upstream;
  upstream.d_rgb = Vec3Grid(gs.intr.height, gs.intr.width, Vec3::Constant(0.1));
  upstream.d_alpha = ScalarGrid(gs.intr.height, gs.intr.width, 0.05);

  std::printf("scene: %zu triangles, %dx%d, tile %d, repeats %d\n", gs.scene.size(),
              gs.intr.width, gs.intr.height, gs.raster.tile_size, repeats);

  const double t_ref = time_best_of(repeats, [&] {
    composite_forward_reference(screen, gs.intr.width, gs.intr.height, gs.raster.background,
                                gs.raster);
  });
  std::printf("forward  serial reference   %9.2f ms\n", t_ref);

  for (int threads : {1, max_threads}) {
    if (threads == max_threads && max_threads == 1) break;
    RasterConfig cfg = gs.raster;
    cfg.threads = threads;
    const double t = time_best_of(repeats, [&] {
      composite_forward(bins, screen, cfg.background, cfg);
    });
    std::printf("forward  tiled %2d thread%s  %9.2f ms  (%.2fx vs reference)\n", threads,
                threads == 1 ? " " : "s", t, t_ref / t);
  }

  RasterConfig cfg1 = gs.raster;
  cfg1.threads = 1;
  const double t_b1 = time_best_of(repeats, [&] {
    composite_backward(bins, screen, upstream, gs.scene, tmpl, gs.pose, gs.intr, gs.sched,
                       gs.sched_cfg, cfg1);
  });
  std::printf("backward tiled  1 thread    %9.2f ms\n", t_b1);
  if (max_threads > 1) {
    RasterConfig cfgN = gs.raster;
    cfgN.threads = max_threads;
    const double t_bn = time_best_of(repeats, [&] {
      composite_backward(bins, screen, upstream, gs.scene, tmpl, gs.pose, gs.intr, gs.sched,
                         gs.sched_cfg, cfgN);
    });
    std::printf("backward tiled %2d threads   %9.2f ms  (%.2fx vs 1 thread)\n", max_threads,
                t_bn, t_b1 / t_bn);
  }
  return 0;
}
