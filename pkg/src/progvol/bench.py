"""Progressive vs dense-masked efficiency benchmark."""

import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EquivalenceViolation
from .metrics import format_db, psnr, ssim
from .renderer import RenderConfig, RenderCounters, render_dense_masked, render_progressive

EQUIVALENCE_TOL = 1e-5
CSV_COLUMNS = "mode,rays,pd_points,pc_points,td_ms,tc_ms,total_ms,psnr_vs_dense,ssim_vs_dense"

# Published reductions of the progressive pipeline on full-scale human captures,
# printed next to measured values for context only.
REFERENCE_REDUCTIONS = {"rays": 38.1, "pd_points": 76.4, "pc_points": 94.0, "time": 71.4}


def reduction(progressive, dense):
    """Percent removed by the progressive mode; 0 of 0 counts as fully removed."""
    if progressive == 0:
        return 100.0
    if dense == 0:
        return -float("inf")
    return 100.0 * (1.0 - progressive / dense)


@dataclass
class BenchReport:
    dense: RenderCounters
    progressive: RenderCounters
    reductions: dict
    psnr_vs_dense: float
    ssim_vs_dense: float
    max_abs_diff: float
    psnr_vs_truth: dict = field(default_factory=dict)
    ssim_vs_truth: dict = field(default_factory=dict)
    dense_times_ms: list = field(default_factory=list)
    progressive_times_ms: list = field(default_factory=list)

    @property
    def time_ratio(self):
        return self.progressive.total_ms / self.dense.total_ms

    def csv(self):
        def row(mode, c, p, s):
            return (
                f"{mode},{c.rays},{c.pd_points},{c.pc_points},{c.td_ms:.3f},{c.tc_ms:.3f},"
                f"{c.total_ms:.3f},{format_db(p)},{s:.6f}"
            )

        return "\n".join([
            CSV_COLUMNS,
            row("dense", self.dense, float("inf"), 1.0),
            row("progressive", self.progressive, self.psnr_vs_dense, self.ssim_vs_dense),
        ]) + "\n"

    def table(self):
        d, p = self.dense, self.progressive
        lines = [
            f"{'':14}{'dense':>14}{'progressive':>14}{'reduction':>12}{'reference':>12}",
            f"{'rays':14}{d.rays:>14}{p.rays:>14}{self.reductions['rays']:>11.1f}%"
            f"{-REFERENCE_REDUCTIONS['rays']:>11.1f}%",
            f"{'density pts':14}{d.pd_points:>14}{p.pd_points:>14}{self.reductions['pd_points']:>11.1f}%"
            f"{-REFERENCE_REDUCTIONS['pd_points']:>11.1f}%",
            f"{'colour pts':14}{d.pc_points:>14}{p.pc_points:>14}{self.reductions['pc_points']:>11.1f}%"
            f"{-REFERENCE_REDUCTIONS['pc_points']:>11.1f}%",
            f"{'time (ms)':14}{d.total_ms:>14.1f}{p.total_ms:>14.1f}{self.reductions['time']:>11.1f}%"
            f"{-REFERENCE_REDUCTIONS['time']:>11.1f}%",
            f"{'density ms':14}{d.td_ms:>14.1f}{p.td_ms:>14.1f}",
            f"{'colour ms':14}{d.tc_ms:>14.1f}{p.tc_ms:>14.1f}",
            f"progressive vs dense: PSNR {format_db(self.psnr_vs_dense)} dB, "
            f"SSIM {self.ssim_vs_dense:.6f}, max |diff| on selected pixels {self.max_abs_diff:.2e}",
            f"time ratio progressive/dense: {self.time_ratio:.3f}",
        ]
        for mode, val in self.psnr_vs_truth.items():
            lines.append(f"{mode} vs ground truth: PSNR {format_db(val)} dB, SSIM {self.ssim_vs_truth[mode]:.4f}")
        return "\n".join(lines)


def _timed(render, reps, warmup):
    for _ in range(warmup):
        render()
    runs = [render() for _ in range(reps)]
    times = [c.total_ms for _, c in runs]
    image, counters = runs[-1]
    median = lambda xs: statistics.median(xs)  # noqa: E731
    counters = replace(
        counters,
        td_ms=median([c.td_ms for _, c in runs]),
        tc_ms=median([c.tc_ms for _, c in runs]),
        total_ms=median(times),
    )
    return image, counters, times


def bench(scene, bundle, target, config=None, reps=5, warmup=1, tol=EQUIVALENCE_TOL):
    """Time both render modes and check they agree on every progressive pixel.

    Raises :class:`EquivalenceViolation` when the largest absolute channel
    difference on selected pixels exceeds ``tol``.
    """
    cfg = config or RenderConfig()
    dense_img, dense_c, dense_t = _timed(
        lambda: render_dense_masked(scene, bundle, target, cfg, with_counters=True), reps, warmup
    )
    prog_img, prog_c, prog_t = _timed(
        lambda: render_progressive(scene, bundle, target, cfg), reps, warmup
    )
    sel = prog_img.rendered
    diff = np.abs(prog_img.rgb.astype(np.float64) - dense_img.rgb.astype(np.float64)).max(axis=2)
    diff = np.where(sel, diff, 0.0)
    worst = np.unravel_index(int(np.argmax(diff)), diff.shape)
    max_diff = float(diff[worst])
    if max_diff > tol:
        raise EquivalenceViolation(max_diff, (worst[1], worst[0]))

    reds = {
        "rays": reduction(prog_c.rays, dense_c.rays),
        "pd_points": reduction(prog_c.pd_points, dense_c.pd_points),
        "pc_points": reduction(prog_c.pc_points, dense_c.pc_points),
        "time": 100.0 * (1.0 - prog_c.total_ms / dense_c.total_ms),
    }
    # metrics compare like with like: unselected pixels show the background in both modes
    bg = np.asarray(scene.background if cfg.background is None else cfg.background, dtype=np.float64)
    prog_rgb = np.where(sel[..., None], prog_img.rgb, bg)
    dense_rgb = np.where(sel[..., None], dense_img.rgb, bg)
    report = BenchReport(
        dense_c, prog_c, reds,
        psnr(prog_rgb, dense_rgb), ssim(prog_rgb, dense_rgb), max_diff,
        dense_times_ms=dense_t, progressive_times_ms=prog_t,
    )
    truth = None
    if not hasattr(target, "K") and int(target) < len(scene.target_images):
        truth = scene.target_images[int(target)]
    if truth is not None:
        for mode, img in (("dense", dense_rgb), ("progressive", prog_rgb)):
            report.psnr_vs_truth[mode] = psnr(img, truth)
            report.ssim_vs_truth[mode] = ssim(img, truth)
    return report
