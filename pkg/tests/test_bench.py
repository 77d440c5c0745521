import numpy as np
import pytest

from progvol.bench import CSV_COLUMNS, REFERENCE_REDUCTIONS, bench, reduction
from progvol.errors import EquivalenceViolation
from progvol.renderer import RenderConfig


def test_reduction():
    assert reduction(25, 100) == 75.0
    assert reduction(0, 0) == 100.0
    assert reduction(100, 100) == 0.0
    assert reduction(5, 0) == -float("inf")


def test_bench_report(tiny_scene):
    scene, bundle = tiny_scene
    rep = bench(scene, bundle, 0, RenderConfig(n_samples=16), reps=3, warmup=0)
    assert rep.max_abs_diff <= 1e-5
    assert len(rep.dense_times_ms) == 3 and len(rep.progressive_times_ms) == 3
    assert rep.dense.total_ms == pytest.approx(np.median(rep.dense_times_ms))
    assert rep.reductions["pd_points"] == pytest.approx(100 * (1 - rep.progressive.pd_points / rep.dense.pd_points))
    lines = rep.csv().splitlines()
    assert lines[0] == CSV_COLUMNS
    assert [l.split(",")[0] for l in lines[1:]] == ["dense", "progressive"]
    assert lines[1].split(",")[7] == "inf"
    table = rep.table()
    for value in REFERENCE_REDUCTIONS.values():
        assert f"-{value:.1f}%" in table
    assert set(rep.psnr_vs_truth) == {"dense", "progressive"}


def test_bench_raises_on_disagreement(tiny_scene):
    scene, bundle = tiny_scene
    with pytest.raises(EquivalenceViolation) as info:
        bench(scene, bundle, 0, RenderConfig(n_samples=16), reps=1, warmup=0, tol=-1.0)
    assert info.value.max_diff >= 0


def test_counter_identities_and_repeatability(tiny_scene):
    scene, bundle = tiny_scene
    cfg = RenderConfig(n_samples=16)
    a = bench(scene, bundle, 1, cfg, reps=1, warmup=0)
    b = bench(scene, bundle, 1, cfg, reps=1, warmup=0)
    for c in (a.dense, a.progressive):
        assert c.pc_points <= c.pd_points <= 16 * c.rays
    assert a.dense.pd_points == 16 * a.dense.rays
    assert a.dense.counts() == b.dense.counts() and a.progressive.counts() == b.progressive.counts()


def test_empty_density_scene(tiny_scene):
    from progvol.nets import Layer, MlpWeights

    scene, bundle = tiny_scene
    last = bundle.density.layers[-1]
    dead = MlpWeights(bundle.density.layers[:-1] + (Layer(last.W * 0, last.b * 0 - 1, "relu"),))
    rep = bench(scene, bundle.with_heads(dead, bundle.appearance), 0, RenderConfig(n_samples=16), reps=1, warmup=0)
    assert rep.progressive.pc_points == 0 and rep.dense.pc_points == 0
    assert rep.reductions["pc_points"] == 100.0
    assert rep.psnr_vs_dense == float("inf")
