import numpy as np
import pytest

from progvol.nets import make_bundle
from progvol.synthetic import SyntheticSceneSpec, make_scene
from progvol.trainer import TrainConfig, train_loop

SMOKE_STEPS = 2000
SMOKE_BATCH = 128
SMOKE_LR = 1e-4
HOLDOUT = 7


def tiny_spec(**kw):
    base = dict(n_vertices=200, width=24, height=24, views=3, targets=2, feature_dim=8, n_gt=64, focal=45.0)
    base.update(kw)
    return SyntheticSceneSpec(**base)


def tiny_bundle(spec, seed=42):
    return make_bundle(spec.feature_dim, spec.views, spec.n_vertices, seed=seed,
                       density_hidden=(16, 16), appearance_hidden=(16, 8))


@pytest.fixture(scope="session")
def tiny_scene():
    spec = tiny_spec()
    bundle = tiny_bundle(spec)
    return make_scene(spec, bundle), bundle


@pytest.fixture(scope="session")
def capsule_scene():
    """Default capsule scene with its seeded random bundle."""
    spec = SyntheticSceneSpec()
    bundle = make_bundle(spec.feature_dim, spec.views, spec.n_vertices, seed=spec.seed)
    return make_scene(spec, bundle), bundle


@pytest.fixture(scope="session")
def trained_run(capsule_scene):
    scene, bundle = capsule_scene
    cfg = TrainConfig(batch=SMOKE_BATCH, steps=SMOKE_STEPS, lr=SMOKE_LR, holdout=(HOLDOUT,))
    import time

    start = time.perf_counter()
    trained, trace = train_loop([scene], bundle, cfg)
    return trained, trace, time.perf_counter() - start


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record(number, name, ok, detail=""):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[(number, name)] = bool(ok), detail
    print(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {name}: {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[(number, name)]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {name}: {detail}")
