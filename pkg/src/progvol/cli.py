"""Command line entry point."""

import argparse
import logging
import sys

import numpy as np

from .errors import (
    BadCamera,
    BadDimension,
    BadHeader,
    BadMagic,
    DimensionMismatch,
    EquivalenceViolation,
    InconsistentDims,
    MissingFile,
    ProgVolError,
    SchemaError,
    TruncatedFile,
    UnsupportedVersion,
)

log = logging.getLogger("progvol")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_EQUIVALENCE = 3

_VALIDATION = (
    SchemaError, MissingFile, BadCamera, BadDimension, BadHeader, BadMagic, DimensionMismatch,
    InconsistentDims, TruncatedFile, UnsupportedVersion,
)


def _load(args):
    from .nets import load_bundle
    from .scene import load_scene

    bundle = load_bundle(args.weights)
    return load_scene(args.scene, bundle), bundle


def cmd_gen_scene(args):
    from .synthetic import SyntheticSceneSpec, gen_synthetic_scene

    spec = SyntheticSceneSpec() if args.spec == "builtin" else SyntheticSceneSpec.from_json(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    path = gen_synthetic_scene(spec, args.out)
    print(path)


def cmd_render(args):
    from .renderer import RenderConfig, render_dense_masked, render_progressive
    from .scene import write_ppm

    scene, bundle = _load(args)
    cfg = RenderConfig(n_samples=args.n_samples, workers=args.workers)
    if args.mode == "progressive":
        image, counters = render_progressive(scene, bundle, args.target, cfg)
    else:
        image, counters = render_dense_masked(scene, bundle, args.target, cfg, with_counters=True)
    write_ppm(args.out, image.rgb)
    print(counters.csv_header())
    print(counters.csv_row())


def cmd_bench(args):
    from .bench import bench
    from .renderer import RenderConfig

    scene, bundle = _load(args)
    report = bench(scene, bundle, args.target, RenderConfig(n_samples=args.n_samples), reps=args.reps)
    with open(args.out, "w") as fh:
        fh.write(report.csv())
    print(report.table())


def cmd_train(args):
    from .nets import make_bundle, save_bundle
    from .scene import load_scene, parse_manifest, read_vertices
    from .trainer import TrainConfig, train_loop, write_trace

    man = parse_manifest(args.scene)
    n_vertices = len(read_vertices(man.prior_vertices))
    bundle = make_bundle(man.feature_dim, len(man.views), n_vertices, seed=args.seed)
    scene = load_scene(args.scene, bundle)
    cfg = TrainConfig(batch=args.batch, steps=args.steps, lr=args.lr, seed=args.seed,
                      holdout=tuple(args.holdout), n_samples=args.n_samples)
    trained, trace = train_loop(
        [scene], bundle, cfg, callback=lambda s, lr, loss: log.info("step %d lr %.3e loss %.6f", s, lr, loss)
    )
    save_bundle(trained, args.weights_out)
    write_trace(args.trace or args.weights_out + ".trace.csv", trace)


def cmd_export_cloud(args):
    from .nets import density_forward
    from .renderer import _point_features
    from .volume import export_occupied_points, positive_density_points, write_point_list

    scene, bundle = _load(args)
    centers = export_occupied_points(scene.volume)
    if args.occupied:
        pts = centers
    else:
        geom, _, mu, var = _point_features(scene, centers, np.float32)
        sigma = density_forward(bundle.density.astype(np.float32), geom, mu, var)
        pts = positive_density_points(centers, sigma)
    write_point_list(args.out, pts)
    print(f"{len(pts)} points")


def cmd_selftest(args):
    from .selftest import run

    return EXIT_OK if run() else EXIT_FAILURE


def build_parser():
    p = argparse.ArgumentParser(prog="progvol", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="write a synthetic capsule scene")
    g.add_argument("--spec", required=True, help="scene spec JSON, or 'builtin'")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(fn=cmd_gen_scene)

    def scene_args(q):
        q.add_argument("--scene", required=True, help="scene manifest JSON")
        q.add_argument("--weights", required=True, help="weight bundle file")

    r = sub.add_parser("render", help="render one target view")
    scene_args(r)
    r.add_argument("--target", type=int, required=True)
    r.add_argument("--out", required=True, help="output PPM")
    r.add_argument("--mode", choices=("progressive", "dense"), default="progressive")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--n-samples", type=int, default=64)
    r.set_defaults(fn=cmd_render)

    b = sub.add_parser("bench", help="compare progressive and dense-masked rendering")
    scene_args(b)
    b.add_argument("--target", type=int, required=True)
    b.add_argument("--out", required=True, help="output CSV")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--n-samples", type=int, default=64)
    b.set_defaults(fn=cmd_bench)

    t = sub.add_parser("train", help="fit the density and appearance heads")
    t.add_argument("--scene", required=True)
    t.add_argument("--weights-out", required=True)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--batch", type=int, default=1024)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--n-samples", type=int, default=64)
    t.add_argument("--holdout", type=int, nargs="*", default=[])
    t.add_argument("--trace", help="loss trace CSV (default: <weights-out>.trace.csv)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("export-cloud", help="write positive-density points as 'x y z' lines")
    scene_args(e)
    e.add_argument("--out", required=True)
    e.add_argument("--occupied", action="store_true", help="dump occupied voxel centres instead")
    e.set_defaults(fn=cmd_export_cloud)

    s = sub.add_parser("selftest", help="run invariant checks on micro fixtures")
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        code = args.fn(args)
    except EquivalenceViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EQUIVALENCE
    except _VALIDATION as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ProgVolError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
