"""Batch command-line frontend.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Per-sequence log lines go to stderr as JSON; reports go to files.
"""

import argparse
import dataclasses
import json
import logging
import os
import resource
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archive as arc
from .embedding import (
    DEFAULT_SCHEDULE,
    EmbeddingStack,
    LevelSchedule,
    build_embedding_basis,
    embed,
    pad_control_points,
    reconstruct_from_embedding,
)
from .metrics import (
    MetricConfig,
    charbonnier,
    linear_baseline,
    mean_l1_error,
    rigidity_loss,
)
from .sampling import DEFAULT_SAMPLE_COUNT, interpolate_attributes, knn, sample_surface
from .solver import (
    ControlGrid,
    UnderdeterminedError,
    build_fitting_operator,
    fit_control_points,
    fit_variable_sequence,
    reproject,
)
from .spline import uniform_basis_matrix
from .synthetic import synthetic_suite

log = logging.getLogger("bsmotion")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
WORKERS_ENV = "BSMOTION_WORKERS"
METHODS = ("bspline", "linear", "ridge")
BENCH_BUDGET_S = 1.0


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


@dataclass
class RunConfig:
    k: int = 16
    degree: int = 3
    mu: float = 1e-3
    t_prime: int = 16
    schedule: tuple = DEFAULT_SCHEDULE
    delta: float = 1e-3
    lambda1: float = 0.3
    lambda2: float = 0.1
    knn_k: int = 8
    samples: int = DEFAULT_SAMPLE_COUNT
    seed: int = 0
    workers: int = field(default_factory=lambda: int(os.environ.get(WORKERS_ENV, "1")))

    def metric_config(self):
        return MetricConfig(self.delta, self.lambda1, self.lambda2, self.knn_k)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["schedule"] = list(self.schedule)
        return d


_FLAG_FIELDS = {
    "k": "k", "degree": "degree", "mu": "mu", "t_prime": "t_prime",
    "schedule": "schedule", "delta": "delta", "lambda1": "lambda1",
    "lambda2": "lambda2", "knn": "knn_k", "samples": "samples", "seed": "seed",
    "workers": "workers",
}


def resolve_config(args):
    """Defaults, overridden by ``--config`` JSON, overridden by explicit flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config file {args.config}: {exc}") from exc
        unknown = set(values) - {f.name for f in dataclasses.fields(RunConfig)}
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
    for flag, name in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if "schedule" in values:
        values["schedule"] = tuple(int(x) for x in values["schedule"])
    cfg = RunConfig(**values)
    if cfg.workers < 1:
        raise DataError("workers must be >= 1")
    return cfg


def _log_record(**fields):
    log.info(json.dumps(fields, sort_keys=True, default=str))


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _classify(exc):
    if isinstance(exc, (UnderdeterminedError, np.linalg.LinAlgError, NumericalError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def _load_manifest(path):
    manifest = arc.load_manifest(path)
    entries = sorted(manifest.entries, key=lambda e: e.sequence_id)
    return manifest, entries


# fit ----------------------------------------------------------------------

def cmd_fit(manifest_path, out_dir, cfg, strict=False, write_reprojection=False):
    manifest, entries = _load_manifest(manifest_path)
    if not entries:
        raise DataError("no sequences in manifest")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(entry):
        t0 = time.perf_counter()
        try:
            mesh = arc.load_mesh_sequence(entry, manifest.normalization)
            grid = fit_variable_sequence(mesh.deltas, cfg.k, cfg.degree, cfg.mu)
            meta = {
                "sequence_id": entry.sequence_id,
                "source_frames": mesh.frame_count,
                "degree": cfg.degree,
                "mu": cfg.mu,
                "normalization": manifest.normalization,
                "config": cfg.to_dict(),
            }
            path = out_dir / f"{entry.sequence_id}.controls.bsma"
            arc.write_archive("controls", grid.points, meta, path)
            arc.write_obj(out_dir / f"{entry.sequence_id}.base.obj",
                          mesh.base_vertices, mesh.faces)
            stored = ControlGrid(arc.read_archive(path).payload.astype(np.float64),
                                 degree=cfg.degree)
            recon = reproject(stored, mesh.frame_count)
            if write_reprojection:
                arc.write_archive(
                    "trajectory", recon,
                    dict(meta, frames=mesh.frame_count),
                    out_dir / f"{entry.sequence_id}.trajectory.bsma")
            residual = mean_l1_error(recon, mesh.deltas)
            wall = (time.perf_counter() - t0) * 1e3
            _log_record(event="fit", id=entry.sequence_id, T=mesh.frame_count,
                        k=cfg.k, residual=residual, wall_time_ms=round(wall, 3))
            return entry.sequence_id, None
        except Exception as exc:  # isolated per sequence
            _log_record(event="fit_failed", id=entry.sequence_id, error=str(exc))
            log.warning("sequence %s failed: %s", entry.sequence_id, exc)
            return entry.sequence_id, exc

    results = _map(work, entries, cfg.workers)
    failures = [(sid, e) for sid, e in results if e is not None]
    if failures and (strict or len(failures) == len(results)):
        return max(_classify(e) for _, e in failures)
    return EXIT_OK


# reproject ----------------------------------------------------------------

def _read_kind(path, kind):
    a = arc.read_archive(path, strict=True)
    if a.kind != kind:
        raise DataError(f"{path}: expected a {kind} archive, got {a.kind}")
    return a


def cmd_reproject(controls_path, frames, out, cfg, base_mesh=None, obj_dir=None):
    a = _read_kind(controls_path, "controls")
    degree = int(a.metadata.get("degree", cfg.degree))
    grid = ControlGrid(np.asarray(a.payload, dtype=np.float64), degree=degree)
    traj = reproject(grid, frames)
    meta = dict(a.metadata, frames=int(frames), config=cfg.to_dict(),
                source=str(controls_path))
    arc.write_archive("trajectory", traj, meta, out)
    if base_mesh is not None:
        V0, F, _ = arc.read_obj(base_mesh)
        if traj.ndim != 3 or traj.shape[1] != len(V0):
            raise DataError(
                f"base mesh has {len(V0)} vertices, controls cover {traj.shape[1:]}"
            )
        obj_dir = Path(obj_dir) if obj_dir else Path(out).with_suffix("")
        width = max(4, len(str(frames - 1)))
        for t in range(frames):
            arc.write_obj(obj_dir / f"frame_{t:0{width}d}.obj", V0 + traj[t], F)
    _log_record(event="reproject", source=str(controls_path), frames=int(frames))
    return EXIT_OK


# compare ------------------------------------------------------------------

def _reconstruct(method, V, k, cfg):
    T = V.shape[0]
    if method == "linear":
        return linear_baseline(V, k) if T >= 2 else V.copy()
    reg = "laplacian" if method == "bspline" else "ridge"
    grid = fit_variable_sequence(V, k, cfg.degree, cfg.mu, regularizer=reg)
    return reproject(grid, T)


def compare_sequences(meshes, methods, ks, cfg):
    """Per-(sequence, method, k) records plus summary records."""
    mcfg = cfg.metric_config()
    rows = []
    for mesh in sorted(meshes, key=lambda m: m.sequence_id):
        V = mesh.deltas
        K = min(mcfg.knn_k, mesh.vertex_count - 1)
        nbrs = knn(mesh.base_vertices, K) if K >= 1 else None
        for method in methods:
            for k in ks:
                t0 = time.perf_counter()
                recon = _reconstruct(method, V, k, cfg)
                wall = (time.perf_counter() - t0) * 1e3
                rigid = (rigidity_loss(recon, mesh.base_vertices, nbrs, mcfg)
                         if nbrs is not None and V.shape[0] >= 2 else None)
                rows.append({
                    "record": "sequence", "id": mesh.sequence_id,
                    "T": int(V.shape[0]), "k": int(k), "method": method,
                    "mean_l1": mean_l1_error(recon, V),
                    "rigidity": rigid,
                    "corr": charbonnier(recon, V, mcfg.delta),
                    "wall_time_ms": round(wall, 3),
                })
    return rows + summarize(rows, methods, ks)


def summarize(rows, methods, ks):
    out = []
    by_key = {}
    for r in rows:
        by_key.setdefault((r["method"], r["k"]), {})[r["id"]] = r["mean_l1"]
    for method in methods:
        means = [float(np.mean(list(by_key[(method, k)].values()))) for k in ks]
        out.append({
            "record": "summary", "method": method, "ks": list(ks),
            "mean_l1_per_k": means,
            "strictly_decreasing": all(b < a for a, b in zip(means, means[1:])),
        })
    if "bspline" in methods:
        for other in methods:
            if other == "bspline":
                continue
            for k in ks:
                ours, theirs = by_key[("bspline", k)], by_key[(other, k)]
                wins = sum(ours[s] < theirs[s] for s in ours)
                out.append({
                    "record": "win_rate", "method": "bspline", "versus": other,
                    "k": k, "wins": wins, "total": len(ours),
                    "win_rate": wins / len(ours),
                })
    return out


def write_report(rows, path, cfg):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record": "config", **cfg.to_dict()}) + "\n")
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def cmd_compare(manifest_path, methods, ks, out_report, cfg, synthetic=0):
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
    if not methods or not ks:
        raise UsageError("need at least one method and one k")
    if synthetic:
        meshes = synthetic_suite(synthetic, seed=cfg.seed)
    else:
        if manifest_path is None:
            raise UsageError("compare needs a manifest or --synthetic N")
        manifest, entries = _load_manifest(manifest_path)
        meshes = [arc.load_mesh_sequence(e, manifest.normalization) for e in entries]
    if not meshes:
        raise DataError("no sequences to compare")
    rows = compare_sequences(meshes, methods, ks, cfg)
    write_report(rows, out_report, cfg)
    for r in rows:
        if r["record"] != "sequence":
            print(json.dumps(r, sort_keys=True))
    return EXIT_OK


# embed --------------------------------------------------------------------

def cmd_embed(controls_path, out, cfg, verify=False, tol=1e-6):
    a = _read_kind(controls_path, "controls")
    P = np.asarray(a.payload, dtype=np.float64)
    schedule = LevelSchedule(cfg.schedule, cfg.t_prime, cfg.degree)
    if P.shape[0] > schedule.finest:
        raise DataError(
            f"{P.shape[0]} control points exceed the finest schedule level "
            f"{schedule.finest}"
        )
    padded = pad_control_points(P, schedule.finest)
    basis = build_embedding_basis(schedule, cfg.mu)
    stack = embed(padded, basis)
    meta = dict(a.metadata, schedule=list(schedule.counts), t_prime=cfg.t_prime,
                mu=cfg.mu, original_k=int(P.shape[0]), config=cfg.to_dict())
    arc.write_archive("embedding", stack.stacked(), meta, out)
    if verify:
        rec = reconstruct_from_embedding(stack).points
        scale = max(float(np.max(np.abs(padded))), np.finfo(float).tiny)
        err = float(np.max(np.abs(rec - padded))) / scale if padded.size else 0.0
        print(json.dumps({"verify": "round_trip", "max_relative_error": err,
                          "tolerance": tol, "pass": err <= tol}))
        if err > tol:
            return EXIT_NUMERIC
    return EXIT_OK


def load_embedding(path):
    """Rebuild an :class:`EmbeddingStack` from an embedding archive."""
    a = _read_kind(path, "embedding")
    m = a.metadata
    schedule = LevelSchedule(tuple(m["schedule"]), m["t_prime"], m.get("degree", 3))
    basis = build_embedding_basis(schedule, m["mu"])
    return EmbeddingStack.from_stacked(np.asarray(a.payload, np.float64), basis)


# sample -------------------------------------------------------------------

def cmd_sample(manifest_path, sequence_id, out, cfg, shard=None, controls=None,
               with_deltas=False):
    manifest, entries = _load_manifest(manifest_path)
    if not entries:
        raise DataError("no sequences in manifest")
    if sequence_id is None:
        entry = entries[0]
    else:
        match = [e for e in entries if e.sequence_id == sequence_id]
        if not match:
            raise DataError(f"sequence {sequence_id!r} not in manifest")
        entry = match[0]
    mesh = arc.load_mesh_sequence(entry, manifest.normalization)
    surf = sample_surface(mesh, cfg.samples, cfg.seed)
    payload = {
        "points": surf.points,
        "normals": surf.normals,
        "barycentric": surf.barycentric,
        "face_indices": surf.face_indices.astype(np.float64),
    }
    if len(mesh.faces) >= 2 ** 24:
        raise DataError("too many faces to store face indices exactly as float32")
    if controls is not None:
        c = _read_kind(controls, "controls")
        payload["controls"] = interpolate_attributes(surf, c.payload, axis=1)
    if with_deltas:
        payload["deltas"] = interpolate_attributes(surf, mesh.deltas, axis=1)
    meta = {"sequence_id": entry.sequence_id, "seed": cfg.seed,
            "samples": cfg.samples, "normalization": manifest.normalization,
            "config": cfg.to_dict()}
    out = Path(out)
    if not shard:
        arc.write_archive("surface", payload, meta, out)
        return EXIT_OK
    # Random split into shards, reproducible from the same seed.
    order = np.random.Generator(np.random.PCG64(cfg.seed + 1)).permutation(cfg.samples)
    n_shards = -(-cfg.samples // shard)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(n_shards):
        idx = order[i * shard:(i + 1) * shard]
        part = {}
        for name, arr in payload.items():
            part[name] = arr[:, idx] if name in ("controls", "deltas") else arr[idx]
        arc.write_archive("surface", part, dict(meta, shard=i, n_shards=n_shards),
                          out / f"{entry.sequence_id}.surface.{i:03d}.bsma")
    return EXIT_OK


# bench --------------------------------------------------------------------

def run_bench(frames, points, cfg, repeats=2):
    """Time operator build and fit separately; later repeats reuse the factor."""
    rng = np.random.default_rng(cfg.seed)
    V = rng.standard_normal((frames, points, 3)) * 0.05
    mu = cfg.mu
    runs = []
    op = None
    for i in range(repeats):
        t0 = time.perf_counter()
        if op is None:
            if frames < cfg.k:
                mu = max(mu, 1e-6)
            op = build_fitting_operator(uniform_basis_matrix(frames, cfg.k, cfg.degree), mu)
        t1 = time.perf_counter()
        fit_control_points(op, V)
        t2 = time.perf_counter()
        runs.append({"run": i, "build_s": t1 - t0, "fit_s": t2 - t1,
                     "total_s": t2 - t0})
    first = runs[0]["total_s"]
    return {
        "T": frames, "n": points, "k": cfg.k, "degree": cfg.degree, "mu": mu,
        "runs": runs,
        "build_plus_fit_s": first,
        "budget_s": BENCH_BUDGET_S,
        "within_budget": first <= BENCH_BUDGET_S,
        "peak_rss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0,
    }


def cmd_bench(frames, points, cfg, repeats=2, out=None):
    report = run_bench(frames, points, cfg, repeats)
    report["config"] = cfg.to_dict()
    text = json.dumps(report, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# synth --------------------------------------------------------------------

def cmd_synth(out_dir, count, cfg, t_min=5, t_max=200):
    """Write ``count`` packed synthetic sequences and their manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for mesh in synthetic_suite(count, seed=cfg.seed, t_range=(t_min, t_max)):
        name = f"{mesh.sequence_id}.npz"
        frames = mesh.base_vertices[None] + mesh.deltas
        np.savez(out_dir / name, vertices=frames, faces=mesh.faces)
        entries.append(arc.ManifestEntry(mesh.sequence_id, [name], mesh.frame_count,
                                         mesh.vertex_count, "packed"))
    arc.write_manifest(out_dir / "manifest.json", entries, normalization=None)
    return EXIT_OK


# argument parsing ---------------------------------------------------------

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text}") from exc


def _str_list(text):
    return [x for x in text.replace(" ", "").split(",") if x]


def _common(p):
    p.add_argument("--config", help="JSON file with RunConfig overrides")
    p.add_argument("--k", type=int)
    p.add_argument("--degree", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--t-prime", dest="t_prime", type=int)
    p.add_argument("--schedule", type=_int_list)
    p.add_argument("--delta", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--knn", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="bsmotion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit every manifest sequence to control points")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--reprojections", action="store_true",
                   help="also write the reprojected trajectory archive")
    _common(p)

    p = sub.add_parser("reproject", help="evaluate control points at any frame count")
    p.add_argument("controls")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--base-mesh", help="OBJ of the initial shape; writes OBJ frames")
    p.add_argument("--obj-dir")
    _common(p)

    p = sub.add_parser("compare", help="ablation harness: bspline vs linear vs ridge")
    p.add_argument("manifest", nargs="?")
    p.add_argument("--methods", type=_str_list, default=["bspline", "linear"])
    p.add_argument("--ks", type=_int_list, default=[16])
    p.add_argument("--synthetic", type=int, default=0,
                   help="use N in-memory synthetic sequences instead of a manifest")
    p.add_argument("--out", required=True, help="report path (JSON lines)")
    _common(p)

    p = sub.add_parser("embed", help="multilevel embedding of a controls archive")
    p.add_argument("controls")
    p.add_argument("--out", required=True)
    p.add_argument("--verify", action="store_true")
    _common(p)

    p = sub.add_parser("sample", help="dense surface sampling with attribute transfer")
    p.add_argument("manifest")
    p.add_argument("--id", dest="sequence_id")
    p.add_argument("--out", required=True)
    p.add_argument("--shard", type=int)
    p.add_argument("--controls", help="controls archive to transfer to the samples")
    p.add_argument("--with-deltas", action="store_true")
    _common(p)

    p = sub.add_parser("bench", help="time operator build and fit on synthetic data")
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--points", type=int, default=50_000)
    p.add_argument("--repeats", type=int, default=2)
    p.add_argument("--out")
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic packed dataset and manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--t-min", type=int, default=5)
    p.add_argument("--t-max", type=int, default=200)
    _common(p)
    return parser


def _dispatch(args, cfg):
    c = args.command
    if c == "fit":
        return cmd_fit(args.manifest, args.out, cfg, args.strict, args.reprojections)
    if c == "reproject":
        if args.frames < 1:
            raise UsageError("--frames must be >= 1")
        return cmd_reproject(args.controls, args.frames, args.out, cfg,
                             args.base_mesh, args.obj_dir)
    if c == "compare":
        return cmd_compare(args.manifest, args.methods, args.ks, args.out, cfg,
                           args.synthetic)
    if c == "embed":
        return cmd_embed(args.controls, args.out, cfg, args.verify)
    if c == "sample":
        return cmd_sample(args.manifest, args.sequence_id, args.out, cfg, args.shard,
                          args.controls, args.with_deltas)
    if c == "bench":
        return cmd_bench(args.frames, args.points, cfg, args.repeats, args.out)
    if c == "synth":
        return cmd_synth(args.out, args.count, cfg, args.t_min, args.t_max)
    raise UsageError(f"unknown command {c}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve_config(args)
        return _dispatch(args, cfg)
    except UsageError as exc:
        print(f"bsmotion: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnderdeterminedError, np.linalg.LinAlgError, NumericalError) as exc:
        print(f"bsmotion: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, arc.ArchiveError, ValueError, OSError) as exc:
        print(f"bsmotion: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
