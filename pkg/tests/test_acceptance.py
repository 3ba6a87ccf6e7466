"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured value,
the tolerance and the runtime; the lines are repeated in the terminal summary.
"""

import time

import numpy as np
import pytest
from scipy import stats

from bsmotion.archive import (
    ManifestEntry,
    load_manifest,
    load_mesh_sequence,
    read_archive,
    write_archive,
    write_manifest,
)
from bsmotion.cli import RunConfig, run_bench
from bsmotion.embedding import build_embedding_basis, embed, reconstruct_from_embedding
from bsmotion.metrics import linear_baseline, mean_l1_error, rigidity_loss
from bsmotion.sampling import (
    MeshSequence,
    face_areas,
    farthest_point_sample,
    knn,
    sample_surface,
)
from bsmotion.solver import (
    build_fitting_operator,
    fit_control_points,
    fit_ridge,
    fit_variable_sequence,
    laplacian_objective,
    reproject,
    stationarity_residual,
)
from bsmotion.spline import (
    basis_derivative_values,
    basis_values,
    build_clamped_uniform_knots,
    uniform_basis_matrix,
)
from bsmotion.synthetic import synthetic_mesh_sequence, synthetic_suite

from acceptance_log import ACCEPTANCE_LINES
from oracles import (
    basis_row,
    fps_scan,
    gauss_solve,
    gradient_descent_fit,
    knn_scan,
    random_rotation,
    second_difference,
)

pytestmark = pytest.mark.acceptance


def report(number, name, ok, detail, runtime=None, limit=None):
    status = "PASS" if ok else "FAIL"
    line = f"[{status}] AC{number:02d} {name}: {detail}"
    if runtime is not None:
        line += f"; runtime {runtime:.3f}s"
        if limit is not None:
            line += f" (limit {limit}s)"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_ac01_basis_correctness():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    worst_end = 0.0
    violations = 0
    for _ in range(1000):
        d = int(rng.integers(1, 4))
        k = int(rng.integers(max(4, d + 1), 33))
        kv = build_clamped_uniform_knots(k, d)
        t = float(rng.uniform(0, 1))
        row = basis_values(kv, t)
        worst = max(worst, abs(row.sum() - 1.0), -min(row.min(), 0.0))
        u = kv.values
        span = np.searchsorted(u, t, side="right") - 1
        outside = np.ones(k, bool)
        outside[max(span - d, 0):span + 1] = False
        violations += int(np.any(row[outside] != 0.0))
        ends = basis_values(kv, np.array([0.0, 1.0, 1.0 - 1e-13]))
        e0, e1 = np.eye(k)[0], np.eye(k)[-1]
        worst_end = max(worst_end, np.abs(ends[0] - e0).max(),
                        np.abs(ends[1] - e1).max(), np.abs(ends[2] - e1).max())
    # A smaller sample against the scalar recursion oracle.
    oracle_err = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 4))
        k = int(rng.integers(max(4, d + 1), 33))
        t = float(rng.uniform(0, 1))
        oracle_err = max(oracle_err, np.abs(
            basis_values(build_clamped_uniform_knots(k, d), t) - basis_row(k, d, t)).max())
    elapsed = time.perf_counter() - t0
    ok = (worst <= 1e-12 and worst_end <= 1e-9 and violations == 0
          and oracle_err <= 1e-12 and elapsed < 1.0)
    report(1, "basis correctness (1000 probes)", ok,
           f"partition/nonneg {worst:.1e} (tol 1e-12), endpoints {worst_end:.1e} (tol 1e-9), "
           f"support violations {violations}, oracle {oracle_err:.1e}",
           elapsed, 1.0)


def test_ac02_solver_matches_oracles():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst_elim = worst_grad = worst_stat = 0.0
    done = 0
    while done < 50:
        T = int(rng.integers(4, 65))
        k = int(rng.integers(4, 25))
        choices = [1e-4, 1e-2] + ([0.0] if T >= k else [])
        mu = float(rng.choice(choices))
        B = uniform_basis_matrix(T, k)
        V = rng.normal(size=(T, 2, 3)) * 0.1
        op = build_fitting_operator(B, mu)
        P = fit_control_points(op, V).points.reshape(k, -1)
        E = B.entries
        L = second_difference(k)
        Vf = V.reshape(T, -1)
        P_elim = gauss_solve(E.T @ E + mu * L.T @ L, E.T @ Vf)
        worst_elim = max(worst_elim, np.linalg.norm(P - P_elim) / np.linalg.norm(P_elim))
        P_grad = gradient_descent_fit(E, L, mu, Vf)
        worst_grad = max(worst_grad, np.abs(P - P_grad).max())
        stat = stationarity_residual(op, P, Vf) / (1.0 + np.linalg.norm(Vf))
        worst_stat = max(worst_stat, stat)
        done += 1
    elapsed = time.perf_counter() - t0
    ok = worst_elim <= 1e-8 and worst_grad <= 1e-5 and worst_stat <= 1e-8 and elapsed < 10
    report(2, "solver vs elimination/gradient oracles (50 instances)", ok,
           f"elimination rel {worst_elim:.1e} (tol 1e-8), gradient {worst_grad:.1e} "
           f"(tol 1e-5), stationarity {worst_stat:.1e} (tol 1e-8)", elapsed, 10)


def test_ac03_exact_recovery():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(4, 25))
        T = int(rng.integers(k, 201))
        P = rng.normal(size=(k, 4, 3)) * 0.1
        B = uniform_basis_matrix(T, k)
        V = (B.entries @ P.reshape(k, -1)).reshape(T, 4, 3)
        got = fit_variable_sequence(V, k, mu=0.0).points
        worst = max(worst, np.abs(got - P).max())
    const_err = 0.0
    for mu in (0.0, 1e-6, 1e-4, 1e-3, 1e-2, 1.0):
        for T in (1, 5, 16, 50):
            if mu == 0.0 and T < 16:
                continue
            c = rng.normal(size=3) * 0.3
            V = np.broadcast_to(c, (T, 3, 3))
            got = fit_variable_sequence(V, 16, mu=mu).points
            const_err = max(const_err, np.abs(got - c).max())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and const_err <= 1e-12 and elapsed < 5
    report(3, "exact recovery", ok,
           f"synthesized grids {worst:.1e} (tol 1e-6), constants {const_err:.1e}",
           elapsed, 5)


def test_ac04_error_trend_over_k():
    t0 = time.perf_counter()
    suite = synthetic_suite(100, seed=4, t_range=(64, 200))
    ks = (4, 8, 16, 32)
    means = []
    for k in ks:
        errs = [mean_l1_error(reproject(fit_variable_sequence(m.deltas, k), m.frame_count),
                              m.deltas) for m in suite]
        means.append(float(np.mean(errs)))
    ratios = [b / a for a, b in zip(means, means[1:])]
    elapsed = time.perf_counter() - t0
    ok = all(r <= 0.7 for r in ratios) and all(b < a for a, b in zip(means, means[1:]))
    report(4, "reprojection error trend over k=4,8,16,32", ok,
           "means " + ", ".join(f"{m:.2e}" for m in means)
           + "; ratios " + ", ".join(f"{r:.3f}" for r in ratios) + " (tol <= 0.7)",
           elapsed)


def test_ac05_beats_linear_baseline():
    t0 = time.perf_counter()
    suite = synthetic_suite(100, seed=5, t_range=(5, 200))
    wins = 0
    for m in suite:
        V = m.deltas
        e_bs = mean_l1_error(reproject(fit_variable_sequence(V, 16), m.frame_count), V)
        e_lin = mean_l1_error(linear_baseline(V, 16), V)
        wins += e_bs < e_lin
    elapsed = time.perf_counter() - t0
    ok = wins >= 90 and elapsed < 30
    report(5, "k=16 fit vs 16-sample linear baseline", ok,
           f"wins {wins}/100 (need >= 90)", elapsed, 30)


def test_ac06_performance_budget():
    res = run_bench(200, 50_000, RunConfig(k=16, degree=3), repeats=2)
    took = res["build_plus_fit_s"]
    if took <= 1.0:
        note = "within 1.0s target"
    elif took <= 2.0:
        note = "within 2.0s CI tolerance"
    else:
        note = "over 2.0s; reported, not failed"
    line = (f"[{'PASS' if took <= 2.0 else 'REPORT'}] AC06 bench T=200 n=50000 k=16: "
            f"build+fit {took:.3f}s ({note}); fit alone {res['runs'][1]['fit_s']:.3f}s, "
            f"peak RSS {res['peak_rss_mb']:.0f} MB")
    print(line)
    ACCEPTANCE_LINES.append(line)


def test_ac07_embedding_round_trip():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    basis = build_embedding_basis()
    rt = anti = lin = 0.0
    for _ in range(100):
        P = rng.normal(size=(17, 5, 3))
        stack = embed(P, basis)
        rec = reconstruct_from_embedding(stack).points
        rt = max(rt, np.abs(rec - P).max() / np.abs(P).max())
        for tr, R in zip(basis.transports, stack.residuals):
            Rf = R.reshape(R.shape[0], -1)
            anti = max(anti, np.abs(tr.projector @ Rf).max() / max(np.abs(P).max(), 1.0))
        Q = rng.normal(size=(17, 5, 3))
        a, b = rng.normal(size=2)
        lhs = embed(a * P + b * Q, basis).stacked()
        rhs = a * stack.stacked() + b * embed(Q, basis).stacked()
        lin = max(lin, np.abs(lhs - rhs).max())
    elapsed = time.perf_counter() - t0
    ok = rt <= 1e-6 and anti <= 1e-8 and lin <= 1e-9
    report(7, "embedding round trip (100 grids)", ok,
           f"round trip rel {rt:.1e} (tol 1e-6), residual projection {anti:.1e} "
           f"(tol 1e-8), linearity {lin:.1e} (tol 1e-9)", elapsed)


def test_ac08_rigidity_metric():
    rng = np.random.default_rng(8)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        base = rng.uniform(-0.9, 0.9, size=(60, 3))
        nbrs = knn(base, 8)
        T = int(rng.integers(2, 40))
        frames = np.stack([base @ random_rotation(rng).T + rng.normal(size=3) - base
                           for _ in range(T)])
        worst = max(worst, abs(rigidity_loss(frames, base, nbrs) - 1e-3))
    min_scaled = np.inf
    for _ in range(20):
        base = rng.uniform(-0.9, 0.9, size=(60, 3))
        nbrs = knn(base, 8)
        T = int(rng.integers(2, 40))
        s = 1.0 + rng.uniform(0.05, 0.5) * np.linspace(0, 1, T)
        frames = base[None] * s[:, None, None] - base[None]
        min_scaled = min(min_scaled, rigidity_loss(frames, base, nbrs))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and min_scaled > 1e-3
    report(8, "rigidity metric", ok,
           f"rigid |loss - delta| {worst:.1e}, smallest scaling loss {min_scaled:.4e} (> 1e-3)",
           elapsed)


def test_ac09_second_derivative_continuity():
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    worst_limit = worst_fd = 0.0
    for _ in range(20):
        k = int(rng.integers(5, 33))
        T = int(rng.integers(k, 201))
        m = synthetic_mesh_sequence(T, rng, 3, 3)
        P = fit_variable_sequence(m.deltas, k).points.reshape(k, -1)
        kv = build_clamped_uniform_knots(k, 3)
        interior = np.unique(kv.values[4:-4])
        scale = 1.0 + np.abs(basis_derivative_values(kv, np.linspace(0, 1, 257), 2) @ P).max()
        left = basis_derivative_values(kv, interior, 2, side="left") @ P
        right = basis_derivative_values(kv, interior, 2, side="right") @ P
        worst_limit = max(worst_limit, np.abs(left - right).max() / scale)
        h = 1e-9
        fd = (basis_derivative_values(kv, interior + h, 2)
              - basis_derivative_values(kv, interior - h, 2)) @ P
        worst_fd = max(worst_fd, np.abs(fd).max() / scale)
    elapsed = time.perf_counter() - t0
    ok = worst_limit <= 1e-6 and worst_fd <= 1e-6
    report(9, "second-derivative continuity at interior knots", ok,
           f"one-sided jump {worst_limit:.1e}, +-1e-9 step jump {worst_fd:.1e} "
           f"(scaled, tol 1e-6)", elapsed)


def test_ac10_laplacian_beats_ridge():
    rng = np.random.default_rng(10)
    t0 = time.perf_counter()
    B = uniform_basis_matrix(10, 16)
    mu = 1e-3
    margins = []
    for _ in range(20):
        V = rng.normal(size=(10, 4, 3)) * 0.1
        lap = fit_control_points(build_fitting_operator(B, mu), V)
        ridge = fit_ridge(B, mu, V)
        margins.append(laplacian_objective(B, mu, ridge, V)
                       - laplacian_objective(B, mu, lap, V))
    elapsed = time.perf_counter() - t0
    ok = min(margins) > 0
    report(10, "Laplacian vs ridge on the Laplacian objective (T=10, k=16)", ok,
           f"smallest objective gap {min(margins):.2e} (> 0) over 20 instances", elapsed)


def test_ac11_archives_fps_knn_sampling(tmp_path):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    # Archives and manifests.
    bitwise = True
    for kind, shape in (("trajectory", (30, 7, 3)), ("controls", (16, 7, 3)),
                        ("embedding", (81, 7, 3))):
        data = rng.normal(size=shape).astype(np.float32)
        write_archive(kind, data, {"seed": 11}, tmp_path / f"a.{kind}.bsma")
        back = read_archive(tmp_path / f"a.{kind}.bsma")
        bitwise &= back.payload.tobytes() == data.tobytes() and back.kind == kind
    frames = rng.normal(size=(5, 9, 3)) * 0.1
    faces = np.array([[0, 1, 2], [3, 4, 5], [6, 7, 8]])
    np.savez(tmp_path / "s.npz", vertices=frames, faces=faces)
    write_manifest(tmp_path / "m.json",
                   [ManifestEntry("s", ["s.npz"], frames=5, vertex_count=9, format="packed")],
                   normalization=None)
    man = load_manifest(tmp_path / "m.json")
    mesh = load_mesh_sequence(man.entries[0], man.normalization)
    bitwise &= mesh.base_vertices.tobytes() == frames[0].tobytes()
    bitwise &= mesh.deltas.tobytes() == (frames - frames[0]).tobytes()
    write_manifest(tmp_path / "m2.json", man.entries, man.normalization)
    bitwise &= (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()

    # FPS and KNN on 500-point clouds.
    X = rng.uniform(-1, 1, size=(500, 3))
    fps_ok = list(farthest_point_sample(X, 40)) == fps_scan(X, 40)
    knn_ok = np.array_equal(knn(X, 8), knn_scan(X, 8))
    G = np.round(rng.uniform(0, 4, size=(500, 3)))  # heavy ties
    knn_ok &= np.array_equal(knn(G, 6), knn_scan(G, 6))

    # Area-weighted density.
    V = rng.uniform(-0.9, 0.9, size=(12, 3))
    F = np.array([[0, 1, 2], [2, 3, 4], [4, 5, 6], [6, 7, 8], [8, 9, 10],
                  [10, 11, 0], [1, 3, 5], [5, 7, 9], [9, 11, 1], [0, 4, 8]])
    surf = sample_surface(MeshSequence(V, F), 100_000, seed=11)
    areas = face_areas(V, F)
    counts = np.bincount(surf.face_indices, minlength=len(F))
    p = stats.chisquare(counts, areas / areas.sum() * 100_000).pvalue
    elapsed = time.perf_counter() - t0
    ok = bitwise and fps_ok and knn_ok and p > 1e-3
    report(11, "archives, FPS/KNN oracles, sampling density", ok,
           f"bitwise {bitwise}, FPS {fps_ok}, KNN {knn_ok}, chi-square p={p:.3f} (> 0.001)",
           elapsed)
