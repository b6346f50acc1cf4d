"""Reference doping, lambda sweep and figure data for the quasi-neutral study."""
from __future__ import annotations

import csv
import math
import os
import statistics
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adjoint import TrackingTargets, solve_adjoint
from .errors import ConfigError, SolverError
from .fem import Mesh1D, assemble, l2_norm
from .objective import DesignProblem
from .optimize import OptimizerConfig, OptRun, optimize
from .state import solve_state

# Shape of the reference doping: +AMP_POS plateau on the left, -AMP_NEG on
# the right, joined by a smoothstep ramp over [JUNCTION, JUNCTION + RAMP].
CANONICAL = {
    "amp_pos": 1.0,
    "amp_neg": 0.6,
    "junction": 0.45,
    "ramp": 0.1,
    "target_n": 0.8,
    "target_p": 1.2,
}
DEFAULT_LAMBDA2 = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 0.0)
SWEEP_COLUMNS = ("lambda2", "t_state_s", "t_adjoint_s", "dist_C_L2", "dist_V_L2",
                 "J_final", "iters", "status")
PROFILE_FIELDS = ("C", "V", "n", "p")
COST_FIELDS = ("J", "J1", "J2", "J3")


def _smoothstep(z):
    z = np.clip(z, 0.0, 1.0)
    return z * z * (3.0 - 2.0 * z)


def canonical_doping(x, scale=1.0):
    """Non-symmetric sign-changing reference doping at the points ``x``."""
    c = CANONICAL
    s = _smoothstep((np.asarray(x, float) - c["junction"]) / c["ramp"])
    return scale * (c["amp_pos"] * (1.0 - s) - c["amp_neg"] * s)


def targets_for(C) -> TrackingTargets:
    """``n_d = 0.8 C+`` and ``p_d = 1.2 |C-|``, both nonnegative."""
    C = np.asarray(C, float)
    return TrackingTargets(CANONICAL["target_n"] * np.maximum(C, 0.0),
                           CANONICAL["target_p"] * np.abs(np.minimum(C, 0.0)))


def canonical_profile(mesh: Mesh1D, scale=1.0):
    """Reference doping and tracking targets on ``mesh``.

    Returns
    -------
    C_ref, n_d, p_d : ndarray
    """
    C = canonical_doping(mesh.nodes, scale)
    t = targets_for(C)
    return C, t.n_d.copy(), t.p_d.copy()


@dataclass
class ExperimentSpec:
    """Everything one sweep needs."""

    mesh: Mesh1D
    C_ref: np.ndarray
    n_d: np.ndarray
    p_d: np.ndarray
    lambda2_list: tuple = DEFAULT_LAMBDA2
    cfg: OptimizerConfig = field(default_factory=OptimizerConfig)
    output_dir: Path | None = None
    delta2: float = 1e-6
    workers: int = 1
    timing_repeats: int = 3

    def __post_init__(self):
        lam = [float(v) for v in self.lambda2_list]
        if not lam:
            raise ConfigError("lambda2_list: empty")
        if any(not math.isfinite(v) or v < 0.0 for v in lam):
            raise ConfigError("lambda2_list: entries must be finite and >= 0")
        if any(b >= a for a, b in zip(lam, lam[1:])):
            raise ConfigError("lambda2_list: must be strictly decreasing")
        self.lambda2_list = tuple(lam)
        if int(self.workers) != self.workers or self.workers < 1:
            raise ConfigError(f"workers: must be an integer >= 1, got {self.workers!r}")
        for name in ("C_ref", "n_d", "p_d"):
            arr = np.asarray(getattr(self, name), float)
            if arr.shape != (self.mesh.n_nodes,):
                raise ConfigError(f"{name}: expected {self.mesh.n_nodes} nodal values")
            setattr(self, name, arr)

    @classmethod
    def default(cls, n_nodes=200, **kw) -> "ExperimentSpec":
        mesh = Mesh1D(0.0, 1.0, n_nodes)
        C, n_d, p_d = canonical_profile(mesh)
        return cls(mesh, C, n_d, p_d, **kw)

    def problem(self, lambda2: float) -> DesignProblem:
        return DesignProblem(
            assemble(self.mesh), self.C_ref, TrackingTargets(self.n_d, self.p_d),
            sigma=self.cfg.sigma, lambda2=lambda2, delta2=self.delta2,
            tol=self.cfg.tol_inner, freeze_totals=self.cfg.freeze_totals,
        )


@dataclass
class SweepRow:
    lambda2: float
    t_state: float = math.nan
    t_adjoint: float = math.nan
    dist_C: float = math.nan
    dist_V: float = math.nan
    J_final: float = math.nan
    iters: int = -1
    status: str = "ok"

    def values(self):
        return (self.lambda2, self.t_state, self.t_adjoint, self.dist_C, self.dist_V,
                self.J_final, self.iters, self.status)


def time_call(fn, repeats=3, min_batch_time=0.02):
    """Median per-call wall time over ``repeats`` batches after one warm-up.

    Each batch repeats ``fn`` often enough to last ``min_batch_time``.
    """
    t0 = time.perf_counter()
    fn()
    first = time.perf_counter() - t0
    batch = max(1, math.ceil(min_batch_time / max(first, 1e-9)))
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(batch):
            fn()
        samples.append((time.perf_counter() - t0) / batch)
    return statistics.median(samples)


def _run_one(spec: ExperimentSpec, lambda2: float):
    problem = spec.problem(lambda2)
    cfg = replace(spec.cfg, lambda2=lambda2)
    try:
        run = optimize(problem, cfg)
    except SolverError as exc:
        return lambda2, getattr(exc, "run", None), f"failed: {exc}", math.nan, math.nan
    dp = run.final.profile
    sol = run.final.state
    t_state = time_call(lambda: solve_state(dp, lambda2, cfg.tol_inner),
                        spec.timing_repeats)
    t_adj = time_call(lambda: solve_adjoint(sol, problem.targets, cfg.tol_inner),
                      spec.timing_repeats)
    status = "ok" if run.converged else run.stop_reason
    return lambda2, run, status, t_state, t_adj


def run_sweep(spec: ExperimentSpec):
    """Optimize for every ``lambda2`` and compare against the ``lambda2 = 0`` optimum.

    Returns
    -------
    rows : list of SweepRow
    runs : dict mapping lambda2 to OptRun (failed runs may be missing)
    """
    if 0.0 not in spec.lambda2_list:
        raise ConfigError("lambda2_list: the sweep needs the reference value 0")
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_one, [spec] * len(spec.lambda2_list),
                                    spec.lambda2_list))
    else:
        results = [_run_one(spec, lam) for lam in spec.lambda2_list]

    forms = assemble(spec.mesh)
    runs = {lam: run for lam, run, *_ in results if run is not None}
    ref = runs.get(0.0)
    ref_ok = ref is not None and ref.final is not None
    rows = []
    for lam, run, status, t_state, t_adj in results:
        row = SweepRow(lam, t_state, t_adj, status=status)
        if run is not None and run.final is not None:
            row.J_final = run.costs[-1]
            row.iters = run.iterations
            if ref_ok:
                row.dist_C = l2_norm(run.C - ref.C, forms)
                row.dist_V = l2_norm(run.V - ref.V, forms)
        rows.append(row)
    _timing_sanity(rows)
    if spec.output_dir is not None:
        write_sweep_csv(rows, Path(spec.output_dir) / "sweep.csv")
    return rows, runs


def _timing_sanity(rows):
    positive = [r for r in rows if r.lambda2 > 0.0 and math.isfinite(r.t_state)]
    for a, b in zip(positive, positive[1:]):
        if b.t_state < a.t_state:
            warnings.warn(
                f"state solve time dropped from {a.t_state:.3g}s (lambda2={a.lambda2:g}) "
                f"to {b.t_state:.3g}s (lambda2={b.lambda2:g})",
                RuntimeWarning, stacklevel=3,
            )
            return


def fmt(value) -> str:
    """17-significant-digit decimal for floats; plain text otherwise."""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path, header, rows):
    """Write via a ``.partial`` file and rename, so readers never see a torso."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    os.replace(tmp, path)
    return path


def read_csv(path):
    """Read a CSV written by :func:`write_csv` into a dict of column lists."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(v)
    return cols


def write_sweep_csv(rows, path):
    return write_csv(path, SWEEP_COLUMNS, [r.values() for r in rows])


def read_sweep_csv(path):
    cols = read_csv(path)
    rows = []
    for i in range(len(cols["lambda2"])):
        rows.append(SweepRow(
            float(cols["lambda2"][i]), float(cols["t_state_s"][i]),
            float(cols["t_adjoint_s"][i]), float(cols["dist_C_L2"][i]),
            float(cols["dist_V_L2"][i]), float(cols["J_final"][i]),
            int(cols["iters"][i]), cols["status"][i],
        ))
    return rows


def emit_figures(runs, out_dir, x=None):
    """Write the profile and cost-history CSVs.

    ``runs`` is an :class:`OptRun` or a mapping ``lambda2 -> OptRun``.
    Profiles have columns ``(x, value, lambda2)``; cost histories have
    ``(iteration, value, lambda2)``. Returns the written paths.
    """
    if isinstance(runs, OptRun):
        runs = {runs.lambda2: runs}
    out_dir = Path(out_dir)
    paths = []
    for name in PROFILE_FIELDS:
        rows = []
        for lam, run in runs.items():
            if run is None or run.final is None:
                continue
            ev = run.final
            values = {"C": ev.profile.C, "V": ev.state.V, "n": ev.state.n,
                      "p": ev.state.p}[name]
            xs = ev.profile.forms.x if x is None else x
            rows.extend((xi, vi, lam) for xi, vi in zip(xs, values))
        paths.append(write_csv(out_dir / f"fig_profiles_{name}.csv",
                               ("x", "value", "lambda2"), rows))
    for name in COST_FIELDS:
        rows = []
        for lam, run in runs.items():
            if run is None:
                continue
            for rec in run.iterates:
                rows.append((rec.k, rec.cost.as_dict()[name], lam))
        paths.append(write_csv(out_dir / f"fig_cost_{name}.csv",
                               ("iteration", "value", "lambda2"), rows))
    return paths
