"""Picard iteration over the linearized system, the contraction metric, and continuation sweeps.

Within a time slab, iterate k supplies the frozen coefficients (v, g) = (u^k, h^k)
and iterate k+1 is obtained by advancing phi and h by transport, deriving
varphi = 1/h, psi = (aδ/(δ-1))∇h and f = psi varphi from the new h, and then
taking implicit momentum steps. Every iterate restarts from the slab's initial
data. Slabs are chained until the final time.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import DiagnosticsRecord, conserved_quantities, dissipation_rate, make_record
from .errors import CFLError, DnslabError, NonContractionError, ShapeError
from .grid import Grid
from .krylov import pcg
from .momentum import HFORM, MomentumStepConfig, advance_momentum_h, advance_momentum_varphi
from .ops import grad, laplacian
from .params import Params, check_params, derive_constants
from .reform import from_reform, lift, relation_residuals, to_reform
from .state import PrimitiveState, ReformState
from .transport import (
    TransportScheme,
    advance_f,
    advance_h,
    advance_phi,
    advance_psi,
    advance_varphi,
    transport_step,
)

log = logging.getLogger(__name__)

FROZEN_INITIAL = "FrozenInitial"
HEAT_SMOOTHED = "HeatSmoothed"


@dataclass(frozen=True)
class PicardConfig:
    """Slabs of ``steps_per_slab`` inner steps of size ``dt``.

    ``tol`` defaults to (safety Δx²)², the square of the spatial truncation
    scale, since Γ is a sum of squared norms. ``psi_iterate`` selects whether
    the momentum source uses the coefficient built from the new h ("new") or
    from the coefficient iterate ("old").
    """

    dt: float = 1e-3
    steps_per_slab: int = 10
    tol: float | None = None
    safety: float = 1.0
    k_max: int = 30
    nu: float = 0.1
    initial: str = FROZEN_INITIAL
    psi_iterate: str = "new"
    transport: TransportScheme = field(default_factory=TransportScheme)
    momentum: MomentumStepConfig = field(default_factory=MomentumStepConfig)
    diag_every: int = 10
    monitors: bool = True
    evolve_tracks: bool = True
    stagnation_ratio: float = 0.99
    stagnation_count: int = 3
    subcycle: int = 0  # dt halvings allowed on a CFL violation; 0 aborts instead

    def __post_init__(self):
        problems = []
        if not self.dt > 0:
            problems.append("dt must be positive")
        if self.steps_per_slab < 1:
            problems.append("steps_per_slab must be at least 1")
        if self.tol is not None and not self.tol > 0:
            problems.append("tolerance must be positive")
        if self.k_max < 2:
            problems.append("k_max must be at least 2")
        if not 0 < self.nu < 1:
            problems.append("nu must lie in (0, 1)")
        if self.initial not in (FROZEN_INITIAL, HEAT_SMOOTHED):
            problems.append(f"initial must be {FROZEN_INITIAL} or {HEAT_SMOOTHED}")
        if self.psi_iterate not in ("new", "old"):
            problems.append("psi_iterate must be 'new' or 'old'")
        if self.diag_every < 1:
            problems.append("diag_every must be at least 1")
        if self.subcycle < 0:
            problems.append("subcycle must be nonnegative")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def slab_length(self) -> float:
        return self.dt * self.steps_per_slab

    def tolerance(self, grid: Grid) -> float:
        return self.tol if self.tol is not None else (self.safety * grid.dx**2) ** 2

    def replace(self, **changes) -> "PicardConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class ContinuationPlan:
    """ε values (decreasing) run at fixed η, then η values (decreasing) at the final ε."""

    eps: tuple[float, ...] = (1e-2,)
    eta: tuple[float, ...] = (1e-1,)
    eta_fixed: float | None = None
    form: str = HFORM
    interior_halfwidth: float = 1.0

    def __post_init__(self):
        for name in ("eps", "eta"):
            seq = tuple(float(x) for x in getattr(self, name))
            object.__setattr__(self, name, seq)
            if not seq:
                raise ValueError(f"{name} sequence must not be empty")
            if any(b >= a for a, b in zip(seq, seq[1:])):
                raise ValueError(f"{name} sequence must be strictly decreasing")
            if any(x < 0 for x in seq):
                raise ValueError(f"{name} values must be nonnegative")
        if self.eta_fixed is None:
            object.__setattr__(self, "eta_fixed", self.eta[0])

    @staticmethod
    def geometric(first: float, last: float, n: int) -> tuple[float, ...]:
        return tuple(float(x) for x in np.geomspace(first, last, n))


# ---------------------------------------------------------------- slab trajectories


FIELDS = ("phi", "u", "h", "psi", "varphi", "f")


@dataclass
class SlabTrajectory:
    """Time levels of one slab; arrays are stacked along a leading time axis."""

    grid: Grid
    times: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    h: np.ndarray
    psi: np.ndarray
    varphi: np.ndarray
    f: np.ndarray
    tracks: dict = field(default_factory=dict)
    krylov_iters: int = 0

    @property
    def nsteps(self) -> int:
        return len(self.times) - 1

    def state(self, i: int) -> ReformState:
        return ReformState(self.grid, t=float(self.times[i]), **{n: getattr(self, n)[i] for n in FIELDS})

    @classmethod
    def empty(cls, grid: Grid, times: np.ndarray) -> "SlabTrajectory":
        n = len(times)
        s, v = (n, *grid.shape), (n, grid.dim, *grid.shape)
        return cls(grid, np.asarray(times, dtype=float), np.empty(s), np.empty(v), np.empty(s), np.empty(v), np.empty(s), np.empty(v))

    @classmethod
    def constant(cls, r: ReformState, times: np.ndarray) -> "SlabTrajectory":
        out = cls.empty(r.grid, times)
        for name in FIELDS:
            getattr(out, name)[...] = getattr(r, name)
        return out

    def set_level(self, i: int, r: ReformState) -> None:
        for name in FIELDS:
            getattr(self, name)[i] = getattr(r, name)


def _sq_l2(x: np.ndarray, grid: Grid) -> float:
    return float(np.sum(x * x) * grid.cell_volume)


def gamma_metric(sa: SlabTrajectory, sb: SlabTrajectory, p: Params, nu: float = 0.1) -> float:
    """Sum over the terms of their sup over the slab:

    ‖Δphi‖²_H1 + ‖Δvarphi‖²_H1 + |Δf|²_2 + |sqrt(varphi_b) Δu|²_2 + aν(α|∇Δu|²_2 + (α+β)|div Δu|²_2),

    where varphi_b is the varphi of the second (newer) trajectory.
    """
    g = sa.grid
    if not g.same_layout(sb.grid) or sa.phi.shape != sb.phi.shape:
        raise ShapeError("trajectories live on different grids or slabs")
    a = derive_constants(p).a
    sups = np.zeros(5)
    for i in range(len(sa.times)):
        dphi = sa.phi[i] - sb.phi[i]
        dvp = sa.varphi[i] - sb.varphi[i]
        du = sa.u[i] - sb.u[i]
        J = np.stack([grad(du[c], g) for c in range(g.dim)])
        divdu = np.trace(J, axis1=0, axis2=1)
        terms = (
            _sq_l2(dphi, g) + _sq_l2(grad(dphi, g), g),
            _sq_l2(dvp, g) + _sq_l2(grad(dvp, g), g),
            _sq_l2(sa.f[i] - sb.f[i], g),
            _sq_l2(np.sqrt(sb.varphi[i]) * du, g),
            a * nu * (p.alpha * _sq_l2(J, g) + (p.alpha + p.beta) * _sq_l2(divdu, g)),
        )
        sups = np.maximum(sups, terms)
    return float(sups.sum())


# ---------------------------------------------------------------- one Picard sweep


def _derived(h: np.ndarray, p: Params, grid: Grid):
    c = derive_constants(p)
    varphi = 1.0 / h
    psi = c.a * p.delta / (p.delta - 1) * grad(h, grid)
    return psi, varphi, psi * varphi


def picard_step(traj_k: SlabTrajectory, init: ReformState, p: Params, cfg: PicardConfig) -> SlabTrajectory:
    """Iterate k+1 over the slab with (v, g) = (u^k, h^k), restarting from ``init``."""
    g = init.grid
    c = derive_constants(p)
    times = traj_k.times
    out = SlabTrajectory.constant(init, times)
    tracks = {}
    if cfg.evolve_tracks:
        tracks = {"psi": out.psi.copy(), "varphi": out.varphi.copy(), "f": out.f.copy()}
    scheme = cfg.transport
    mcfg = cfg.momentum
    eps = p.eps
    krylov = 0
    prev_coef = None
    for n in range(traj_k.nsteps):
        dt = float(times[n + 1] - times[n])
        v = (traj_k.u[n], traj_k.u[n + 1])
        gk = (traj_k.h[n], traj_k.h[n + 1])
        try:
            phi_new = advance_phi(out.phi[n], v, dt, p.gamma, g, scheme, inflow=g.profile.get("phi"))
            h_new = advance_h(out.h[n], v, gk, dt, p.delta, g, scheme, inflow=g.profile.get("h"))
            out.phi[n + 1] = phi_new
            out.h[n + 1] = h_new
            psi_new, varphi_new, f_new = _derived(h_new, p, g)
            out.psi[n + 1], out.varphi[n + 1], out.f[n + 1] = psi_new, varphi_new, f_new
            if cfg.evolve_tracks:
                tracks["psi"][n + 1] = advance_psi(tracks["psi"][n], v, gk, dt, c.a, p.delta, g, scheme)
                tracks["varphi"][n + 1] = advance_varphi(tracks["varphi"][n], v, gk, dt, p.delta, g, scheme)
                tracks["f"][n + 1] = advance_f(
                    tracks["f"][n], v, gk, (out.varphi[n], out.varphi[n + 1]), dt, c.a, p.delta, g, scheme
                )
            if cfg.psi_iterate == "new":
                hc = (out.h[n], out.h[n + 1])
                psic = (out.psi[n], out.psi[n + 1])
            else:
                hc = gk
                psic = (traj_k.psi[n], traj_k.psi[n + 1])
            phic = (out.phi[n], out.phi[n + 1])
            if mcfg.form == HFORM:
                u_new, info = advance_momentum_h(
                    out.u[n], v, phic, hc, psic, p, eps, dt, g, mcfg, x0=traj_k.u[n + 1]
                )
            else:
                vp = (1.0 / hc[0], 1.0 / hc[1])
                fc = (psic[0] * vp[0], psic[1] * vp[1])
                u_new, info = advance_momentum_varphi(out.u[n], v, phic, vp, fc, p, dt, g, mcfg, x0=traj_k.u[n + 1])
        except DnslabError as exc:
            if exc.args:
                exc.args = (f"{exc.args[0]} (Picard step {n}, t={times[n]:.6g})",) + exc.args[1:]
            raise
        out.u[n + 1] = u_new
        krylov += info.iterations
    out.tracks = tracks
    out.krylov_iters = krylov
    return out


# ---------------------------------------------------------------- initial iterates


def heat_smoothed_iterate(init: ReformState, times: np.ndarray, p: Params, cfg: PicardConfig) -> SlabTrajectory:
    """phi and h carried by the initial velocity, u by the heat flow Y_t = Z ΔY with Z the carried h."""
    g = init.grid
    out = SlabTrajectory.constant(init, times)
    u0 = np.array(init.u)
    interior = np.ones(g.shape, dtype=bool) if g.periodic else ~g.boundary_mask
    for n in range(len(times) - 1):
        dt = float(times[n + 1] - times[n])
        out.phi[n + 1] = transport_step(out.phi[n], u0, dt, g, cfg.transport)
        out.h[n + 1] = transport_step(out.h[n], u0, dt, g, cfg.transport)
        Z = out.h[n + 1]
        weight = 1.0 / (Z * dt)
        op = lambda w: (weight * w - laplacian(w * interior, g)) * interior
        diag = weight + 2 * sum(1 / hh**2 for hh in g.spacing)
        for comp in range(g.dim):
            rhs = weight * out.u[n, comp] * interior
            out.u[n + 1, comp], _ = pcg(op, rhs, x0=out.u[n, comp], diag=diag, rtol=cfg.momentum.rtol, project=lambda w: w * interior)
        psi, varphi, f = _derived(out.h[n + 1], p, g)
        out.psi[n + 1], out.varphi[n + 1], out.f[n + 1] = psi, varphi, f
    return out


def initial_iterate(init: ReformState, times: np.ndarray, p: Params, cfg: PicardConfig) -> SlabTrajectory:
    if cfg.initial == HEAT_SMOOTHED:
        return heat_smoothed_iterate(init, times, p, cfg)
    return SlabTrajectory.constant(init, times)


# ---------------------------------------------------------------- nonlinear solve


@dataclass
class SlabLog:
    slab_index: int
    k: int
    Gamma: float
    krylov_iters_total: int
    wall_time_s: float

    def row(self) -> dict:
        return {
            "slab_index": self.slab_index,
            "k": self.k,
            "Gamma": self.Gamma,
            "krylov_iters_total": self.krylov_iters_total,
            "wall_time_s": self.wall_time_s,
        }


CONVERGENCE_COLUMNS = ("slab_index", "k", "Gamma", "krylov_iters_total", "wall_time_s")


@dataclass
class NonlinearResult:
    grid: Grid
    params: Params
    states: list[ReformState]  # every inner time level
    records: list[DiagnosticsRecord]
    log: list[SlabLog]
    converged: list[bool]
    D: np.ndarray  # dissipation integral at every time level
    tracks: list[dict] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def primitive(self, i: int) -> PrimitiveState:
        return from_reform(self.states[i], self.params)

    def gammas(self, slab: int = 0) -> list[float]:
        return [row.Gamma for row in self.log if row.slab_index == slab]


def _snap_to_dt(T: float, dt: float) -> tuple[int, float]:
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return n, T / n


def _iterate_slab(start: ReformState, times, p: Params, cfg: PicardConfig, tol: float, slab: int, clock):
    """Picard iterates on one slab. Returns (trajectory, Γ history, log rows, converged)."""
    traj = initial_iterate(start, times, p, cfg)
    t_begin = clock()
    history: list[float] = []
    logs: list[SlabLog] = []
    krylov = 0
    for k in range(1, cfg.k_max + 1):
        new = picard_step(traj, start, p, cfg)
        krylov += new.krylov_iters
        G = gamma_metric(traj, new, p, cfg.nu)
        history.append(G)
        logs.append(SlabLog(slab, k, G, krylov, clock() - t_begin))
        traj = new
        if G < tol:
            return traj, history, logs, True
        ratios = [b / a if a > 0 else math.inf for a, b in zip(history, history[1:])]
        tail = ratios[-cfg.stagnation_count :]
        if len(tail) == cfg.stagnation_count and all(r >= cfg.stagnation_ratio for r in tail):
            raise NonContractionError(f"Picard iteration stagnated in slab {slab} at k={k} (Γ history {history})", history)
    return traj, history, logs, False


def solve_nonlinear(init: PrimitiveState | ReformState, p: Params, T: float, cfg: PicardConfig, clock=time.perf_counter) -> NonlinearResult:
    """March Picard-converged slabs over [0, T].

    The inner step is shortened so that an integer number of steps covers T.
    With ``cfg.subcycle > 0`` a slab that violates the CFL bound is retried
    with half the step, at most that many times over the run, and each
    halving is logged. When ``p.eta > 0`` the initial phi is lifted by eta before the march.
    """
    check_params(p)
    r0 = init if isinstance(init, ReformState) else to_reform(init, p)
    if p.eta > 0:
        r0 = lift(r0, p, p.eta)
    g = r0.grid
    nsteps, dt = _snap_to_dt(T, cfg.dt)
    tol = cfg.tolerance(g)
    s0 = from_reform(r0, p)
    c0 = conserved_quantities(s0, p)
    Cu = float(np.linalg.norm(c0.M)) / c0.m
    D = [0.0]
    rate_prev = dissipation_rate(s0, p)
    states = [r0]
    rel0 = relation_residuals(r0, p).as_dict()
    if cfg.evolve_tracks:
        rel0.update({f"{name}_track_gap": 0.0 for name in ("psi", "varphi", "f")})
    records = [make_record(s0, p, 0.0, c0.E, Cu, r0 if cfg.monitors else None, rel0)]
    logs: list[SlabLog] = []
    converged: list[bool] = []
    tracks: list[dict] = []
    start = r0
    step0 = 0
    slab = 0
    t_end = r0.t + nsteps * dt
    halvings = 0
    while step0 < nsteps:
        m = min(cfg.steps_per_slab, nsteps - step0)
        times = start.t + dt * np.arange(m + 1)
        try:
            traj, history, slab_logs, ok = _iterate_slab(start, times, p, cfg, tol, slab, clock)
        except CFLError:
            if halvings >= cfg.subcycle:
                raise
            halvings += 1
            n_rem, dt = _snap_to_dt(t_end - start.t, dt / 2)
            nsteps = step0 + n_rem
            log.warning("slab %d: CFL violation, continuing with dt=%.3e (halving %d of %d)", slab, dt, halvings, cfg.subcycle)
            continue
        logs.extend(slab_logs)
        if not ok:
            log.warning("slab %d: Γ=%.3e above tolerance %.3e after k_max=%d", slab, history[-1], tol, cfg.k_max)
        converged.append(ok)
        tracks.append(traj.tracks)
        for i in range(1, m + 1):
            r = traj.state(i)
            s = from_reform(r, p)
            rate = dissipation_rate(s, p)
            D.append(D[-1] + 0.5 * dt * (rate + rate_prev))
            rate_prev = rate
            states.append(r)
            step = step0 + i
            if step % cfg.diag_every == 0 or step == nsteps:
                rel = relation_residuals(r, p).as_dict()
                if traj.tracks:
                    for name in ("psi", "varphi", "f"):
                        diff = traj.tracks[name][i] - getattr(r, name)
                        rel[f"{name}_track_gap"] = math.sqrt(_sq_l2(diff, g))
                records.append(make_record(s, p, D[-1], c0.E, Cu, r if cfg.monitors else None, rel))
        start = traj.state(m)
        step0 += m
        slab += 1
    return NonlinearResult(g, p, states, records, logs, converged, np.array(D), tracks)


# ---------------------------------------------------------------- continuation


@dataclass
class ContinuationRow:
    stage: str
    eps: float
    eta: float
    status: str
    distance_rho: float | None = None
    distance_u: float | None = None
    distance_psi: float | None = None
    interior_min_rho: float | None = None
    error: str | None = None

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def trajectory_distance(a: NonlinearResult, b: NonlinearResult) -> dict[str, float]:
    """sup over shared time levels of the L² distances of rho, u and psi."""
    g = a.grid
    n = min(len(a.states), len(b.states))
    out = {"rho": 0.0, "u": 0.0, "psi": 0.0}
    for i in range(n):
        ra, rb = a.states[i], b.states[i]
        if abs(ra.t - rb.t) > 1e-12 * max(1.0, abs(ra.t)):
            raise ShapeError("runs do not share time levels")
        pa, pb = a.primitive(i), b.primitive(i)
        out["rho"] = max(out["rho"], math.sqrt(_sq_l2(pa.rho - pb.rho, g)))
        out["u"] = max(out["u"], math.sqrt(_sq_l2(ra.u - rb.u, g)))
        out["psi"] = max(out["psi"], math.sqrt(_sq_l2(ra.psi - rb.psi, g)))
    return out


def _interior_min_rho(res: NonlinearResult, halfwidth: float) -> float:
    mask = res.grid.radius <= halfwidth
    return min(float(res.primitive(i).rho[mask].min()) for i in range(len(res.states)))


def _run_one(args):
    init, p, T, cfg = args
    try:
        return solve_nonlinear(init, p, T, cfg), None
    except DnslabError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def continuation(init: PrimitiveState, p: Params, plan: ContinuationPlan, T: float, cfg: PicardConfig, jobs: int = 1) -> list[ContinuationRow]:
    """ε sweep at fixed η, then η sweep at the last ε; distances between consecutive runs.

    Per-run failures are recorded in the table and do not stop the sweep.
    """
    cfg = cfg.replace(momentum=replace(cfg.momentum, form=plan.form), monitors=False)
    runs = [("eps", e, plan.eta_fixed) for e in plan.eps] + [("eta", plan.eps[-1], eta) for eta in plan.eta]
    unique = list(dict.fromkeys((e, eta) for _, e, eta in runs))
    args = [(init, p.replace(eps=e, eta=eta), T, cfg) for e, eta in unique]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            done = list(ex.map(_run_one, args))
    else:
        done = [_run_one(a) for a in args]
    by_key = dict(zip(unique, done))
    results = [by_key[(e, eta)] for _, e, eta in runs]
    rows = []
    prev: dict[str, NonlinearResult | None] = {}
    for (stage, e, eta), (res, err) in zip(runs, results):
        row = ContinuationRow(stage, e, eta, "ok" if res is not None else "failed", error=err)
        if res is not None:
            row.interior_min_rho = _interior_min_rho(res, plan.interior_halfwidth)
            before = prev.get(stage)
            if before is not None:
                d = trajectory_distance(before, res)
                row.distance_rho, row.distance_u, row.distance_psi = d["rho"], d["u"], d["psi"]
        prev[stage] = res
        rows.append(row)
    return rows


__all__ = [
    "ContinuationPlan",
    "ContinuationRow",
    "FROZEN_INITIAL",
    "HEAT_SMOOTHED",
    "NonlinearResult",
    "PicardConfig",
    "SlabLog",
    "SlabTrajectory",
    "continuation",
    "gamma_metric",
    "heat_smoothed_iterate",
    "picard_step",
    "solve_nonlinear",
    "trajectory_distance",
]
