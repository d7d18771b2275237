"""Dinkelbach/SCA power allocation, its feasibility initialization and the baselines."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import SolverSettings, SystemConfig
from .conic import ConicProgram, ConicSolution, SolverError, solve_conic
from .metrics import FEAS_TOL, DegenerateFimError, MetricsReport, evaluate
from .surrogate import (allocation_from, build_feasibility_program, build_main_program,
                        clamp_allocation, evaluate_exprs, make_expansion_point)
from .sysmodel import ChannelSet, PowerAllocation, SensingGeometry

log = logging.getLogger(__name__)

SCHEMES = ("proposed", "equalcom", "equalcs")
# internal mode: SCA over xi with the communication fraction pinned at 1/2
_FIXED_SPLIT = "equalcs_xi"
_MODES = SCHEMES + (_FIXED_SPLIT,)


class InfeasibleScenarioError(RuntimeError):
    """No allocation meeting every threshold was found under the power cap."""

    def __init__(self, failing: list, residuals: dict, iterations: int):
        names = ", ".join(failing) if failing else "unknown"
        super().__init__(f"scenario infeasible after {iterations} initialization steps; "
                         f"failing threshold(s): {names}")
        self.failing = failing
        self.residuals = residuals
        self.iterations = iterations


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    tau: float
    residual: float
    solve_ms: float


@dataclass
class SolverState:
    iteration: int
    omega_point: PowerAllocation
    dinkelbach_ratio: float
    objective_history: list = field(default_factory=list)
    status: str = "initializing"


@dataclass
class SolveResult:
    scheme: str
    allocation: PowerAllocation
    report: MetricsReport
    iterations: int
    status: str
    trace: list
    init_iterations: int = 0
    stationarity: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def objective(self) -> float:
        return self.report.objective

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "tau", "residual", "solve_ms"])
            for r in self.trace:
                w.writerow([r.iteration, repr(r.objective), repr(r.tau), repr(r.residual),
                            f"{r.solve_ms:.3f}"])


# ---------------------------------------------------------------- solver access


def solve_step(prog: ConicProgram, settings: SolverSettings) -> ConicSolution:
    """Solve at tight accuracy, retrying once at the relaxed accuracy."""
    sol = solve_conic(prog, settings.accuracy)
    if sol.ok or sol.infeasible:
        return sol
    log.info("conic solve returned %s, retrying at relaxed accuracy", sol.status)
    sol2 = solve_conic(prog, settings.relaxed_accuracy)
    if sol2.ok or sol2.infeasible:
        return sol2
    raise SolverError(sol2.status, sol2.iterations, "(after relaxed retry)")


def _mode_flags(mode: str) -> dict:
    if mode not in _MODES:
        raise ValueError(f"unknown scheme {mode!r}; expected one of {SCHEMES}")
    return {"equal_comm": mode == "equalcom",
            "fixed_split": 0.5 if mode == _FIXED_SPLIT else None}


def _next_point(sol: ConicSolution, shape, settings: SolverSettings, mode: str) -> PowerAllocation:
    a = allocation_from(sol.x, shape)
    gamma = np.clip(a.gamma, 0.0, 1.0)
    if mode == "equalcom":
        # exact ties; the solver meets them only to its accuracy
        gamma = np.repeat(gamma.mean(axis=0, keepdims=True), shape[0], axis=0)
    elif mode == _FIXED_SPLIT:
        gamma = np.full(shape, 0.5)
    # projection only: the floor applies to expansion points, not to iterates,
    # since moving a tiny eta changes sqrt(eta) terms by far more than eta
    return PowerAllocation(np.maximum(a.xi, 0.0), gamma, 1.0 - gamma)


def _accept(cand: PowerAllocation, cur: PowerAllocation, prev: float, ch, geo, cfg,
            settings: SolverSettings):
    """Largest step ``cur + f*(cand - cur)``, ``f = 1, 1/2, ...``, that is feasible
    and does not lower the objective beyond the slack.

    The subproblem solution is feasible and ascending only up to the conic
    solver's accuracy; shortening the step absorbs that error.
    """
    floor = prev - settings.ascent_slack * max(1.0, abs(prev))
    frac = 1.0
    for _ in range(settings.max_backtrack + 1):
        trial = cand if frac == 1.0 else _mix(cur, cand, frac)
        new = _safe_eval(trial, ch, geo, cfg)
        if new is not None and new.max_residual <= FEAS_TOL and new.objective >= floor:
            return trial, new, frac
        frac *= 0.5
    return cur, None, 0.0


def _mix(a: PowerAllocation, b: PowerAllocation, f: float) -> PowerAllocation:
    gamma = (1.0 - f) * a.gamma + f * b.gamma
    return PowerAllocation((1.0 - f) * a.xi + f * b.xi, gamma, 1.0 - gamma)


def _safe_eval(alloc, ch, geo, cfg) -> Optional[MetricsReport]:
    try:
        return evaluate(alloc, ch, geo, cfg)
    except DegenerateFimError:
        return None


# ---------------------------------------------------------------- initialization


def _start_point(cfg: SystemConfig, ch: ChannelSet, rng: np.random.Generator,
                 settings: SolverSettings, mode: str) -> PowerAllocation:
    K, Q = cfg.k_users, cfg.q_subcarriers
    base = cfg.p_max / (K * Q)
    xi = base * (1.0 + settings.init_jitter * rng.uniform(-1.0, 1.0, size=(K, Q)))
    gamma = np.full((K, Q), 0.5)
    alloc = PowerAllocation(xi, gamma, 1.0 - gamma)
    from .sysmodel import transmit_power

    return alloc.scaled(settings.init_power_fraction * cfg.p_max / transmit_power(alloc, ch))


def strict_feasible(rep: Optional[MetricsReport]) -> bool:
    return rep is not None and rep.max_residual <= 0.0


def initialize(cfg: SystemConfig, ch: ChannelSet, geo: SensingGeometry,
               rng: Optional[np.random.Generator] = None,
               settings: Optional[SolverSettings] = None, mode: str = "proposed",
               start: Optional[PowerAllocation] = None) -> tuple[PowerAllocation, int]:
    """Feasible starting allocation and the number of feasibility steps used."""
    settings = settings or SolverSettings()
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    flags = _mode_flags(mode)
    alloc = clamp_allocation(start if start is not None else _start_point(cfg, ch, rng, settings, mode),
                             settings.clamp_floor)
    rep = _safe_eval(alloc, ch, geo, cfg)
    if strict_feasible(rep):
        return alloc, 0

    best_t, stall = -np.inf, 0
    resid: dict = {}
    for it in range(1, settings.init_max_iter + 1):
        pt = make_expansion_point(alloc, ch, geo, cfg, 0.0, settings.clamp_floor)
        prog = build_feasibility_program(pt, ch, geo, cfg, **flags)
        sol = solve_step(prog, settings)
        if not sol.ok:
            break
        alloc = _next_point(sol, pt.shape, settings, mode)
        rep = _safe_eval(alloc, ch, geo, cfg)
        if strict_feasible(rep):
            return alloc, it
        resid = evaluate_exprs(prog, sol.x)
        t = float(sol.objective)
        if t > best_t + 1e-7 * max(1.0, abs(best_t)):
            best_t, stall = t, 0
        else:
            stall += 1
            if stall >= 10:
                break
    failing = _failing_thresholds(rep, cfg)
    raise InfeasibleScenarioError(failing, resid, it)


def _failing_thresholds(rep: Optional[MetricsReport], cfg: SystemConfig) -> list:
    if rep is None:
        return ["crb (degenerate FIM)"]
    out = []
    if not rep.se_ok:
        out.append(f"se_threshold={cfg.se_threshold:g} bps/Hz")
    if not rep.crb_theta_ok:
        out.append(f"crb0_theta={cfg.crb0_theta:g}")
    if not rep.crb_phi_ok:
        out.append(f"crb0_phi={cfg.crb0_phi:g}")
    if rep.max_residual > 0 and not out:
        out.append("marginal threshold")
    return out


# ---------------------------------------------------------------- Algorithm


def run(cfg: SystemConfig, ch: ChannelSet, geo: SensingGeometry,
        settings: Optional[SolverSettings] = None, rng: Optional[np.random.Generator] = None,
        mode: str = "proposed", start: Optional[PowerAllocation] = None) -> SolveResult:
    """Dinkelbach iterations over convex inner approximations.

    Raises :class:`InfeasibleScenarioError` when initialization fails.
    """
    settings = settings or SolverSettings()
    if mode == "equalcs":
        return run_equalcs(cfg, ch, geo, settings, rng)
    flags = _mode_flags(mode)
    alloc, n_init = initialize(cfg, ch, geo, rng, settings, mode, start)
    rep = evaluate(alloc, ch, geo, cfg)
    state = SolverState(0, alloc, rep.objective, [rep.objective], "running")
    trace = [TraceRow(0, rep.objective, rep.objective, rep.max_residual, 0.0)]
    notes: list = []
    tau_used = state.dinkelbach_ratio

    for it in range(1, settings.max_iter + 1):
        tau = state.dinkelbach_ratio
        pt = make_expansion_point(state.omega_point, ch, geo, cfg, tau, settings.clamp_floor)
        prog = build_main_program(pt, ch, geo, cfg, **flags)
        t0 = time.perf_counter()
        try:
            sol = solve_step(prog, settings)
        except SolverError as exc:
            notes.append(f"iteration {it}: {exc}")
            state.status = "stopped"
            break
        ms = 1e3 * (time.perf_counter() - t0)
        if not sol.ok:
            notes.append(f"iteration {it}: subproblem {sol.status}")
            state.status = "stopped"
            break
        cand = _next_point(sol, pt.shape, settings, mode)
        prev = rep.objective
        cand, new, frac = _accept(cand, state.omega_point, prev, ch, geo, cfg, settings)
        if new is None:
            notes.append(f"iteration {it}: no feasible ascent along the step, kept previous iterate")
            state.status = "stopped"
            break
        if frac < 1.0:
            notes.append(f"iteration {it}: step shortened to {frac:g}")
        if new.objective < prev:
            # numerical noise inside the slack; keep the better point
            state.status = "converged"
            tau_used = tau
            break
        state.omega_point, rep = cand, new
        state.iteration = it
        state.objective_history.append(new.objective)
        trace.append(TraceRow(it, new.objective, tau, new.max_residual, ms))
        tau_used = tau
        state.dinkelbach_ratio = new.objective
        if abs(new.objective - prev) <= settings.tol * max(abs(prev), 1e-12):
            state.status = "converged"
            break
    else:
        state.status = "iteration_limit"

    stationarity = abs(rep.numerator - tau_used * rep.p_tot) / rep.p_tot
    return SolveResult(mode, state.omega_point, rep, state.iteration, state.status, trace,
                       n_init, stationarity, notes)


def run_equalcom(cfg, ch, geo, settings=None, rng=None, start=None) -> SolveResult:
    """Same pipeline with the communication fractions tied across users."""
    return run(cfg, ch, geo, settings, rng, mode="equalcom", start=start)


def equalcs_allocation(cfg: SystemConfig) -> PowerAllocation:
    K, Q = cfg.k_users, cfg.q_subcarriers
    # sum_k of the ZF weights is K, so this spends exactly p_max
    return PowerAllocation.uniform(K, Q, cfg.p_max / (K * Q), 0.5)


def run_equalcs(cfg, ch, geo, settings=None, rng=None, start=None) -> SolveResult:
    """Fixed half/half split with the budget spread uniformly; evaluated, not optimized.

    With ``settings.equalcs_optimize_xi`` the split stays fixed and ``xi`` is
    optimized by the same SCA pipeline instead.
    """
    settings = settings or SolverSettings()
    alloc = equalcs_allocation(cfg)
    if settings.equalcs_optimize_xi:
        res = run(cfg, ch, geo, settings, rng, mode=_FIXED_SPLIT, start=alloc)
        res.scheme = "equalcs"
        return res
    rep = evaluate(alloc, ch, geo, cfg)
    status = "converged" if rep.feasible else "infeasible"
    trace = [TraceRow(0, rep.objective, rep.objective, rep.max_residual, 0.0)]
    return SolveResult("equalcs", alloc, rep, 0, status, trace, 0, 0.0, [])


def run_scheme(scheme: str, cfg, ch, geo, settings=None, rng=None, start=None) -> SolveResult:
    """Dispatch by scheme name; infeasible scenarios come back as a result, not an error."""
    try:
        if scheme == "equalcs":
            return run_equalcs(cfg, ch, geo, settings, rng)
        return run(cfg, ch, geo, settings, rng, mode=scheme, start=start)
    except InfeasibleScenarioError as exc:
        alloc = start if start is not None else equalcs_allocation(cfg)
        rep = _safe_eval(alloc, ch, geo, cfg)
        if rep is None:
            raise
        return SolveResult(scheme, alloc, rep, 0, "infeasible", [], exc.iterations, float("nan"),
                           [str(exc)])


def feasible_result(res: Optional[SolveResult]) -> bool:
    return res is not None and res.status != "infeasible" and res.report.feasible


def solve_chain(cfg: SystemConfig, ch: ChannelSet, geo: SensingGeometry,
                schemes=SCHEMES, settings: Optional[SolverSettings] = None,
                seed=0) -> dict:
    """All requested schemes on one drop, each warm-started from the next simpler one.

    EqualCom starts from the EqualC&S point when that point is feasible, and
    the proposed scheme keeps the better of a cold start and a start from the
    EqualCom solution. Any point feasible for a tied variant is feasible for
    the untied one, so with monotone iterations the ordering
    proposed >= EqualCom >= EqualC&S holds whenever the simpler scheme is feasible.
    """
    settings = settings or SolverSettings()
    for s in schemes:
        if s not in SCHEMES:
            raise ValueError(f"unknown scheme {s!r}; expected one of {SCHEMES}")
    need = set(schemes)
    if "proposed" in need:
        need.add("equalcom")
    if "equalcom" in need:
        need.add("equalcs")
    out: dict = {}

    base = [int(v) for v in np.atleast_1d(seed)]

    def rng(tag):
        return np.random.default_rng(base + [tag])

    if "equalcs" in need:
        out["equalcs"] = run_scheme("equalcs", cfg, ch, geo, settings, rng(0))
    if "equalcom" in need:
        ecs = out.get("equalcs")
        start = ecs.allocation if feasible_result(ecs) else None
        out["equalcom"] = _best(
            run_scheme("equalcom", cfg, ch, geo, settings, rng(1)),
            run_scheme("equalcom", cfg, ch, geo, settings, rng(1), start=start) if start is not None else None)
    if "proposed" in need:
        ecm = out.get("equalcom")
        start = ecm.allocation if feasible_result(ecm) else None
        out["proposed"] = _best(
            run_scheme("proposed", cfg, ch, geo, settings, rng(2)),
            run_scheme("proposed", cfg, ch, geo, settings, rng(2), start=start) if start is not None else None)
    return {s: out[s] for s in schemes}


def _best(a: SolveResult, b: Optional[SolveResult]) -> SolveResult:
    if b is None:
        return a
    if feasible_result(a) != feasible_result(b):
        return a if feasible_result(a) else b
    return b if b.report.objective > a.report.objective else a
