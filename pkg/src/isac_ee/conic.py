"""Small standard-form conic programs and a Clarabel backend.

A program is a linear objective plus three constraint families over named
scalar variables: equalities ``e(x) = 0``, inequalities ``e(x) >= 0`` and
second-order cones ``||[e_1..e_m](x)|| <= e_0(x)``, each ``e`` affine.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class Affine:
    """Sparse affine expression ``const + sum(coef * x[idx])``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Optional[dict] = None, const: float = 0.0):
        self.terms = terms if terms is not None else {}
        self.const = float(const)

    @staticmethod
    def var(idx: int, coef: float = 1.0) -> "Affine":
        return Affine({idx: float(coef)})

    def copy(self) -> "Affine":
        return Affine(dict(self.terms), self.const)

    def add_term(self, idx: int, coef: float) -> "Affine":
        """In-place accumulation, returns self."""
        if coef != 0.0:
            self.terms[idx] = self.terms.get(idx, 0.0) + float(coef)
        return self

    def iadd(self, other: "Affine", scale: float = 1.0) -> "Affine":
        for i, c in other.terms.items():
            self.terms[i] = self.terms.get(i, 0.0) + scale * c
        self.const += scale * other.const
        return self

    def __add__(self, other):
        out = self.copy()
        if isinstance(other, Affine):
            return out.iadd(other)
        out.const += float(other)
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if isinstance(other, Affine):
            return self.copy().iadd(other, -1.0)
        return self + (-float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        s = float(s)
        return Affine({i: s * c for i, c in self.terms.items()}, s * self.const)

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(c * x[i] for i, c in self.terms.items())

    def __repr__(self):
        return f"Affine({len(self.terms)} terms, const={self.const:g})"


def to_affine(e) -> Affine:
    return e if isinstance(e, Affine) else Affine(const=float(e))


@dataclass(frozen=True)
class Variable:
    name: str
    group: str
    scale: float


@dataclass(frozen=True)
class ConicProgram:
    """Immutable conic program; the objective is maximized.

    ``lift`` reproduces the tight auxiliary values for a given assignment of
    the leading (decision) variables, see :meth:`ProgramBuilder.add_aux`.
    """

    variables: tuple
    objective: Affine
    equalities: tuple
    inequalities: tuple
    cones: tuple
    lift_rules: tuple = field(repr=False, default=())
    n_decision: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    def index(self, name: str) -> int:
        return self.meta["index"][name]

    def count_variables(self, groups) -> int:
        return sum(1 for v in self.variables if v.group in groups)

    def constraint_counts(self) -> Counter:
        c = Counter()
        for tag, _ in self.equalities:
            c[tag] += 1
        for tag, _ in self.inequalities:
            c[tag] += 1
        for tag, _ in self.cones:
            c[tag] += 1
        return c

    def lift(self, decision: np.ndarray) -> np.ndarray:
        """Full variable vector with every auxiliary at its tight value."""
        x = np.zeros(self.n_variables)
        x[: self.n_decision] = decision
        for idx, rule in self.lift_rules:
            x[idx] = rule(x)
        return x

    def objective_value(self, x: np.ndarray) -> float:
        return self.objective.value(x)

    def residuals(self, x: np.ndarray) -> dict:
        """Worst violation per constraint tag (``<= 0`` means satisfied)."""
        worst: dict = {}

        def put(tag, v):
            worst[tag] = max(worst.get(tag, -np.inf), v)

        for tag, e in self.equalities:
            put(tag, abs(e.value(x)))
        for tag, e in self.inequalities:
            put(tag, -e.value(x))
        for tag, es in self.cones:
            vals = [e.value(x) for e in es]
            with np.errstate(invalid="ignore"):
                r = float(np.linalg.norm(vals[1:])) - vals[0]
            # inf - inf: the point has no finite lift, count it as violated
            put(tag, np.inf if np.isnan(r) else r)
        return worst

    def max_violation(self, x: np.ndarray) -> float:
        r = self.residuals(x)
        return max(r.values()) if r else 0.0

    def dump(self, x: Optional[np.ndarray] = None) -> str:
        """Human-readable listing for debugging."""
        names = [v.name for v in self.variables]

        def fmt(e: Affine) -> str:
            parts = [f"{c:+.6g}*{names[i]}" for i, c in sorted(e.terms.items())]
            if e.const or not parts:
                parts.append(f"{e.const:+.6g}")
            return " ".join(parts)

        lines = [f"# conic program: {self.n_variables} variables, "
                 f"{len(self.equalities)} eq, {len(self.inequalities)} ineq, {len(self.cones)} cones"]
        lines.append("variables:")
        for i, v in enumerate(self.variables):
            val = f" = {x[i]:.9g}" if x is not None else ""
            lines.append(f"  {v.name} [{v.group}] scale={v.scale:.3g}{val}")
        lines.append(f"maximize: {fmt(self.objective)}")
        for tag, e in self.equalities:
            lines.append(f"[{tag}] {fmt(e)} == 0")
        for tag, e in self.inequalities:
            lines.append(f"[{tag}] {fmt(e)} >= 0")
        for tag, es in self.cones:
            body = "; ".join(fmt(e) for e in es[1:])
            lines.append(f"[{tag}] || {body} || <= {fmt(es[0])}")
        return "\n".join(lines)


class AssemblyError(ValueError):
    def __init__(self, tag: str, message: str):
        super().__init__(f"[{tag}] {message}")
        self.tag = tag


class ProgramBuilder:
    """Accumulates variables and constraints, then freezes a :class:`ConicProgram`.

    Variables carry a scale: the solver works with ``x / scale`` so that
    quantities of very different magnitude stay well conditioned.
    """

    def __init__(self):
        self._vars: list[Variable] = []
        self._index: dict[str, int] = {}
        self._rules: list = []
        self._n_decision: Optional[int] = None
        self.objective = Affine()
        self._eq: list = []
        self._ineq: list = []
        self._cones: list = []

    def add_var(self, name: str, group: str, scale: float = 1.0) -> Affine:
        if name in self._index:
            raise AssemblyError("catalog", f"duplicate variable {name!r}")
        if not (np.isfinite(scale) and scale > 0):
            raise AssemblyError("catalog", f"bad scale {scale!r} for {name!r}")
        self._index[name] = len(self._vars)
        self._vars.append(Variable(name, group, float(scale)))
        return Affine.var(self._index[name])

    def end_decision(self):
        """Mark all variables added so far as decision variables."""
        self._n_decision = len(self._vars)

    def add_aux(self, name: str, group: str, tight: Callable[[np.ndarray], float],
                scale: float = 1.0) -> Affine:
        """Auxiliary variable whose tight value is ``tight(x)`` of earlier variables."""
        if self._n_decision is None:
            raise AssemblyError("catalog", "end_decision() must precede auxiliaries")
        v = self.add_var(name, group, scale)
        self._rules.append((self._index[name], tight))
        return v

    def eq(self, tag: str, expr) -> None:
        self._eq.append((tag, to_affine(expr)))

    def geq(self, tag: str, lhs, rhs=0.0) -> None:
        self._ineq.append((tag, to_affine(lhs) - rhs))

    def leq(self, tag: str, lhs, rhs=0.0) -> None:
        self._ineq.append((tag, to_affine(rhs) - lhs))

    def soc(self, tag: str, t, *u) -> None:
        """``||u|| <= t``."""
        self._cones.append((tag, (to_affine(t),) + tuple(to_affine(e) for e in u)))

    def rsoc(self, tag: str, x, y, z) -> None:
        """``x^2 <= y*z`` with ``y, z >= 0``, as ``||[2x; y - z]|| <= y + z``."""
        x, y, z = to_affine(x), to_affine(y), to_affine(z)
        self.soc(tag, y + z, 2.0 * x, y - z)

    def build(self, **meta) -> ConicProgram:
        n_dec = self._n_decision if self._n_decision is not None else len(self._vars)
        meta = dict(meta)
        meta["index"] = dict(self._index)
        return ConicProgram(
            variables=tuple(self._vars), objective=self.objective.copy(),
            equalities=tuple(self._eq), inequalities=tuple(self._ineq),
            cones=tuple(self._cones), lift_rules=tuple(self._rules),
            n_decision=n_dec, meta=meta,
        )


# ---------------------------------------------------------------- solving


class SolverError(RuntimeError):
    def __init__(self, status: str, iterations: int, message: str = ""):
        super().__init__(f"conic solver failed: {status} after {iterations} iterations {message}".strip())
        self.status = status
        self.iterations = iterations


@dataclass(frozen=True)
class ConicSolution:
    status: str
    x: Optional[np.ndarray]
    objective: float
    iterations: int
    solve_time: float

    @property
    def ok(self) -> bool:
        return self.status in ("Solved", "AlmostSolved")

    @property
    def infeasible(self) -> bool:
        return self.status in ("PrimalInfeasible", "AlmostPrimalInfeasible")


def _rows(exprs, scales, row0, rows, cols, vals, b):
    for r, e in enumerate(exprs):
        for i, c in e.terms.items():
            rows.append(row0 + r)
            cols.append(i)
            vals.append(-c * scales[i])
        b.append(e.const)


def solve_conic(prog: ConicProgram, accuracy: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve with Clarabel. Returns a solution object; never raises on infeasibility."""
    import clarabel

    n = prog.n_variables
    scales = np.array([v.scale for v in prog.variables])
    q = np.zeros(n)
    for i, c in prog.objective.terms.items():
        q[i] = -c * scales[i]

    rows: list = []
    cols: list = []
    vals: list = []
    b: list = []
    cones = []
    eqs = [e for _, e in prog.equalities]
    ineqs = [e for _, e in prog.inequalities]
    _rows(eqs, scales, 0, rows, cols, vals, b)
    if eqs:
        cones.append(clarabel.ZeroConeT(len(eqs)))
    _rows(ineqs, scales, len(b), rows, cols, vals, b)
    if ineqs:
        cones.append(clarabel.NonnegativeConeT(len(ineqs)))
    for _, es in prog.cones:
        _rows(es, scales, len(b), rows, cols, vals, b)
        cones.append(clarabel.SecondOrderConeT(len(es)))
    A = sp.csc_matrix((vals, (rows, cols)), shape=(len(b), n))
    P = sp.csc_matrix((n, n))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = accuracy
    settings.tol_gap_rel = accuracy
    settings.tol_feas = accuracy
    settings.max_iter = max_iter
    settings.max_threads = 1

    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, q, A, np.array(b), cones, settings)
    sol = solver.solve()
    elapsed = time.perf_counter() - t0
    status = str(sol.status).split(".")[-1]
    x = np.asarray(sol.x) * scales if sol.x is not None and len(sol.x) == n else None
    obj = prog.objective.value(x) if x is not None else float("nan")
    return ConicSolution(status=status, x=x, objective=obj, iterations=int(sol.iterations),
                         solve_time=elapsed)
