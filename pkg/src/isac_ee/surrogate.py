"""Convex inner approximations of the EE subproblem and their conic encoding.

Every nonconvex product in the rate, FIM and power expressions is replaced by
a tangent bound from :mod:`isac_ee.bounds`. The bounds are separable in the
monomials ``x``, ``x^2`` and ``sqrt(x)``, so each decision entry gets one
square epigraph ``s >= x^2`` (all bounds penalize ``s``) and, for the
fractions, one root hypograph ``r <= sqrt(x)`` (all bounds reward ``r``).
That keeps every surrogate affine in the lifted variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import bounds
from .config import SystemConfig
from .conic import Affine, AssemblyError, ConicProgram, ProgramBuilder
from .metrics import fim_weights, rate_terms
from .sysmodel import ChannelSet, PowerAllocation, SensingGeometry, channel_gains

LN2 = np.log(2.0)
CLAMP_FLOOR = 1e-8

# groups counted in the core catalog (decision variables and the catalog auxiliaries)
CORE_GROUPS = ("xi", "gamma", "eta", "theta_a", "theta_i", "theta_b", "theta_c")
# tags of the constraints counted in the core accounting; guards and
# epigraph helpers are bookkeeping on top of these
CORE_TAGS = (
    "split", "nonneg_xi", "nonneg_gamma", "nonneg_eta",
    "rate_ratio_cone", "rate_num_upper", "rate_den_lower", "se_threshold",
    "theta_cross_cone", "theta_cross_num", "theta_cross_den",
    "alpha_elim_cone", "alpha_elim_num", "alpha_elim_den",
    "phi_cross_cone", "phi_cross_num", "phi_cross_den",
    "crb_theta_ceiling", "crb_phi_ceiling", "power_cap",
)


def clamp_allocation(alloc: PowerAllocation, floor: float = CLAMP_FLOOR) -> PowerAllocation:
    """Push every entry at least ``floor`` away from the boundary."""
    gamma = np.clip(alloc.gamma, floor, 1.0 - floor)
    return PowerAllocation(np.maximum(alloc.xi, floor), gamma, 1.0 - gamma)


@dataclass(frozen=True)
class ExpansionPoint:
    """Reference point of one SCA step with the cached rate-bound coefficients."""

    alloc: PowerAllocation
    num: np.ndarray
    den: np.ndarray
    lb: tuple
    ub: tuple
    tau: float

    @property
    def shape(self):
        return self.alloc.shape


def make_expansion_point(alloc: PowerAllocation, ch: ChannelSet, geo: SensingGeometry,
                         cfg: SystemConfig, tau: float = 0.0,
                         floor: float = CLAMP_FLOOR) -> ExpansionPoint:
    ref = clamp_allocation(alloc, floor)
    num, den = rate_terms(ref, ch, geo, cfg)
    if np.any(num <= 0) or np.any(den <= 0):
        raise AssemblyError("expansion", "rate numerator/denominator must be positive")
    return ExpansionPoint(ref, num, den, bounds.rate_lb_coeffs(num, den),
                          bounds.rate_ub_coeffs(num, den), float(tau))


def decision_vector(alloc: PowerAllocation) -> np.ndarray:
    return np.concatenate([alloc.xi.ravel(), alloc.gamma.ravel(), alloc.eta.ravel()])


def allocation_from(x: np.ndarray, shape) -> PowerAllocation:
    n = shape[0] * shape[1]
    return PowerAllocation(x[:n].reshape(shape), x[n:2 * n].reshape(shape),
                           x[2 * n:3 * n].reshape(shape))


class _Lifted:
    """Decision variables plus square/root auxiliaries, with tangent-bound helpers."""

    def __init__(self, b: ProgramBuilder, pt: ExpansionPoint, cfg: SystemConfig):
        self.b = b
        self.pt = pt
        K, Q = pt.shape
        self.K, self.Q = K, Q
        ref = pt.alloc
        xi_floor = 1e-3 * cfg.p_max / (K * Q)
        self.xi_scale = np.maximum(ref.xi, xi_floor)
        self.xi = [[b.add_var(f"xi[{k},{q}]", "xi", self.xi_scale[k, q], ref.xi[k, q])
                    for q in range(Q)] for k in range(K)]
        self.gam = [[b.add_var(f"gamma[{k},{q}]", "gamma", 1.0, ref.gamma[k, q]) for q in range(Q)]
                    for k in range(K)]
        self.eta = [[b.add_var(f"eta[{k},{q}]", "eta", 1.0, ref.eta[k, q]) for q in range(Q)]
                    for k in range(K)]
        b.end_decision()

        def sq(v):
            i = _only(v)
            return lambda x: x[i] ** 2

        def rt(v):
            i = _only(v)
            return lambda x: np.sqrt(max(x[i], 0.0))

        self.s_xi, self.s_gam, self.s_eta, self.r_gam, self.r_eta = ([], [], [], [], [])
        for k in range(K):
            row = [[], [], [], [], []]
            for q in range(Q):
                x, g, e = self.xi[k][q], self.gam[k][q], self.eta[k][q]
                # every auxiliary is scaled by its reference size: the bounds put
                # coefficients of order 1/ref on them, so absolute solver error
                # on an unscaled tiny auxiliary would swamp the surrogate
                cx = float(self.xi_scale[k, q])
                cg = max(float(ref.gamma[k, q]), 1e-300)
                ce = max(float(ref.eta[k, q]), 1e-300)
                sx = b.add_aux(f"sq_xi[{k},{q}]", "lift", sq(x), cx * cx)
                sg = b.add_aux(f"sq_gamma[{k},{q}]", "lift", sq(g), cg * cg)
                se = b.add_aux(f"sq_eta[{k},{q}]", "lift", sq(e), ce * ce)
                rg = b.add_aux(f"rt_gamma[{k},{q}]", "lift", rt(g), np.sqrt(cg))
                re = b.add_aux(f"rt_eta[{k},{q}]", "lift", rt(e), np.sqrt(ce))
                # x^2 <= c * (s / c) keeps the cone entries at the size of x
                for v, s, c in ((x, sx, cx), (g, sg, cg), (e, se, ce)):
                    b.rsoc("square_epigraph", v, c, s * (1.0 / c))
                # r^2 <= (v / sqrt c) * sqrt c, likewise balanced
                for v, r, c in ((g, rg, cg), (e, re, ce)):
                    b.rsoc("root_hypograph", r, v * (1.0 / np.sqrt(c)), np.sqrt(c))
                for lst, v in zip(row, (sx, sg, se, rg, re)):
                    lst.append(v)
            for lst, dst in zip(row, (self.s_xi, self.s_gam, self.s_eta, self.r_gam, self.r_eta)):
                dst.append(lst)

    # w * xi*y, with y = gamma ("g") or eta ("e")
    def bilinear(self, k, q, which, w, lower, out: Affine):
        if w == 0.0:
            return out
        ref = self.pt.alloc
        x_ref = ref.xi[k, q]
        if which == "g":
            y, sy, y_ref = self.gam[k][q], self.s_gam[k][q], ref.gamma[k, q]
        else:
            y, sy, y_ref = self.eta[k][q], self.s_eta[k][q], ref.eta[k, q]
        use_lower = lower == (w > 0)
        if use_lower:
            c0, cx, cy, cxx, cyy = bounds.bilinear_lower_coeffs(x_ref, y_ref)
            out.const += w * c0
            out.iadd(self.xi[k][q], w * cx).iadd(y, w * cy)
            out.iadd(self.s_xi[k][q], w * cxx).iadd(sy, w * cyy)
        else:
            cxx, cyy = bounds.bilinear_upper_coeffs(x_ref, y_ref)
            out.iadd(self.s_xi[k][q], w * cxx).iadd(sy, w * cyy)
        return out

    # w * xi*sqrt(gamma*eta)
    def triple(self, k, q, w, lower, out: Affine):
        if w == 0.0:
            return out
        ref = self.pt.alloc
        refs = (ref.xi[k, q], ref.gamma[k, q], ref.eta[k, q])
        mono = {"t": self.xi[k][q], "sx": self.r_gam[k][q], "sy": self.r_eta[k][q],
                "x": self.gam[k][q], "y": self.eta[k][q], "tt": self.s_xi[k][q],
                "xx": self.s_gam[k][q], "yy": self.s_eta[k][q]}
        coeffs = bounds.triple_lower_coeffs(*refs) if lower == (w > 0) else bounds.triple_upper_coeffs(*refs)
        for key, c in coeffs.items():
            if key == "1":
                out.const += w * c
            else:
                out.iadd(mono[key], w * c)
        return out

    def weighted(self, weights, lower) -> Affine:
        """Bound on ``sum(w_g*xi*gamma + w_e*xi*eta)``."""
        wg, we = weights
        out = Affine()
        for k in range(self.K):
            for q in range(self.Q):
                self.bilinear(k, q, "g", float(wg[k, q]), lower, out)
                self.bilinear(k, q, "e", float(we[k, q]), lower, out)
        return out


def _only(v: Affine) -> int:
    (i,) = v.terms.keys()
    return i


def _value_rule(e: Affine):
    return lambda x: e.value(x)


def _max_rule(*es: Affine):
    return lambda x: max(e.value(x) for e in es)


def _ratio_rule(num, den):
    def rule(x):
        d = den(x)
        return num(x) ** 2 / d if d > 0 else np.inf
    return rule


def _var_value(v: Affine):
    i = _only(v)
    return lambda x: x[i]


class _Blocks:
    """Shared surrogate pieces of the main and the feasibility programs."""

    def __init__(self, pt, ch, geo, cfg, equal_comm=False, fixed_split=None):
        self.b = b = _Builder(pt)
        self.lf = lf = _Lifted(b, pt, cfg)
        self.cfg = cfg
        K, Q = pt.shape
        ref = pt.alloc

        for k in range(K):
            for q in range(Q):
                b.eq("split", lf.gam[k][q] + lf.eta[k][q] - 1.0)
                b.geq("nonneg_xi", lf.xi[k][q])
                b.geq("nonneg_gamma", lf.gam[k][q])
                b.geq("nonneg_eta", lf.eta[k][q])
        if equal_comm:
            for q in range(Q):
                for k in range(1, K):
                    b.eq("equal_comm_tie", lf.gam[k][q] - lf.gam[0][q])
        if fixed_split is not None:
            for k in range(K):
                for q in range(Q):
                    b.eq("fixed_split", lf.gam[k][q] - float(fixed_split))

        # ---- sensing: alpha elimination (real, imag), theta and phi Schur terms
        w = fim_weights(geo, ch, cfg)
        kb = w.kappa_bar
        den_lo = lf.weighted(w.den, lower=True)
        self.iz = []
        for part, wts in (("re", w.num_re), ("im", w.num_im)):
            up = lf.weighted(wts, lower=False)
            lo = lf.weighted(wts, lower=True)
            ix = b.add_aux(f"I_x[{part}]", "theta_i", _max_rule(up, -lo), "auto")
            iy = b.add_aux(f"I_y[{part}]", "theta_i", _value_rule(den_lo), "auto")
            iz = b.add_aux(f"I_z[{part}]", "theta_i", _ratio_rule(_var_value(ix), _var_value(iy)), "auto")
            b.leq("alpha_elim_num", up, ix)
            b.leq("alpha_elim_num_guard", -lo, ix)
            b.geq("alpha_elim_den", den_lo, iy)
            b.rsoc("alpha_elim_cone", ix, iy, iz)
            self.iz.append(iz)

        tt_lo = lf.weighted(w.tt, lower=True)
        pp_lo = lf.weighted(w.pp, lower=True)
        tp_up = lf.weighted(w.tp, lower=False)
        tp_lo = lf.weighted(w.tp, lower=True)
        reduced = pp_lo - kb * (self.iz[0] + self.iz[1])

        ax = b.add_aux("A_x", "theta_a", _max_rule(tp_up, -tp_lo), "auto")
        ay = b.add_aux("A_y", "theta_a", _value_rule(reduced), "auto")
        az = b.add_aux("A_z", "theta_a", _ratio_rule(_var_value(ax), _var_value(ay)), "auto")
        b.leq("theta_cross_num", tp_up, ax)
        b.leq("theta_cross_num_guard", -tp_lo, ax)
        b.geq("theta_cross_den", reduced, ay)
        b.rsoc("theta_cross_cone", ax, ay, az)

        bx = b.add_aux("B_x", "theta_b", _max_rule(tp_up, -tp_lo), "auto")
        by = b.add_aux("B_y", "theta_b", _value_rule(tt_lo), "auto")
        bz = b.add_aux("B_z", "theta_b", _ratio_rule(_var_value(bx), _var_value(by)), "auto")
        b.leq("phi_cross_num", tp_up, bx)
        b.leq("phi_cross_num_guard", -tp_lo, bx)
        b.geq("phi_cross_den", tt_lo, by)
        b.rsoc("phi_cross_cone", bx, by, bz)

        self.crb_theta_inv = tt_lo - az
        self.crb_phi_inv = reduced - bz

        # ---- communication lower bound
        g2, re_ha = channel_gains(ch, geo)
        n_t = geo.n_t
        alpha = ch.alpha_zf
        A, B, C = pt.lb
        self.alpha, self.g2, self.re_ha, self.n_t = alpha, g2, re_ha, n_t
        self.se_lower = []
        for k in range(K):
            acc = Affine()
            for q in range(Q):
                num = self.num_bound(k, q, lower=True)
                den = self.den_bound(k, q, lower=False)
                bb = float(B[k, q])
                u = b.add_aux(f"inv_num[{k},{q}]", "lift", _inv_rule(bb, num), "auto")
                b.rsoc("inverse_epigraph", np.sqrt(bb), num, u)
                acc.const += float(A[k, q])
                acc.iadd(u, -1.0).iadd(den, -float(C[k, q]))
            self.se_lower.append(acc * (1.0 / LN2))

        self.p_tx_upper = Affine()
        d = ch.bar_d_beta
        for k in range(K):
            for q in range(Q):
                lf.bilinear(k, q, "g", float(d[k]), False, self.p_tx_upper)
                lf.bilinear(k, q, "e", 1.0, False, self.p_tx_upper)

    def num_bound(self, k, q, lower):
        lf = self.lf
        out = Affine()
        lf.bilinear(k, q, "g", float(self.alpha[q] ** 2), lower, out)
        lf.bilinear(k, q, "e", float(self.g2[k, q] / self.n_t), lower, out)
        lf.triple(k, q, float(2.0 * self.alpha[q] / np.sqrt(self.n_t) * self.re_ha[k, q]), lower, out)
        return out

    def den_bound(self, k, q, lower):
        lf = self.lf
        out = Affine(const=self.cfg.sigma_c_sq)
        for j in range(lf.K):
            if j != k:
                lf.bilinear(j, q, "e", float(self.g2[k, q] / self.n_t), lower, out)
        return out

    def se_upper(self):
        """Upper surrogate of each user's SE, adding the ratio auxiliaries."""
        b, lf, pt = self.b, self.lf, self.b.pt
        Ah, Bh, Ch = pt.ub
        out = []
        for k in range(lf.K):
            acc = Affine()
            for q in range(lf.Q):
                num_hi = self.num_bound(k, q, lower=False)
                den_lo = self.den_bound(k, q, lower=True)
                cx = b.add_aux(f"C_x[{k},{q}]", "theta_c", _value_rule(num_hi), "auto")
                cy = b.add_aux(f"C_y[{k},{q}]", "theta_c", _value_rule(den_lo), "auto")
                cz = b.add_aux(f"C_z[{k},{q}]", "theta_c", _ratio_rule(_var_value(cx), _var_value(cy)), "auto")
                winv = b.add_aux(f"inv_den[{k},{q}]", "lift", _inv_rule(1.0, den_lo), "auto")
                b.leq("rate_num_upper", num_hi, cx)
                b.geq("rate_den_lower", den_lo, cy)
                b.rsoc("rate_ratio_cone", cx, cy, cz)
                b.rsoc("inverse_epigraph", 1.0, den_lo, winv)
                ah, bh, chat = float(Ah[k, q]), float(Bh[k, q]), float(Ch[k, q])
                acc.const += ah
                acc.iadd(cz, 0.5 * bh * chat).iadd(winv, 0.5 * bh / chat)
            out.append(acc * (1.0 / LN2))
        return out


def _inv_rule(c, e: Affine):
    def rule(x):
        v = e.value(x)
        return c / v if v > 0 else np.inf
    return rule


class _Builder(ProgramBuilder):
    """Builder that tracks the lifted reference point and derives variable scales."""

    def __init__(self, pt: ExpansionPoint):
        super().__init__()
        self.pt = pt
        self.ref: list = []

    def add_var(self, name, group, scale=1.0, ref_value=0.0):
        self.ref.append(float(ref_value))
        return super().add_var(name, group, scale)

    def add_aux(self, name, group, tight, scale="auto"):
        val = float(tight(np.array(self.ref + [0.0])))
        if scale == "auto":
            scale = abs(val) if np.isfinite(val) and abs(val) > 1e-12 else 1.0
        idx = len(self.ref)
        self.ref.append(val)
        if self._n_decision is None:
            raise AssemblyError("catalog", "end_decision() must precede auxiliaries")
        v = ProgramBuilder.add_var(self, name, group, scale)
        self._rules.append((idx, tight))
        return v


def _finish(blocks: _Blocks, kind: str, **exprs) -> ConicProgram:
    b = blocks.b
    return b.build(kind=kind, shape=blocks.lf.pt.shape, x_ref=np.array(b.ref),
                   exprs=exprs, tau=b.pt.tau)


def build_main_program(point: ExpansionPoint, ch: ChannelSet, geo: SensingGeometry,
                       cfg: SystemConfig, equal_comm: bool = False,
                       fixed_split: Optional[float] = None) -> ConicProgram:
    """Convex subproblem of one Dinkelbach/SCA step around ``point``."""
    bl = _Blocks(point, ch, geo, cfg, equal_comm, fixed_split)
    b = bl.b
    se_hi = bl.se_upper()
    se_lo_sum = Affine()
    for e in bl.se_lower:
        se_lo_sum.iadd(e)
    se_hi_sum = Affine()
    for e in se_hi:
        se_hi_sum.iadd(e)
    power = bl.p_tx_upper * (1.0 / cfg.rho_amp) + cfg.p_0 + cfg.epsilon_dyn * se_hi_sum
    numerator = se_lo_sum + cfg.omega * (bl.crb_theta_inv + bl.crb_phi_inv)
    b.objective = numerator - point.tau * power

    if cfg.se_threshold > 0:
        for e in bl.se_lower:
            b.geq("se_threshold", e, cfg.se_threshold)
    if np.isfinite(cfg.crb0_theta):
        b.geq("crb_theta_ceiling", bl.crb_theta_inv, 1.0 / cfg.crb0_theta)
    if np.isfinite(cfg.crb0_phi):
        b.geq("crb_phi_ceiling", bl.crb_phi_inv, 1.0 / cfg.crb0_phi)
    b.leq("power_cap", bl.p_tx_upper, cfg.p_max)
    return _finish(bl, "main", se_lower=bl.se_lower, se_upper=se_hi,
                   crb_theta_inv=bl.crb_theta_inv, crb_phi_inv=bl.crb_phi_inv,
                   p_tx_upper=bl.p_tx_upper, power=power, numerator=numerator)


def feasibility_terms(exprs: dict, cfg: SystemConfig) -> list:
    """Normalized residuals (``>= 0`` when a threshold is met) of the init program."""
    terms = []
    if cfg.se_threshold > 0:
        terms += [(f"se[{k}]", e * (1.0 / cfg.se_threshold) - 1.0) for k, e in enumerate(exprs["se_lower"])]
    if np.isfinite(cfg.crb0_theta):
        terms.append(("crb_theta", exprs["crb_theta_inv"] * cfg.crb0_theta - 1.0))
    if np.isfinite(cfg.crb0_phi):
        terms.append(("crb_phi", exprs["crb_phi_inv"] * cfg.crb0_phi - 1.0))
    return terms


def build_feasibility_program(point: ExpansionPoint, ch: ChannelSet, geo: SensingGeometry,
                              cfg: SystemConfig, equal_comm: bool = False,
                              fixed_split: Optional[float] = None) -> ConicProgram:
    """Max-min of the normalized threshold residuals under the power cap."""
    bl = _Blocks(point, ch, geo, cfg, equal_comm, fixed_split)
    b = bl.b
    b.leq("power_cap", bl.p_tx_upper, cfg.p_max)
    exprs = dict(se_lower=bl.se_lower, crb_theta_inv=bl.crb_theta_inv,
                 crb_phi_inv=bl.crb_phi_inv, p_tx_upper=bl.p_tx_upper)
    terms = feasibility_terms(exprs, cfg)
    if not terms:
        raise AssemblyError("feasibility", "no active thresholds")
    t = b.add_aux("t", "epigraph", lambda x, ts=terms: min(e.value(x) for _, e in ts), 1.0)
    for _, e in terms:
        b.leq("min_residual", t, e)
    b.objective = t * 1.0
    return _finish(bl, "feasibility", residual=t, **exprs)


def evaluate_exprs(prog: ConicProgram, x: np.ndarray) -> dict:
    """Numeric values of the named surrogate expressions at ``x``."""
    out = {}
    for name, e in prog.meta["exprs"].items():
        out[name] = np.array([v.value(x) for v in e]) if isinstance(e, list) else e.value(x)
    return out


def surrogate_values(alloc: PowerAllocation, point: ExpansionPoint, ch, geo, cfg,
                     equal_comm: bool = False) -> dict:
    """Surrogates of the step around ``point`` evaluated at ``alloc`` (tight lift)."""
    prog = build_main_program(point, ch, geo, cfg, equal_comm)
    x = prog.lift(decision_vector(alloc))
    vals = evaluate_exprs(prog, x)
    vals["objective"] = prog.objective_value(x)
    vals["max_violation"] = prog.max_violation(x)
    return vals


def core_counts(prog: ConicProgram) -> tuple[int, int]:
    """(variables, constraints) in the core accounting of the subproblem."""
    n = prog.count_variables(CORE_GROUPS)
    counts = prog.constraint_counts()
    m = sum(counts[t] for t in CORE_TAGS)
    # each tie merges a gamma copy into its user-0 twin, together with its sign constraint
    ties = counts["equal_comm_tie"]
    return n - ties, m - ties
