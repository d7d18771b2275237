"""Independent validators for the closed forms.

Everything here is computed along a separate path: explicit precoder columns
and raw inner products for the rates, dense matrix traces of the transmit
covariance for the Fisher information, and Monte-Carlo sampling of fading and
symbols for the covariance and the transmit power. Nothing is imported from
the closed-form or surrogate modules.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .config import SystemConfig
from .sysmodel import (ChannelSet, PowerAllocation, SensingGeometry, complex_gaussian,
                       dual_precoder_column, pinv_columns, zf_alpha)


def rel_error(a, b) -> float:
    """``|a - b| / max(|a|, |b|, 1e-300)``, elementwise max for arrays."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b) / den))


def frobenius_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b||_F / max(||a||_F, ||b||_F, 1e-300)``."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / max(na, nb, 1e-300))


@dataclass(frozen=True)
class OracleReport:
    quantity: str
    closed_form: float
    oracle: float
    rel_error: float
    tolerance: float
    samples: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.rel_error <= self.tolerance)

    def as_row(self) -> dict:
        row = asdict(self)
        row["passed"] = self.passed
        return row


def compare(quantity: str, closed, oracle, tolerance: float, samples: int = 0) -> OracleReport:
    """Report for scalar or array values; the worst entry is recorded."""
    closed_a = np.atleast_1d(np.asarray(closed))
    oracle_a = np.atleast_1d(np.asarray(oracle))
    err = rel_error(closed_a, oracle_a)
    idx = int(np.argmax(np.abs(closed_a - oracle_a))) if closed_a.size > 1 else 0
    return OracleReport(quantity, float(np.real(closed_a.ravel()[idx])),
                        float(np.real(oracle_a.ravel()[idx])), err, tolerance, samples)


# ---------------------------------------------------------------- rates


def precoder(q: int, alloc: PowerAllocation, ch: ChannelSet, geo: SensingGeometry) -> np.ndarray:
    """Nt x K precoder on subcarrier ``q`` built column by column."""
    K = alloc.shape[0]
    return np.stack([dual_precoder_column(k, q, alloc, ch, geo) for k in range(K)], axis=1)


def direct_se(alloc: PowerAllocation, ch: ChannelSet, geo: SensingGeometry,
              cfg: SystemConfig) -> np.ndarray:
    """Per-user SE from explicit SINRs ``xi_k|h_k^H f_k|^2 / (sum_j xi_j|h_k^H f_j|^2 + s2)``."""
    K, Q = alloc.shape
    se = np.zeros(K)
    for q in range(Q):
        F = precoder(q, alloc, ch, geo)
        gains = np.abs(np.conj(ch.h[q]).T @ F) ** 2  # [k, i] = |h_k^H f_i|^2
        p = alloc.xi[:, q]
        for k in range(K):
            sig = p[k] * gains[k, k]
            interf = sum(p[j] * gains[k, j] for j in range(K) if j != k)
            se[k] += np.log2(1.0 + sig / (interf + cfg.sigma_c_sq))
    return se


# ---------------------------------------------------------------- sensing


def analytic_covariance(alloc: PowerAllocation, ch: ChannelSet, geo: SensingGeometry) -> np.ndarray:
    """Transmit covariance per subcarrier, (Q, Nt, Nt), from the fading-averaged form."""
    K, Q = alloc.shape
    n_t = geo.n_t
    out = np.zeros((Q, n_t, n_t), dtype=complex)
    for q in range(Q):
        comm = float(np.sum(alloc.xi[:, q] * ch.bar_d_beta * alloc.gamma[:, q]))
        sens = float(np.sum(alloc.xi[:, q] * alloc.eta[:, q]))
        a = geo.a_tx[q]
        out[q] = (comm * np.eye(n_t) + sens * np.outer(a, np.conj(a))) / n_t
    return out


@dataclass(frozen=True)
class FimBlocks:
    """Per-subcarrier FIM pieces from dense traces."""

    tau_tt: np.ndarray
    tau_tp: np.ndarray
    tau_pp: np.ndarray
    t_ta: np.ndarray  # (Q, 2)
    t_pa: np.ndarray  # (Q, 2)
    t_aa: np.ndarray  # (Q,) scalar multiplying I_2


def fim_blocks(alloc: PowerAllocation, geo: SensingGeometry, cfg: SystemConfig,
               ch: ChannelSet) -> FimBlocks:
    R = analytic_covariance(alloc, ch, geo)
    kappa = 2.0 * cfg.frame_len / cfg.sigma_s_sq
    a2 = abs(cfg.alpha_refl) ** 2
    ac = np.conj(cfg.alpha_refl)
    Q = R.shape[0]
    tt, tp, pp, ta, pa, aa = (np.zeros(Q), np.zeros(Q), np.zeros(Q), np.zeros((Q, 2)),
                              np.zeros((Q, 2)), np.zeros(Q))

    def tr(m1, r, m2):
        # tr(m1 R m2^H)
        return np.trace(m1 @ r @ np.conj(m2).T)

    def re_1j(z):
        # Re{z [1, j]}
        return np.array([z.real, (1j * z).real])

    for q in range(Q):
        G, Gt, Gp, r = geo.g[q], geo.dg_theta[q], geo.dg_phi[q], R[q]
        tt[q] = kappa * a2 * tr(Gt, r, Gt).real
        tp[q] = kappa * a2 * tr(Gp, r, Gt).real
        pp[q] = kappa * a2 * tr(Gp, r, Gp).real
        ta[q] = kappa * re_1j(ac * tr(G, r, Gt))
        pa[q] = kappa * re_1j(ac * tr(G, r, Gp))
        aa[q] = kappa * tr(G, r, G).real
    return FimBlocks(tt, tp, pp, ta, pa, aa)


class DegenerateOracleFim(ArithmeticError):
    pass


def numeric_fim(alloc: PowerAllocation, geo: SensingGeometry, cfg: SystemConfig,
                ch: ChannelSet, per_subcarrier: bool = False) -> tuple[float, float]:
    """``(CRB_theta, CRB_phi)`` by numerically inverting the 2x2 equivalent FIM.

    By default every block is summed over subcarriers before the reflection
    coefficient is eliminated (the structure of the closed form). With
    ``per_subcarrier`` the elimination is done on each subcarrier and the
    reduced matrices are summed instead.
    """
    b = fim_blocks(alloc, geo, cfg, ch)
    if per_subcarrier:
        if np.any(b.t_aa <= 0):
            raise DegenerateOracleFim("zero reflection information on a subcarrier")
        red = np.sum(b.tau_pp - np.sum(b.t_pa ** 2, axis=1) / b.t_aa)
    else:
        taa = b.t_aa.sum()
        if not taa > 0:
            raise DegenerateOracleFim("zero reflection information")
        tpa = b.t_pa.sum(axis=0)
        red = b.tau_pp.sum() - tpa @ tpa / taa
    fim = np.array([[b.tau_tt.sum(), b.tau_tp.sum()], [b.tau_tp.sum(), red]])
    if not np.linalg.det(fim) > 0 or not fim[0, 0] > 0:
        raise DegenerateOracleFim("equivalent FIM is not positive definite")
    inv = np.linalg.inv(fim)
    return float(inv[0, 0]), float(inv[1, 1])


# ---------------------------------------------------------------- Monte Carlo


def _mc_draws(alloc: PowerAllocation, cfg: SystemConfig, geo: SensingGeometry, beta: np.ndarray,
              n_samples: int, rng: np.random.Generator, batch: int = 2000):
    """Yield per-sample ``X X^H / L`` as (n, Q, Nt, Nt) batches."""
    K, Q = alloc.shape
    n_t, L = geo.n_t, cfg.frame_len
    beta = np.asarray(beta, dtype=float)
    alpha = zf_alpha(beta, n_t)
    sq_p = np.sqrt(alloc.xi)  # (K, Q)
    a = geo.a_tx  # (Q, Nt)
    done = 0
    while done < n_samples:
        n = min(batch, n_samples - done)
        h = complex_gaussian(rng, (n, Q, n_t, K)) * np.sqrt(beta)
        w = pinv_columns(h)  # (n, Q, Nt, K)
        F = (alpha * np.sqrt(alloc.gamma.T)[None, :, None, :] * w
             + (np.sqrt(alloc.eta.T)[None, :, None, :] * a[None, :, :, None]) / np.sqrt(n_t))
        s = complex_gaussian(rng, (n, Q, K, L))
        X = (F * sq_p.T[None, :, None, :]) @ s
        yield X @ np.conj(np.swapaxes(X, -1, -2)) / L
        done += n


def mc_covariance(alloc: PowerAllocation, cfg: SystemConfig, geo: SensingGeometry,
                  beta: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Sample mean of ``X[q] X[q]^H / L`` over fading and symbols, (Q, Nt, Nt)."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    acc = None
    for blk in _mc_draws(alloc, cfg, geo, beta, n_samples, rng):
        s = blk.sum(axis=0)
        acc = s if acc is None else acc + s
    return acc / n_samples


def mc_transmit_power(alloc: PowerAllocation, cfg: SystemConfig, geo: SensingGeometry,
                      beta: np.ndarray, n_samples: int, rng: np.random.Generator) -> float:
    """Sample mean of ``sum_q tr(X[q] X[q]^H) / L`` in mW."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    tot = 0.0
    for blk in _mc_draws(alloc, cfg, geo, beta, n_samples, rng):
        tot += float(np.trace(blk, axis1=-2, axis2=-1).real.sum())
    return tot / n_samples


def mc_zf_trace(n_t: int, k_users: int, n_samples: int, rng: np.random.Generator,
                beta: Optional[np.ndarray] = None) -> float:
    """Sample mean of ``tr(W W^H)`` for the normalized ZF precoder ``W = alpha * H^+``."""
    beta = np.ones(k_users) if beta is None else np.asarray(beta, dtype=float)
    alpha = zf_alpha(beta, n_t)
    h = complex_gaussian(rng, (n_samples, n_t, k_users)) * np.sqrt(beta)
    w = alpha * pinv_columns(h)
    return float(np.mean(np.sum(np.abs(w) ** 2, axis=(-2, -1))))


# ---------------------------------------------------------------- grid search


@dataclass(frozen=True)
class GridSpec:
    xi_levels: tuple
    gamma_levels: tuple

    @classmethod
    def default(cls, cfg: SystemConfig, n_xi: int = 5, n_gamma: int = 9) -> "GridSpec":
        # geometric power levels: the energy-efficient operating point spends a
        # small fraction of the budget, a linear grid would miss it entirely
        top = cfg.p_max / cfg.q_subcarriers
        xi = top * np.geomspace(1e-2, 1.0, n_xi)
        return cls(tuple(float(v) for v in xi), tuple(float(v) for v in np.linspace(0.0, 1.0, n_gamma)))


@dataclass(frozen=True)
class GridResult:
    allocation: Optional[PowerAllocation]
    objective: float
    n_points: int
    n_feasible: int

    @property
    def empty(self) -> bool:
        return self.allocation is None


def oracle_objective(alloc: PowerAllocation, ch: ChannelSet, geo: SensingGeometry,
                     cfg: SystemConfig, tol: float = 1e-6) -> tuple[float, bool]:
    """Overall EE and threshold feasibility along the oracle formula path."""
    se = direct_se(alloc, ch, geo, cfg)
    R = analytic_covariance(alloc, ch, geo)
    p_tx = float(np.trace(R, axis1=-2, axis2=-1).real.sum())
    p_tot = p_tx / cfg.rho_amp + cfg.p_0 + cfg.epsilon_dyn * float(se.sum())
    crb_t, crb_p = numeric_fim(alloc, geo, cfg, ch)
    obj = (se.sum() + cfg.omega * (1.0 / crb_t + 1.0 / crb_p)) / p_tot
    ok = (np.all(se >= cfg.se_threshold - tol) and crb_t <= cfg.crb0_theta * (1 + tol)
          and crb_p <= cfg.crb0_phi * (1 + tol) and p_tx <= cfg.p_max * (1 + tol))
    return float(obj), bool(ok)


def grid_search(cfg: SystemConfig, ch: ChannelSet, geo: SensingGeometry,
                spec: Optional[GridSpec] = None, max_points: int = 2_000_000) -> GridResult:
    """Exhaustive search over a per-entry grid of (xi level, gamma), eta = 1 - gamma."""
    spec = spec or GridSpec.default(cfg)
    K, Q = cfg.k_users, cfg.q_subcarriers
    levels = list(itertools.product(spec.xi_levels, spec.gamma_levels))
    n_points = len(levels) ** (K * Q)
    if n_points > max_points:
        raise ValueError(f"grid of {n_points} points exceeds max_points={max_points}")
    best, best_obj, n_feas = None, -np.inf, 0
    for combo in itertools.product(levels, repeat=K * Q):
        xi = np.array([c[0] for c in combo]).reshape(K, Q)
        gamma = np.array([c[1] for c in combo]).reshape(K, Q)
        alloc = PowerAllocation(xi, gamma, 1.0 - gamma)
        try:
            obj, ok = oracle_objective(alloc, ch, geo, cfg)
        except DegenerateOracleFim:
            continue
        if not ok:
            continue
        n_feas += 1
        if obj > best_obj:
            best, best_obj = alloc, obj
    return GridResult(best, float(best_obj) if best is not None else float("nan"), n_points, n_feas)


def sweep_1d(values: Sequence[float], fn) -> tuple[float, float]:
    """Maximizer and maximum of ``fn`` over ``values``."""
    vals = [fn(v) for v in values]
    i = int(np.argmax(vals))
    return float(values[i]), float(vals[i])
