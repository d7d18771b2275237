"""Closed-form SE, Fisher information, CRB and energy-efficiency evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .config import SystemConfig
from .sysmodel import ChannelSet, PowerAllocation, SensingGeometry, channel_gains, transmit_power

FEAS_TOL = 1e-6


class DegenerateFimError(ArithmeticError):
    """A Schur complement in the CRB formulas is not positive."""

    def __init__(self, what: str, value: float):
        super().__init__(f"degenerate FIM: {what} = {value!r}")
        self.what = what
        self.value = value


# ---------------------------------------------------------------- communication


def rate_terms(alloc: PowerAllocation, ch: ChannelSet, geo: SensingGeometry, cfg: SystemConfig):
    """Per-(k, q) SINR numerator and denominator, each (K, Q)."""
    g2, re_ha = channel_gains(ch, geo)
    alpha = ch.alpha_zf[None, :]
    xi, gam, eta = alloc.xi, alloc.gamma, alloc.eta
    n_t = geo.n_t
    gain = alpha ** 2 * gam + eta * g2 / n_t + 2.0 * alpha / np.sqrt(n_t) * np.sqrt(gam * eta) * re_ha
    num = xi * gain
    # user k sees every other user's sensing component through |h_k^H a|^2
    sens = xi * eta
    others = sens.sum(axis=0, keepdims=True) - sens
    den = others * g2 / n_t + cfg.sigma_c_sq
    return num, den


def effective_gain(k: int, i: int, q: int, alloc: PowerAllocation, ch: ChannelSet,
                   geo: SensingGeometry) -> float:
    """``|h_k^H f_i|^2`` on subcarrier ``q`` using the ZF identity (0-based indices)."""
    g2, re_ha = channel_gains(ch, geo)
    n_t = geo.n_t
    if i != k:
        return float(alloc.eta[i, q] * g2[k, q] / n_t)
    a = ch.alpha_zf[q]
    gam, eta = alloc.gamma[k, q], alloc.eta[k, q]
    return float(a ** 2 * gam + eta * g2[k, q] / n_t
                 + 2.0 * a / np.sqrt(n_t) * np.sqrt(gam * eta) * re_ha[k, q])


def se_per_user(alloc, ch, geo, cfg) -> np.ndarray:
    num, den = rate_terms(alloc, ch, geo, cfg)
    return np.log2(1.0 + num / den).sum(axis=1)


# ---------------------------------------------------------------- sensing


@dataclass(frozen=True)
class FimWeights:
    """Per-(k, q) weights so that each FIM quantity is ``sum(w_g*xi*gamma + w_e*xi*eta)``.

    ``tt``, ``tp``, ``pp`` carry the ``kappa_bar |alpha|^2`` factor; ``num_re``,
    ``num_im`` and ``den`` are the bare sums behind the alpha-elimination term,
    which equals ``kappa_bar * (num_re^2 + num_im^2) / den``.
    """

    tt: tuple
    tp: tuple
    pp: tuple
    num_re: tuple
    num_im: tuple
    den: tuple
    kappa_bar: float

    def items(self):
        return (("tt", self.tt), ("tp", self.tp), ("pp", self.pp),
                ("num_re", self.num_re), ("num_im", self.num_im), ("den", self.den))


def fim_weights(geo: SensingGeometry, ch: ChannelSet, cfg: SystemConfig) -> FimWeights:
    d = ch.bar_d_beta[:, None]
    K = d.shape[0]
    ones = np.ones((K, 1))
    kb = cfg.kappa_bar
    a2 = abs(cfg.alpha_refl) ** 2
    ac = np.conj(cfg.alpha_refl)

    def pair(tr, c, scale=1.0):
        return (scale * d * tr[None, :], scale * ones * c[None, :])

    s_tr = ac * geo.tr_p
    s_c = ac * geo.c_p
    return FimWeights(
        tt=pair(geo.tr_tt, geo.c_tt, kb * a2),
        tp=pair(geo.tr_tp.real, geo.c_tp.real, kb * a2),
        pp=pair(geo.tr_pp, geo.c_pp, kb * a2),
        num_re=pair(s_tr.real, s_c.real),
        num_im=pair(s_tr.imag, s_c.imag),
        den=pair(geo.tr_gg, geo.c2),
        kappa_bar=kb,
    )


def weighted_sum(w: tuple, alloc: PowerAllocation) -> float:
    wg, we = w
    return float(np.sum(wg * alloc.xi * alloc.gamma + we * alloc.xi * alloc.eta))


@dataclass(frozen=True)
class FimElements:
    tau_tt: float
    tau_tp: float
    tau_pp: float
    t_ta: np.ndarray
    t_pa: np.ndarray
    t_aa_scalar: float
    kappa_bar: float

    @property
    def t_phi_alpha_phi(self) -> float:
        return float(self.t_pa @ self.t_pa) / self.t_aa_scalar


def fim_elements(alloc: PowerAllocation, geo: SensingGeometry, cfg: SystemConfig,
                 ch: ChannelSet) -> FimElements:
    """FIM entries in closed form; ``ch`` supplies the ZF power weights."""
    w = fim_weights(geo, ch, cfg)
    d = ch.bar_d_beta[:, None]
    xg = alloc.xi * alloc.gamma
    xe = alloc.xi * alloc.eta
    ac = np.conj(cfg.alpha_refl)
    s_t = ac * np.sum(xg * d * geo.tr_t[None, :] + xe * geo.c_t[None, :])
    s_p = ac * np.sum(xg * d * geo.tr_p[None, :] + xe * geo.c_p[None, :])
    kb = cfg.kappa_bar
    return FimElements(
        tau_tt=weighted_sum(w.tt, alloc),
        tau_tp=weighted_sum(w.tp, alloc),
        tau_pp=weighted_sum(w.pp, alloc),
        t_ta=kb * np.array([s_t.real, -s_t.imag]),
        t_pa=kb * np.array([s_p.real, -s_p.imag]),
        t_aa_scalar=kb * weighted_sum(w.den, alloc),
        kappa_bar=kb,
    )


def crb(fim: FimElements) -> tuple[float, float]:
    if not fim.t_aa_scalar > 0:
        raise DegenerateFimError("t_aa", fim.t_aa_scalar)
    if not fim.tau_tt > 0:
        raise DegenerateFimError("tau_tt", fim.tau_tt)
    reduced = fim.tau_pp - fim.t_phi_alpha_phi
    if not reduced > 0:
        raise DegenerateFimError("tau_pp - T", reduced)
    inv_theta = fim.tau_tt - fim.tau_tp ** 2 / reduced
    inv_phi = reduced - fim.tau_tp ** 2 / fim.tau_tt
    if not inv_theta > 0:
        raise DegenerateFimError("1/CRB_theta", inv_theta)
    if not inv_phi > 0:
        raise DegenerateFimError("1/CRB_phi", inv_phi)
    return 1.0 / inv_theta, 1.0 / inv_phi


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class MetricsReport:
    se_per_user: np.ndarray
    se_sum: float
    p_tx: float
    p_tot: float
    crb_theta: float
    crb_phi: float
    ee_c: float
    ee_s: float
    objective: float
    omega: float
    se_ok: bool
    crb_theta_ok: bool
    crb_phi_ok: bool
    power_ok: bool
    max_residual: float

    @property
    def feasible(self) -> bool:
        return self.se_ok and self.crb_theta_ok and self.crb_phi_ok and self.power_ok

    @property
    def numerator(self) -> float:
        """Dinkelbach numerator: sum SE plus weighted inverse CRBs."""
        return self.se_sum + self.omega * (1.0 / self.crb_theta + 1.0 / self.crb_phi)

    @property
    def sensing_share(self) -> float:
        return self.omega * self.ee_s / self.objective if self.objective else 0.0

    def as_dict(self) -> dict:
        out = asdict(self)
        out["se_per_user"] = [float(v) for v in self.se_per_user]
        out["feasible"] = self.feasible
        return out


def feasibility_residuals(se_k: np.ndarray, crb_t: float, crb_p: float, p_tx: float,
                          cfg: SystemConfig) -> dict:
    """Positive values are violations: SE in bps/Hz, CRB and power relative to the cap."""
    res = {"se": float(np.max(cfg.se_threshold - se_k)) if cfg.se_threshold > 0 else -np.inf}
    res["crb_theta"] = crb_t / cfg.crb0_theta - 1.0 if np.isfinite(cfg.crb0_theta) else -np.inf
    res["crb_phi"] = crb_p / cfg.crb0_phi - 1.0 if np.isfinite(cfg.crb0_phi) else -np.inf
    res["power"] = p_tx / cfg.p_max - 1.0
    return res


def evaluate(alloc: PowerAllocation, ch: ChannelSet, geo: SensingGeometry,
             cfg: SystemConfig, tol: float = FEAS_TOL) -> MetricsReport:
    se_k = se_per_user(alloc, ch, geo, cfg)
    se_sum = float(se_k.sum())
    p_tx = transmit_power(alloc, ch)
    p_tot = p_tx / cfg.rho_amp + cfg.p_0 + cfg.epsilon_dyn * se_sum
    crb_t, crb_p = crb(fim_elements(alloc, geo, cfg, ch))
    ee_c = se_sum / p_tot
    ee_s = (1.0 / crb_t + 1.0 / crb_p) / p_tot
    res = feasibility_residuals(se_k, crb_t, crb_p, p_tx, cfg)
    return MetricsReport(
        se_per_user=se_k, se_sum=se_sum, p_tx=p_tx, p_tot=p_tot,
        crb_theta=crb_t, crb_phi=crb_p, ee_c=ee_c, ee_s=ee_s,
        objective=ee_c + cfg.omega * ee_s, omega=cfg.omega,
        se_ok=res["se"] <= tol, crb_theta_ok=res["crb_theta"] <= tol,
        crb_phi_ok=res["crb_phi"] <= tol, power_ok=res["power"] <= tol,
        max_residual=float(max(res.values())),
    )
