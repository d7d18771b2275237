"""Array geometry, channels, the dual-function ZF precoder and power models."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

log = logging.getLogger(__name__)

# Gram matrices above this condition number are treated as singular.
_MAX_GRAM_COND = 1e12


def subcarrier_freq(q: int, cfg: SystemConfig) -> float:
    """Frequency of subcarrier ``q`` (1-based); the last one sits at ``f_c``."""
    Q = cfg.q_subcarriers
    if not (1 <= q <= Q):
        raise ValueError(f"subcarrier index {q} outside 1..{Q}")
    return cfg.f_c + cfg.bandwidth * (q - Q) / (2.0 * Q)


def subcarrier_freqs(cfg: SystemConfig) -> np.ndarray:
    return np.array([subcarrier_freq(q, cfg) for q in range(1, cfg.q_subcarriers + 1)])


def _phase_rates(theta, phi, f_q, f_c):
    scale = np.pi * f_q / f_c
    return scale * np.sin(theta) * np.sin(phi), scale * np.cos(phi)


def steering_vector(theta, phi, f_q, f_c, n_h, n_v):
    """UPA response ``a_h kron a_v`` with half-wavelength spacing at ``f_c``."""
    w_h, w_v = _phase_rates(theta, phi, f_q, f_c)
    a_h = np.exp(1j * w_h * np.arange(n_h))
    a_v = np.exp(1j * w_v * np.arange(n_v))
    return np.kron(a_h, a_v)


def steering_derivative(theta, phi, f_q, f_c, n_h, n_v, wrt):
    """Analytic derivative of :func:`steering_vector` w.r.t. ``"theta"`` or ``"phi"``.

    Only the horizontal factor depends on theta; both factors depend on phi.
    """
    scale = np.pi * f_q / f_c
    w_h, w_v = _phase_rates(theta, phi, f_q, f_c)
    n = np.arange(n_h)
    m = np.arange(n_v)
    a_h = np.exp(1j * w_h * n)
    a_v = np.exp(1j * w_v * m)
    if wrt == "theta":
        d_h = 1j * scale * np.cos(theta) * np.sin(phi) * n * a_h
        return np.kron(d_h, a_v)
    if wrt == "phi":
        d_h = 1j * scale * np.sin(theta) * np.cos(phi) * n * a_h
        d_v = -1j * scale * np.sin(phi) * m * a_v
        return np.kron(d_h, a_v) + np.kron(a_h, d_v)
    raise ValueError(f"wrt must be 'theta' or 'phi', got {wrt!r}")


@dataclass(frozen=True)
class SensingGeometry:
    """Per-subcarrier target response and the FIM constants derived from it.

    Vector fields have shape (Q, N); matrix fields (Q, Nr, Nt); scalar
    constants shape (Q,). ``c_*`` are quadratic forms in ``a``, ``tr_*`` traces.
    """

    a_tx: np.ndarray
    b_rx: np.ndarray
    da_theta: np.ndarray
    da_phi: np.ndarray
    db_theta: np.ndarray
    db_phi: np.ndarray
    g: np.ndarray
    dg_theta: np.ndarray
    dg_phi: np.ndarray
    c_tt: np.ndarray
    c_tp: np.ndarray
    c_pp: np.ndarray
    c_t: np.ndarray
    c_p: np.ndarray
    c2: np.ndarray
    tr_tt: np.ndarray
    tr_tp: np.ndarray
    tr_pp: np.ndarray
    tr_t: np.ndarray
    tr_p: np.ndarray
    tr_gg: np.ndarray

    @property
    def n_t(self) -> int:
        return self.a_tx.shape[1]

    @property
    def n_r(self) -> int:
        return self.b_rx.shape[1]


def _quad(a, m1, m2):
    # a^H m1^H m2 a per subcarrier
    return np.einsum("qi,qi->q", np.conj(m1 @ a[..., None])[..., 0], (m2 @ a[..., None])[..., 0])


def _trace(m1, m2):
    # tr(m1^H m2) per subcarrier
    return np.einsum("qij,qij->q", np.conj(m1), m2)


def build_geometry(cfg: SystemConfig) -> SensingGeometry:
    th, ph = cfg.target_theta, cfg.target_phi
    freqs = subcarrier_freqs(cfg)

    def stack(fn, n_h, n_v, *extra):
        return np.stack([fn(th, ph, f, cfg.f_c, n_h, n_v, *extra) for f in freqs])

    a = stack(steering_vector, cfg.n_th, cfg.n_tv)
    b = stack(steering_vector, cfg.n_rh, cfg.n_rv)
    da_t = stack(steering_derivative, cfg.n_th, cfg.n_tv, "theta")
    da_p = stack(steering_derivative, cfg.n_th, cfg.n_tv, "phi")
    db_t = stack(steering_derivative, cfg.n_rh, cfg.n_rv, "theta")
    db_p = stack(steering_derivative, cfg.n_rh, cfg.n_rv, "phi")

    def outer(u, v):
        return np.einsum("qi,qj->qij", u, np.conj(v))

    g = outer(b, a)
    dg_t = outer(db_t, a) + outer(b, da_t)
    dg_p = outer(db_p, a) + outer(b, da_p)

    return SensingGeometry(
        a_tx=a, b_rx=b, da_theta=da_t, da_phi=da_p, db_theta=db_t, db_phi=db_p,
        g=g, dg_theta=dg_t, dg_phi=dg_p,
        c_tt=_quad(a, dg_t, dg_t).real,
        c_tp=_quad(a, dg_t, dg_p),
        c_pp=_quad(a, dg_p, dg_p).real,
        c_t=_quad(a, dg_t, g),
        c_p=_quad(a, dg_p, g),
        c2=_quad(a, g, g).real,
        tr_tt=_trace(dg_t, dg_t).real,
        tr_tp=_trace(dg_t, dg_p),
        tr_pp=_trace(dg_p, dg_p).real,
        tr_t=_trace(dg_t, g),
        tr_p=_trace(dg_p, g),
        tr_gg=_trace(g, g).real,
    )


@dataclass(frozen=True)
class ChannelSet:
    """User channels for one drop.

    ``h`` and ``h_pinv`` have shape (Q, Nt, K); ``beta``/``bar_d_beta`` shape (K,).
    """

    h: np.ndarray
    beta: np.ndarray
    h_pinv: np.ndarray
    alpha_zf: np.ndarray
    bar_d_beta: np.ndarray
    positions: np.ndarray

    @property
    def k_users(self) -> int:
        return self.beta.shape[0]

    @property
    def q_subcarriers(self) -> int:
        return self.h.shape[0]

    @property
    def n_t(self) -> int:
        return self.h.shape[1]


def zf_alpha(beta: np.ndarray, n_t: int) -> float:
    K = beta.shape[0]
    return float(np.sqrt(K * (n_t - K) / np.sum(1.0 / beta)))


def bar_d_beta(beta: np.ndarray) -> np.ndarray:
    inv = 1.0 / beta
    return beta.shape[0] / inv.sum() * inv


def pinv_columns(h: np.ndarray) -> np.ndarray:
    """``H (H^H H)^{-1}`` for a stack of tall matrices, shape (..., Nt, K)."""
    gram = np.conj(np.swapaxes(h, -1, -2)) @ h
    return np.swapaxes(np.linalg.solve(gram, np.conj(np.swapaxes(h, -1, -2))), -1, -2).conj()


def drop_users(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """(K, 2) array of (radius, azimuth), uniform over the annulus area."""
    if cfg.user_positions is not None:
        return np.array(cfg.user_positions, dtype=float)
    K = cfg.k_users
    r = np.sqrt(rng.uniform(cfg.r_h ** 2, cfg.cell_radius ** 2, size=K))
    az = rng.uniform(-np.pi, np.pi, size=K)
    return np.column_stack([r, az])


def large_scale_gains(cfg: SystemConfig, radii: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = 10.0 ** (cfg.sigma_shadow_db * rng.standard_normal(radii.shape[0]) / 10.0)
    return z / (radii / cfg.r_h) ** cfg.nu_pathloss


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def gen_channels(cfg: SystemConfig, rng: np.random.Generator, user_positions=None,
                 beta=None) -> ChannelSet:
    """Draw one channel realization.

    ``user_positions`` (K polar coordinates) and ``beta`` override the random
    placement / large-scale fading when given.
    """
    K, Q, Nt = cfg.k_users, cfg.q_subcarriers, cfg.n_t
    pos = np.asarray(user_positions, dtype=float) if user_positions is not None else drop_users(cfg, rng)
    if np.any(pos[:, 0] < cfg.r_h):
        raise ValueError("user radius below r_h")
    if beta is None:
        beta = large_scale_gains(cfg, pos[:, 0], rng)
    beta = np.asarray(beta, dtype=float)
    for attempt in range(100):
        h = complex_gaussian(rng, (Q, Nt, K)) * np.sqrt(beta)[None, None, :]
        gram = np.conj(np.swapaxes(h, -1, -2)) @ h
        if np.all(np.linalg.cond(gram) < _MAX_GRAM_COND):
            break
        log.warning("ill-conditioned channel Gram matrix, redrawing (attempt %d)", attempt + 1)
    else:
        raise RuntimeError("could not draw a well-conditioned channel")
    alpha = zf_alpha(beta, Nt)
    return ChannelSet(
        h=h, beta=beta, h_pinv=pinv_columns(h), alpha_zf=np.full(Q, alpha),
        bar_d_beta=bar_d_beta(beta), positions=pos,
    )


@dataclass(frozen=True)
class PowerAllocation:
    """Decision variables, each of shape (K, Q): power, comm and sensing fractions."""

    xi: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        for name in ("xi", "gamma", "eta"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.xi.shape == self.gamma.shape == self.eta.shape) or self.xi.ndim != 2:
            raise ValueError("xi, gamma and eta must share one (K, Q) shape")

    @property
    def shape(self):
        return self.xi.shape

    @classmethod
    def uniform(cls, k_users: int, q_subcarriers: int, xi: float, gamma: float = 0.5):
        shape = (k_users, q_subcarriers)
        return cls(np.full(shape, xi), np.full(shape, gamma), np.full(shape, 1.0 - gamma))

    @classmethod
    def from_split(cls, xi, gamma):
        gamma = np.clip(np.asarray(gamma, dtype=float), 0.0, 1.0)
        return cls(np.maximum(np.asarray(xi, dtype=float), 0.0), gamma, 1.0 - gamma)

    def scaled(self, c: float) -> "PowerAllocation":
        return PowerAllocation(c * self.xi, self.gamma, self.eta)

    def split_residual(self) -> float:
        return float(np.max(np.abs(self.gamma + self.eta - 1.0)))

    def min_entry(self) -> float:
        return float(min(self.xi.min(), self.gamma.min(), self.eta.min()))

    def is_valid(self, tol: float = 1e-9) -> bool:
        finite = all(np.all(np.isfinite(v)) for v in (self.xi, self.gamma, self.eta))
        return finite and self.split_residual() <= tol and self.min_entry() >= -tol


def dual_precoder_column(k: int, q: int, alloc: PowerAllocation, ch: ChannelSet,
                         geo: SensingGeometry) -> np.ndarray:
    """Column ``k`` of the dual-function precoder on subcarrier ``q`` (0-based)."""
    n_t = geo.n_t
    return (ch.alpha_zf[q] * np.sqrt(alloc.gamma[k, q]) * ch.h_pinv[q, :, k]
            + np.sqrt(alloc.eta[k, q]) * geo.a_tx[q] / np.sqrt(n_t))


def transmit_power(alloc: PowerAllocation, ch: ChannelSet) -> float:
    """Expected per-symbol transmit power in mW."""
    d = ch.bar_d_beta[:, None]
    return float(np.sum(alloc.xi * (d * alloc.gamma + alloc.eta)))


def total_power(alloc: PowerAllocation, se_sum: float, cfg: SystemConfig, ch: ChannelSet) -> float:
    if se_sum < 0:
        raise ValueError("se_sum must be nonnegative")
    return transmit_power(alloc, ch) / cfg.rho_amp + cfg.p_0 + cfg.epsilon_dyn * se_sum


def channel_gains(ch: ChannelSet, geo: SensingGeometry) -> tuple[np.ndarray, np.ndarray]:
    """``|h_k^H a|^2`` and ``Re{h_k^T a^*}``, both (K, Q)."""
    ha = np.einsum("qnk,qn->kq", np.conj(ch.h), geo.a_tx)
    return np.abs(ha) ** 2, ha.real
