import numpy as np
import pytest

from isac_ee.config import SolverSettings, SystemConfig, dbm_to_mw, db_to_lin
from isac_ee.metrics import FEAS_TOL, evaluate
from isac_ee.optimizer import (
    InfeasibleScenarioError, equalcs_allocation, initialize, run, run_equalcom, run_equalcs,
    run_scheme, solve_chain,
)
from isac_ee.sysmodel import PowerAllocation, build_geometry, gen_channels, transmit_power, zf_alpha

SMALL = dict(n_th=3, n_tv=3, n_rh=3, n_rv=3, k_users=2, q_subcarriers=2, se_threshold=2.0)


def _small(seed=0, **kw):
    cfg = SystemConfig.desk(**{**SMALL, **kw})
    geo = build_geometry(cfg)
    ch = gen_channels(cfg, np.random.default_rng(seed))
    return cfg, geo, ch


def test_initialize_without_thresholds_returns_start():
    cfg, geo, ch = _small(se_threshold=0.0, crb0_theta=np.inf, crb0_phi=np.inf)
    start = PowerAllocation.uniform(2, 2, 1.0)
    alloc, steps = initialize(cfg, ch, geo, start=start)
    assert steps == 0
    assert np.allclose(alloc.xi, start.xi) and np.allclose(alloc.gamma, start.gamma, atol=1e-8)


def test_initialize_finds_feasible_point():
    cfg, geo, ch = _small(seed=2)
    alloc, steps = initialize(cfg, ch, geo, np.random.default_rng(0))
    assert evaluate(alloc, ch, geo, cfg).feasible


def test_initialize_detects_capacity_bound():
    cfg, geo, ch = _small(seed=1)
    # interference-free SE with every milliwatt spent on user k alone: an upper bound
    K, Q = 2, 2
    alpha2 = zf_alpha(ch.beta, cfg.n_t) ** 2
    cap = Q * np.log2(1 + cfg.p_max / (Q * ch.bar_d_beta.min()) * alpha2 / cfg.sigma_c_sq)
    bad = cfg.replace(se_threshold=float(cap) + 1.0)
    with pytest.raises(InfeasibleScenarioError) as err:
        initialize(bad, ch, geo, np.random.default_rng(0))
    assert "se_threshold" in str(err.value)


def test_run_small_scale():
    cfg, geo, ch = _small(seed=4)
    out = solve_chain(cfg, ch, geo, seed=4)
    prop = out["proposed"]
    assert prop.status == "converged" and prop.iterations <= 200
    for base in ("equalcom", "equalcs"):
        if out[base].status != "infeasible":
            assert prop.objective >= out[base].objective - 1e-6
    hist = [r.objective for r in prop.trace]
    assert all(b >= a - 1e-6 for a, b in zip(hist, hist[1:]))
    assert prop.stationarity <= 1e-3
    assert prop.report.max_residual <= FEAS_TOL


def test_equalcom_ties_and_relaxation():
    for seed in (4, 5):
        cfg, geo, ch = _small(seed=seed)
        out = solve_chain(cfg, ch, geo, ("proposed", "equalcom"), seed=seed)
        ecm = out["equalcom"]
        if ecm.status == "infeasible":
            continue
        spread = ecm.allocation.gamma.max(axis=0) - ecm.allocation.gamma.min(axis=0)
        assert np.all(spread <= 1e-7)
        assert ecm.objective <= out["proposed"].objective + 1e-6


def test_equalcs_point():
    cfg, geo, ch = _small(seed=4)
    alloc = equalcs_allocation(cfg)
    assert transmit_power(alloc, ch) == pytest.approx(cfg.p_max, rel=1e-9)
    assert np.allclose(alloc.xi, cfg.p_max / (cfg.k_users * cfg.q_subcarriers))
    assert np.allclose(alloc.gamma, 0.5) and np.allclose(alloc.eta, 0.5)
    res = run_equalcs(cfg, ch, geo)
    assert res.iterations == 0 and len(res.trace) == 1


def test_equalcs_optimized_power_variant():
    cfg, geo, ch = _small(seed=4, se_threshold=0.5)
    fixed = run_equalcs(cfg, ch, geo)
    tuned = run_equalcs(cfg, ch, geo, SolverSettings(equalcs_optimize_xi=True))
    assert fixed.status == "converged"
    assert np.allclose(tuned.allocation.gamma, 0.5, atol=1e-7)
    assert tuned.objective >= fixed.objective - 1e-6


def test_run_scheme_reports_infeasible():
    cfg, geo, ch = _small(seed=1, se_threshold=500.0)
    res = run_scheme("proposed", cfg, ch, geo)
    assert res.status == "infeasible" and "se_threshold" in res.notes[0]
    with pytest.raises(InfeasibleScenarioError):
        run(cfg, ch, geo)


def test_chain_rejects_unknown_scheme():
    cfg, geo, ch = _small()
    with pytest.raises(ValueError):
        solve_chain(cfg, ch, geo, ("proposed", "greedy"))


def test_solve_is_deterministic():
    cfg, geo, ch = _small(seed=5)
    a = run_equalcom(cfg, ch, geo, rng=np.random.default_rng(3))
    b = run_equalcom(cfg, ch, geo, rng=np.random.default_rng(3))
    assert a.objective == b.objective and a.iterations == b.iterations


@pytest.mark.xfail(strict=True, reason="under normalized unit noise and mW powers the full-size "
                   "cell cannot reach 5 bps/Hz per user; see the README scenario notes")
def test_full_scale_initialization():
    cfg = SystemConfig.full(p_max=dbm_to_mw(20.0), crb0_theta=db_to_lin(-30.0),
                             crb0_phi=db_to_lin(-30.0), se_threshold=5.0)
    geo = build_geometry(cfg)
    ch = gen_channels(cfg, np.random.default_rng(0))
    alloc, _ = initialize(cfg, ch, geo, np.random.default_rng(0))
    assert evaluate(alloc, ch, geo, cfg).feasible
