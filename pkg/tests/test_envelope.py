import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rampsched.envelope import (EnvelopeFitError, derive_envelope,
                                detect_regions, envelope_from_json,
                                envelope_to_json, demand_from_json,
                                demand_to_json, fit_demand_pwa, fit_nu_pwa,
                                fit_rho_dot_limits, im_input_u2, max_tau,
                                nu_limits_true, rho_dot_limit_from_bound,
                                sbm_limits, true_rho_dot_limits)
from rampsched.transform import (RampingPoint, backtransform,
                                 steady_state_point)


@pytest.fixture(scope="session")
def rd_fit(strategy, params, bounds):
    return fit_rho_dot_limits(strategy, params, bounds)


@pytest.fixture(scope="session")
def envelope(strategy, params, bounds):
    return derive_envelope(strategy, params, bounds)


@pytest.fixture(scope="session")
def demand_model(strategy, params, bounds, envelope):
    return fit_demand_pwa(strategy, params, bounds, envelope)


# --- per-bound rate-derivative inversion -------------------------------------

def test_rate_limit_at_steady_value_is_zero(strategy, params, bounds):
    x, u = steady_state_point(5.25, strategy.pi4(5.25), strategy, params, bounds)
    for var, val in (("T1", x.T1), ("Fp", u.Fp), ("Q2", u.Q2)):
        rd = rho_dot_limit_from_bound(5.25, var, val, strategy, params)
        assert rd == pytest.approx(0.0, abs=1e-7)


def test_rate_limit_crosscheck_backtransform(strategy, params, bounds):
    """Backtransforming at the limiting rate puts the named variable on its
    bound to 1e-6 relative."""
    for rho in (4.62, 5.25, 5.88):
        lo, hi, lo_src, hi_src = true_rho_dot_limits(rho, strategy, params, bounds)
        for rd, src in ((lo, lo_src), (hi, hi_src)):
            var, side = src.split("_")
            bound = getattr(bounds, var)[1 if side == "max" else 0]
            x, u = backtransform(RampingPoint(rho, rd, 0.0), strategy, params)
            val = getattr(x, var, None)
            if val is None:
                val = getattr(u, var)
            assert val == pytest.approx(bound, rel=1e-6, abs=1e-6)


@pytest.mark.xfail(reason="published limit-source pattern (Fp_min lower; "
                          "Fp_max/Q2_min upper) is not reproducible under the "
                          "reconstructed rate constants; see decisions ledger",
                   strict=False)
def test_rate_limit_source_pattern_matches_publication(strategy, params, bounds):
    rho = np.linspace(*bounds.rho, 51)
    lo_srcs = []
    hi_srcs = []
    for r in rho:
        _, _, ls, hs = true_rho_dot_limits(r, strategy, params, bounds)
        lo_srcs.append(ls)
        hi_srcs.append(hs)
    assert all(s == "Fp_min" for s in lo_srcs)
    assert hi_srcs[0] == "Fp_max" and hi_srcs[-1] == "Q2_min"


# --- linear rate-derivative fits ----------------------------------------------

def test_rd_fit_conservative_and_touching(rd_fit):
    lower, upper, grid = rd_fit
    rho = grid["rho"]
    fit_hi = upper(rho)
    fit_lo = lower(rho)
    assert np.all(fit_hi <= grid["true_upper"] + 1e-12)
    assert np.all(fit_lo >= grid["true_lower"] - 1e-12)
    # LP optimality forces an active point (up to the stored margin)
    assert np.min(grid["true_upper"] - fit_hi) <= upper.margin + 1e-9
    assert np.min(fit_lo - grid["true_lower"]) <= lower.margin + 1e-9


def test_rd_band_contains_steady(rd_fit, bounds):
    lower, upper, _ = rd_fit
    for rho in np.linspace(*bounds.rho, 101):
        assert lower(rho) < 0.0 < upper(rho)


def test_rd_sources_recorded(rd_fit):
    lower, upper, _ = rd_fit
    assert lower.source != "none" and upper.source != "none"
    assert lower.side == "lower" and upper.side == "upper"


def test_rd_fit_dominating_parallelogram(strategy, params, bounds, rd_fit):
    """Linear limits refit to dominate the set-point-filter parallelogram
    contain it everywhere (the fit can always match that shape)."""
    # slightly above the minimal time constant so the parallelogram clears
    # the fit's conservativeness margin
    tau = 1.05 * max_tau(strategy, params, bounds)
    rho = np.linspace(*bounds.rho, 51)
    sb = np.array([sbm_limits(r, tau, *bounds.rho) for r in rho])
    lower2, upper2, _ = fit_rho_dot_limits(strategy, params, bounds,
                                           dominate=(sb[:, 0], sb[:, 1]))
    assert np.all(lower2(rho) <= sb[:, 0] + 1e-9)
    assert np.all(upper2(rho) >= sb[:, 1] - 1e-9)


# --- true nu limits -----------------------------------------------------------

def test_nu_limit_hits_duty_bound(strategy, params, bounds):
    nl, nh = nu_limits_true(5.25, 0.2, strategy, params, bounds)
    for nu, side in ((nl, None), (nh, None)):
        _, u = backtransform(RampingPoint(5.25, 0.2, nu), strategy, params)
        dist = min(abs(u.Q1 - bounds.Q1[0]), abs(u.Q1 - bounds.Q1[1]))
        assert dist <= 1e-6 * bounds.Q1[1]


def test_nu_band_straddles_zero_at_steady(strategy, params, bounds):
    nl, nh = nu_limits_true(5.25, 0.0, strategy, params, bounds)
    assert nl < 0.0 < nh


def test_nu_single_region_on_grid(strategy, params, bounds, envelope):
    """Scanning nu feasibility (duty within bounds) gives one interval."""
    rng = np.random.default_rng(7)
    for _ in range(12):
        rho = rng.uniform(*bounds.rho)
        lo, hi = envelope.rho_dot_range(rho)
        rd = rng.uniform(lo, hi)
        nl, nh = nu_limits_true(rho, rd, strategy, params, bounds)
        nus = np.linspace(nl - 2.0, nh + 2.0, 201)
        feas = []
        for nu in nus:
            _, u = backtransform(RampingPoint(rho, rd, nu), strategy, params)
            feas.append(bounds.Q1[0] - 1e-6 <= u.Q1 <= bounds.Q1[1] + 1e-6)
        regions = detect_regions(nus, np.array(feas))
        assert len(regions) == 1


# --- disconnected regions on the illustrative model ---------------------------

def test_im_two_regions():
    """u2 = b*rd - (a*rd - rho)^2 with a=1, b=0, rho=1 and u2 in
    [-0.2, -0.05] gives two disjoint feasible rate intervals."""
    rd = np.arange(-3.0, 3.0 + 1e-12, 1e-3)
    u2 = np.array([im_input_u2(1.0, r, 1.0, 0.0) for r in rd])
    feas = (u2 >= -0.2) & (u2 <= -0.05)
    regions = detect_regions(rd, feas)
    assert len(regions) == 2
    # brute-force oracle: |rd - 1| in [sqrt(0.05), sqrt(0.2)]
    lo, hi = np.sqrt(0.05), np.sqrt(0.2)
    assert regions[0][0] == pytest.approx(1 - hi, abs=2e-3)
    assert regions[0][1] == pytest.approx(1 - lo, abs=2e-3)
    assert regions[1][0] == pytest.approx(1 + lo, abs=2e-3)
    assert regions[1][1] == pytest.approx(1 + hi, abs=2e-3)


def test_im_single_region_through_vertex():
    rd = np.arange(-3.0, 3.0 + 1e-12, 1e-3)
    u2 = np.array([im_input_u2(0.0, r, 1.0, 0.0) for r in rd])
    feas = (u2 >= -0.5) & (u2 <= 0.1)   # u2max >= 0 at rho = 0
    regions = detect_regions(rd, feas)
    assert len(regions) == 1
    assert regions[0][0] < 0.0 < regions[0][1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=3, max_size=40))
def test_detect_regions_property(mask):
    xs = np.arange(len(mask), dtype=float)
    regions = detect_regions(xs, np.array(mask))
    # reconstruct the mask from the regions
    rebuilt = np.zeros(len(mask), dtype=bool)
    for lo, hi in regions:
        rebuilt[(xs >= lo) & (xs <= hi)] = True
    assert np.array_equal(rebuilt, np.array(mask))


# --- PWA envelope fits ---------------------------------------------------------

def test_pwa_coverage_mean(envelope):
    assert envelope.coverage.mean >= 0.90
    assert np.all(envelope.coverage.values <= 1.0 + 1e-12)
    assert envelope.coverage.min >= 0.0


def test_single_segment_coverage(strategy, params, bounds, envelope):
    _, cov = fit_nu_pwa(strategy, params, bounds, envelope.rd_lower,
                        envelope.rd_upper, segments=1)
    assert 0.70 <= cov.mean <= 0.90


def test_pwa_conservative_on_fit_grid(strategy, params, bounds, envelope):
    from rampsched.envelope import _nu_grid
    R, D = _nu_grid(strategy, params, bounds, envelope.rd_lower,
                    envelope.rd_upper, 51)
    for i in range(0, 51, 5):
        for j in range(0, 51, 5):
            tl, th = nu_limits_true(R[i, j], D[i, j], strategy, params, bounds)
            pl, ph = envelope.nu_range(R[i, j], D[i, j])
            assert tl - 1e-9 <= pl < ph <= th + 1e-9


def test_pwa_steady_point_admits_both_signs(envelope):
    nl, nh = envelope.nu_range(5.25, 0.0)
    assert nl < 0.0 < nh


def test_envelope_json_roundtrip(tmp_path, envelope):
    path = tmp_path / "env.json"
    envelope_to_json(envelope, path)
    back = envelope_from_json(path)
    assert back.rd_lower == envelope.rd_lower
    assert back.rd_upper == envelope.rd_upper
    for key in envelope.nu_pwa.seg_min:
        assert back.nu_pwa.seg_min[key] == envelope.nu_pwa.seg_min[key]
        assert back.nu_pwa.seg_max[key] == envelope.nu_pwa.seg_max[key]
    assert back.coverage.mean == pytest.approx(envelope.coverage.mean)


# --- demand model ---------------------------------------------------------------

def test_demand_single_affine_error(demand_model):
    assert 0.07 <= demand_model.mae_single_rel <= 0.13


def test_demand_pwa_error(demand_model):
    assert demand_model.mae_pwa_rel <= 0.07
    assert demand_model.mae_pwa_rel <= demand_model.mae_single_rel


def test_demand_nominal_prediction(demand_model, strategy, params, bounds):
    _, u = backtransform(RampingPoint(5.25, 0.0, 0.0), strategy, params)
    q_true = u.Q1 + u.Q2
    pred = demand_model.predict(5.25, 0.0, 0.0)
    assert abs(pred - q_true) / demand_model.q_nominal <= demand_model.mae_pwa_rel * 3


def test_demand_segments_fitted(demand_model):
    assert demand_model.empty_segments == ()
    assert len(demand_model.segments) == 4


def test_demand_json_roundtrip(tmp_path, demand_model):
    path = tmp_path / "demand.json"
    demand_to_json(demand_model, path)
    back = demand_from_json(path)
    assert back.single == demand_model.single
    assert back.q_nominal == pytest.approx(demand_model.q_nominal)
    for k, seg in demand_model.segments.items():
        assert back.segments[k] == seg


# --- set-point-filter comparison -------------------------------------------------

def test_sbm_zero_at_setpoint(bounds):
    lo, hi = sbm_limits(bounds.rho[1], 2.0, *bounds.rho)
    assert hi == 0.0
    lo2, _ = sbm_limits(bounds.rho[0], 2.0, *bounds.rho)
    assert lo2 == 0.0


def test_sbm_containment_at_max_tau(strategy, params, bounds):
    tau = max_tau(strategy, params, bounds)
    for rho in np.linspace(*bounds.rho, 51):
        lo, hi, *_ = true_rho_dot_limits(rho, strategy, params, bounds)
        s_lo, s_hi = sbm_limits(rho, tau, *bounds.rho)
        assert s_lo >= lo - 1e-9
        assert s_hi <= hi + 1e-9
