import math

import numpy as np
import pytest

import tvrates.mdp as mdp
from tvrates.experiment import NoiseModel, add_noise, make_phantom
from tvrates.forward_ops import BlurOperator, IdentityOperator, apply
from tvrates.grid import Grid
from tvrates.mdp import (
    BracketError,
    BudgetExhaustedError,
    IndexFunction,
    MdpConfig,
    NonMonotoneError,
    alpha_lower_bound,
    choose_alpha_mdp,
    discrepancy,
    phi_index,
)
from tvrates.smoothed_tv import SmoothedTvPenalty
from tvrates.solver import Solution

from conftest import random_field

BRACKET = (1e-5, 10.0)


def noisy_problem(kind, delta, n=32, seed=3):
    g = Grid((n, n))
    op = IdentityOperator(g) if kind == "identity" else BlurOperator(g, (0.25, 0.5, 0.25))
    truth = make_phantom("bump", g, 2.0)
    return op, add_noise(apply(op, truth), NoiseModel(delta, seed)), truth


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(delta=0.0), dict(delta=0.1, tau_low=0.9),
                                    dict(delta=0.1, tau_low=1.6, tau_high=1.5),
                                    dict(delta=0.1, alpha_bracket=(1.0, 0.1)),
                                    dict(delta=0.1, alpha_bracket=(0.0, 1.0)),
                                    dict(delta=0.1, max_solves=1)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            MdpConfig(**kw)

    def test_band(self):
        assert MdpConfig(0.1).band == pytest.approx((0.11, 0.15))


class TestDiscrepancy:
    def test_exact_data(self, rng, grid2d):
        op = BlurOperator(grid2d, (0.25, 0.5, 0.25))
        phi = random_field(rng, grid2d)
        assert discrepancy(op, phi, apply(op, phi)) == 0.0

    def test_known_noise_norm(self, rng, grid2d):
        op = IdentityOperator(grid2d)
        phi = random_field(rng, grid2d)
        f = add_noise(apply(op, phi), NoiseModel(0.3, 5))
        assert discrepancy(op, phi, f) == pytest.approx(0.3, rel=1e-14)

    def test_matches_recomputation(self, rng, grid2d):
        op = BlurOperator(grid2d, (0.25, 0.5, 0.25))
        phi = random_field(rng, grid2d)
        f = op.measurement(rng.standard_normal(grid2d.size))
        r = op._mats[0] @ phi.values @ op._mats[1].T - f.values.reshape(grid2d.shape)
        assert discrepancy(op, phi, f) == pytest.approx(math.sqrt(grid2d.cell_volume * (r ** 2).sum()), rel=1e-13)


@pytest.fixture(scope="module")
def identity_run():
    op, f, _ = noisy_problem("identity", 0.1)
    cfg = MdpConfig(0.1, alpha_bracket=BRACKET)
    return choose_alpha_mdp(op, f, SmoothedTvPenalty(0.01), cfg), cfg


class TestChooseAlpha:
    def test_in_band(self, identity_run):
        res, _ = identity_run
        assert res.in_band
        assert 0.11 <= res.discrepancy <= 0.15

    def test_alpha_inside_bracket(self, identity_run):
        res, _ = identity_run
        assert BRACKET[0] <= res.alpha <= BRACKET[1]
        assert res.solves_used == len(res.trace) <= 60

    def test_trace_ends_at_result(self, identity_run):
        res, _ = identity_run
        assert res.trace[-1].alpha == res.alpha
        assert res.trace[-1].discrepancy == res.discrepancy

    def test_blur_trace_is_monotone(self):
        op, f, _ = noisy_problem("blur", 0.05)
        res = choose_alpha_mdp(op, f, SmoothedTvPenalty(0.01), MdpConfig(0.05, alpha_bracket=BRACKET))
        pts = sorted(res.trace, key=lambda t: t.alpha)
        ds = [t.discrepancy for t in pts]
        assert ds == sorted(ds)
        assert res.in_band

    def test_bracket_too_low(self):
        op, f, _ = noisy_problem("identity", 0.1, n=16)
        with pytest.raises(BracketError) as info:
            choose_alpha_mdp(op, f, SmoothedTvPenalty(0.01), MdpConfig(0.1, alpha_bracket=(1e-6, 1e-4)))
        assert "alpha_max" in str(info.value) and len(info.value.trace) == 1

    def test_bracket_too_high(self):
        op, f, _ = noisy_problem("identity", 0.1, n=16)
        with pytest.raises(BracketError) as info:
            choose_alpha_mdp(op, f, SmoothedTvPenalty(0.01), MdpConfig(0.1, alpha_bracket=(1.0, 10.0)))
        assert "alpha_min" in str(info.value) and len(info.value.trace) == 2

    def test_budget(self):
        op, f, _ = noisy_problem("identity", 0.1, n=16)
        with pytest.raises(BudgetExhaustedError) as info:
            choose_alpha_mdp(op, f, SmoothedTvPenalty(0.01),
                             MdpConfig(0.1, alpha_bracket=(1e-8, 1e4), max_solves=2))
        assert len(info.value.trace) == 2

    def test_non_monotone_detected(self, monkeypatch):
        op, f, truth = noisy_problem("identity", 0.1, n=8)
        # a fake solver: valid bracket ends, but the midpoint overshoots both
        excess = {BRACKET[1]: 0.3, BRACKET[0]: 0.0}

        def fake_minimize(op_, f_, alpha, p, cfg=None):
            return Solution(truth * (1.0 + excess.get(alpha, 1.0)), alpha, 1, 0.0, 0.0, 1.0, True)

        monkeypatch.setattr(mdp, "minimize", fake_minimize)
        with pytest.raises(NonMonotoneError) as info:
            choose_alpha_mdp(op, f, SmoothedTvPenalty(0.01), MdpConfig(0.1, alpha_bracket=BRACKET))
        assert len(info.value.trace) == 3


class TestIndexFunction:
    def test_power_law_validation(self):
        for C, kappa in [(0.0, 1.0), (1.0, 0.0), (1.0, 2.0)]:
            with pytest.raises(ValueError):
                IndexFunction.power_law(C, kappa)
        with pytest.raises(ValueError):
            IndexFunction.power_law(1.0, 1.5, concave=True)

    def test_tabulated_validation(self):
        with pytest.raises(ValueError):
            IndexFunction.tabulated([(0.1, 0.1), (0.2, 0.3)])
        with pytest.raises(ValueError):
            IndexFunction.tabulated([(0, 0), (0.2, 0.3), (0.1, 0.4)])

    def test_tabulated_interpolation(self):
        psi = IndexFunction.tabulated([(0, 0), (0.1, 0.2), (0.3, 0.3)])
        assert psi(0.05) == pytest.approx(0.1)
        assert psi(0.2) == pytest.approx(0.25)
        assert phi_index(0.2, psi) == pytest.approx(0.04 / 0.5)
        with pytest.raises(ValueError):
            psi(0.4)

    def test_increasing(self):
        psi = IndexFunction.power_law(2.0, 0.7)
        ds = np.linspace(0, 1, 50)
        vals = [psi(d) for d in ds]
        assert vals[0] == 0.0 and all(b > a for a, b in zip(vals, vals[1:]))


class TestPhiIndex:
    def test_linear_psi(self):
        assert phi_index(0.2, IndexFunction.power_law(1.0, 1.0)) == pytest.approx(0.1)

    def test_sqrt_psi(self):
        assert phi_index(0.01, IndexFunction.power_law(1.0, 0.5)) == pytest.approx(5e-4)

    def test_monotone_for_concave(self):
        psi = IndexFunction.power_law(3.0, 0.8, concave=True)
        vals = [phi_index(d, psi) for d in np.geomspace(1e-3, 1, 20)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_zero_delta(self):
        with pytest.raises(ValueError):
            phi_index(0.0, IndexFunction.power_law(1.0, 1.0))


class TestAlphaLowerBound:
    def test_tau_one_vanishes(self):
        assert alpha_lower_bound(0.1, 1.0, IndexFunction.power_law(1.0, 1.0)) == 0.0

    def test_tau_two(self):
        assert alpha_lower_bound(0.1, 2.0, IndexFunction.power_law(1.0, 1.0)) == pytest.approx(0.015)

    def test_random_recomputation(self, rng):
        for _ in range(20):
            tau, delta = 1 + 2 * rng.random(), 10 ** rng.uniform(-3, 0)
            C, kappa = 10 ** rng.uniform(-1, 1), rng.uniform(0.1, 1.9)
            want = 0.5 * (tau - 1) ** 2 * (tau * tau - 1) / (tau * tau + 1) * delta ** (2 - kappa) / (2 * C)
            got = alpha_lower_bound(delta, tau, IndexFunction.power_law(C, kappa))
            assert got == pytest.approx(want, rel=1e-12)
