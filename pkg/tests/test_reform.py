"""Primitive <-> reformulated transforms and relation residuals."""

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import X, lambdify_on, observed_order
from dnslab import FARFIELD, PERIODIC, Grid, Params, PrimitiveState, ReformState
from dnslab.errors import OverflowFieldError, PositivityError
from dnslab.ops import grad
from dnslab.params import derive_constants
from dnslab.reform import from_reform, lift, relation_residuals, rho_from_phi, to_reform

P = Params(A=1.0, gamma=2.0, delta=0.5)


def state_1d(rho, grid, u=None):
    return PrimitiveState(grid, rho, np.zeros((1, *grid.shape)) if u is None else u)


def smooth_2d(n):
    g = Grid.uniform(2, n, 1.0, PERIODIC)
    x, y = g.coords
    rho = 1.0 + 0.4 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    return state_1d(rho, g, np.zeros((2, n, n)))


class TestToReform:
    def test_constant_density(self):
        g = Grid.uniform(1, 16)
        r = to_reform(state_1d(np.ones(16), g), P)
        np.testing.assert_allclose(r.phi, 2.0)
        np.testing.assert_allclose(r.h, 2**-0.5, rtol=1e-14)
        np.testing.assert_allclose(r.varphi, 2**0.5, rtol=1e-14)
        assert np.array_equal(r.psi, np.zeros((1, 16)))
        assert np.array_equal(r.f, np.zeros((1, 16)))

    def test_gaussian_psi_matches_symbolic(self):
        rho_s = sp.exp(-(X**2))
        delta = sp.Rational(1, 2)
        psi_s = sp.simplify(delta * rho_s ** (delta - 2) * sp.diff(rho_s, X))
        assert sp.simplify(psi_s - (-X * sp.exp(X**2 / 2))) == 0
        errs, dxs = [], []
        for n in (64, 128, 256):
            g = Grid.uniform(1, n, 4.0, FARFIELD)
            r = to_reform(state_1d(lambdify_on(rho_s, g), g), P)
            core = np.abs(g.coords[0]) < 1.5
            errs.append(np.abs(r.psi[0] - lambdify_on(psi_s, g))[core].max())
            dxs.append(g.dx)
        assert observed_order(dxs, errs) == pytest.approx(2.0, abs=0.25)

    def test_nonpositive_rejected(self):
        with pytest.raises(PositivityError):
            rho_from_phi(np.array([1.0, 0.0]), P)
        with pytest.raises(PositivityError):
            rho_from_phi(-np.ones(8), P)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_overflow_is_an_error(self):
        g = Grid.uniform(1, 8, 1e-3, FARFIELD)
        rho = np.full(8, 5e-324)
        rho[4] = 1.0
        with pytest.raises(OverflowFieldError):
            to_reform(state_1d(rho, g), Params(gamma=2.0, delta=0.05))


class TestFromReform:
    def test_phi_two_gives_unit_density(self):
        np.testing.assert_allclose(rho_from_phi(np.full(4, 2.0), P), 1.0)

    @pytest.mark.parametrize("gamma", [1.2, 1.5, 2.0, 3.7])
    def test_identity_case(self, gamma):
        p = Params(A=1.3, gamma=gamma)
        np.testing.assert_allclose(rho_from_phi(np.full(4, p.A * gamma / (gamma - 1)), p), 1.0, rtol=1e-14)

    @given(arrays(float, 16, elements=st.floats(0.05, 20.0)), st.floats(1.1, 3.0), st.floats(0.05, 0.95))
    def test_round_trip(self, rho, gamma, delta):
        p = Params(gamma=gamma, delta=delta)
        g = Grid.uniform(1, 16)
        s = state_1d(rho, g)
        back = from_reform(to_reform(s, p), p)
        np.testing.assert_allclose(back.rho, rho, rtol=1e-12)

    @given(arrays(float, 16, elements=st.floats(0.1, 10.0)))
    def test_reform_of_inverse(self, phi):
        g = Grid.uniform(1, 16)
        r = to_reform(state_1d(rho_from_phi(phi, P), g), P)
        e = derive_constants(P).e
        np.testing.assert_allclose(r.phi, phi, rtol=1e-12)
        np.testing.assert_allclose(r.h, phi ** (2 * e), rtol=1e-12)
        np.testing.assert_allclose(r.varphi, phi ** (-2 * e), rtol=1e-12)


class TestRelations:
    def test_constant_state_all_small(self):
        g = Grid.uniform(2, 8)
        r = to_reform(PrimitiveState(g, np.full((8, 8), 0.7), np.zeros((2, 8, 8))), P)
        assert max(relation_residuals(r, P).as_dict().values()) <= 1e-12

    def test_exact_relations_at_round_off(self):
        r = to_reform(smooth_2d(32), P)
        rep = relation_residuals(r, P)
        assert rep.h_varphi <= 1e-12
        assert rep.f_vs_psi_varphi <= 1e-12
        # the two psi conventions coincide identically
        assert rep.psi_vs_grad_h <= 1e-12
        assert rep.psi_primitive <= 1e-12

    def test_discrete_relations_second_order(self):
        res = {"f_vs_grad_log_phi": [], "curl_psi": [], "curl_f": []}
        dxs = []
        for n in (16, 32, 64):
            rep = relation_residuals(to_reform(smooth_2d(n), P), P).as_dict()
            for k in res:
                res[k].append(rep[k])
            dxs.append(1.0 / n)
        # ψ is an exact discrete gradient on a periodic grid, so its mixed differences commute
        assert max(res["curl_psi"]) <= 1e-10
        for k in ("f_vs_grad_log_phi", "curl_f"):
            assert observed_order(dxs, res[k]) == pytest.approx(2.0, abs=0.25), k

    def test_injected_defect_detected(self):
        g = Grid.uniform(1, 64, 2.0, PERIODIC)
        r = to_reform(state_1d(1.0 + 0.3 * np.sin(np.pi * g.coords[0]), g), P)
        psi = r.psi.copy()
        psi[0, 10] += 1.0
        rep = relation_residuals(r.evolve(psi=psi), P)
        assert rep.psi_vs_grad_h == pytest.approx(math.sqrt(g.cell_volume), rel=1e-9)

    def test_f_matches_log_gradient(self):
        r = to_reform(smooth_2d(64), P)
        a = derive_constants(P).a
        rho = from_reform(r, P).rho
        target = a * P.delta * grad(np.log(rho), r.grid)
        assert np.abs(r.f - target).max() < 5e-2 * np.abs(target).max()

    @given(arrays(float, 12, elements=st.floats(0.01, 50.0)), arrays(float, 12, elements=st.floats(0.01, 50.0)))
    def test_monotone_in_density(self, r1, r2):
        g = Grid.uniform(1, 12)
        lo, hi = np.minimum(r1, r2), np.maximum(r1, r2)
        assert np.all(to_reform(state_1d(lo, g), P).phi <= to_reform(state_1d(hi, g), P).phi)


class TestLift:
    def test_lift_shifts_phi_and_rebuilds(self):
        g = Grid.uniform(1, 32, 4.0, FARFIELD)
        r = to_reform(state_1d(np.exp(-g.coords[0] ** 2) + 1e-3, g), P)
        lifted = lift(r, P, 0.1)
        np.testing.assert_allclose(lifted.phi, r.phi + 0.1, rtol=1e-12)
        assert relation_residuals(lifted, P).h_varphi <= 1e-12
