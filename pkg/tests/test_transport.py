"""Transport steps against characteristic oracles, closed forms and structural properties."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnslab import FARFIELD, PERIODIC, Grid, Params
from dnslab.errors import CFLError, PositivityError
from dnslab.ops import grad
from dnslab.params import derive_constants
from dnslab.studies import transport_order_study
from dnslab.transport import (
    SEMI_LAGRANGIAN,
    UPWIND1,
    UPWIND2,
    TransportScheme,
    advance_f,
    advance_h,
    advance_phi,
    advance_psi,
    advance_varphi,
    at,
    characteristic_oracle,
    check_cfl,
    transport_step,
)

U1, U2, SL = TransportScheme(UPWIND1), TransportScheme(UPWIND2), TransportScheme(SEMI_LAGRANGIAN)


def linear_flow(n):
    g = Grid.uniform(1, n, 2.0, FARFIELD)
    return g, g.coords[0][None].copy()


def march(step, f, nsteps):
    for _ in range(nsteps):
        f = step(f)
    return f


class TestScheme:
    def test_unknown_method(self):
        with pytest.raises(ValueError):
            TransportScheme("Lax")

    @pytest.mark.parametrize("cfl", [0.0, 1.5])
    def test_bad_cfl(self, cfl):
        with pytest.raises(ValueError):
            TransportScheme(UPWIND1, cfl)

    def test_limits(self):
        assert U1.courant_limit == 0.9
        assert U2.courant_limit == 0.5
        assert SL.courant_limit == 0.9  # reported but never enforced

    def test_cfl_violation_aborts(self):
        g = Grid.uniform(1, 16)
        v = np.ones((1, 16))
        with pytest.raises(CFLError, match="Courant"):
            advance_phi(np.ones(16), v, 0.1, 2.0, g, U2)
        check_cfl(v, 0.03, g, U2)
        check_cfl(v, 10.0, g, SL)

    def test_at_interpolates(self):
        assert at((1.0, 3.0), 0.25) == 1.5
        assert at(7.0, 0.3) == 7.0


class TestTrivialCases:
    @pytest.mark.parametrize("scheme", [U1, U2, SL])
    def test_zero_step_is_identity(self, scheme):
        g = Grid.uniform(1, 16)
        f = 1.0 + np.random.default_rng(0).random(16)
        v = np.ones((1, 16))
        np.testing.assert_array_equal(advance_phi(f, v, 0.0, 2.0, g, scheme), f)
        np.testing.assert_array_equal(advance_h(f, v, f, 0.0, 0.5, g, scheme), f)

    def test_h_with_zero_g_is_pure_transport(self):
        g = Grid.uniform(1, 32)
        x = g.coords[0]
        h0 = 1.5 + np.sin(2 * np.pi * x)
        v = (0.3 + 0.2 * np.cos(2 * np.pi * x))[None]
        np.testing.assert_allclose(advance_h(h0, v, np.zeros(32), 0.01, 0.5, g, U2), transport_step(h0, v, 0.01, g, U2), rtol=1e-14)

    def test_h_with_zero_velocity_unchanged(self):
        g = Grid.uniform(1, 32)
        h0 = 1.0 + g.coords[0]
        np.testing.assert_array_equal(advance_h(h0, np.zeros((1, 32)), h0, 0.01, 0.5, g, U2), h0)

    def test_varphi_divergence_free_is_pure_transport(self):
        g = Grid.uniform(1, 32)
        x = g.coords[0]
        vp = 2.0 + np.cos(2 * np.pi * x)
        v = np.full((1, 32), 0.7)
        np.testing.assert_allclose(advance_varphi(vp, v, vp, 0.01, 0.5, g, U2), transport_step(vp, v, 0.01, g, U2), rtol=1e-14)

    def test_psi_constant_coefficients_pure_advection(self):
        g = Grid.uniform(2, 16)
        x, y = g.coords
        psi = np.stack([np.sin(2 * np.pi * x), np.cos(2 * np.pi * y)])
        v = np.stack([np.full(g.shape, 0.4), np.full(g.shape, -0.3)])
        out = advance_psi(psi, v, np.full(g.shape, 2.0), 0.01, 1.3, 0.5, g, U2)
        np.testing.assert_allclose(out, transport_step(psi, v, 0.01, g, U2), atol=1e-14)

    def test_f_zero_stays_zero(self):
        g = Grid.uniform(2, 16)
        v = np.stack([np.full(g.shape, 0.4), np.full(g.shape, -0.3)])
        one = np.ones(g.shape)
        out = advance_f(np.zeros((2, *g.shape)), v, one, one, 0.01, 1.3, 0.5, g, U2)
        assert np.array_equal(out, np.zeros_like(out))


class TestLinearFlowClosedForms:
    """v = x on [-1, 1]: both ends are outflow, constants stay spatially uniform."""

    def test_phi_exponential_decay(self):
        g, v = linear_flow(64)
        dt, n = 0.005, 40
        phi = march(lambda f: advance_phi(f, v, dt, 2.0, g, U2), np.ones(64), n)
        np.testing.assert_allclose(phi, math.exp(-(2.0 - 1) * n * dt), rtol=1e-13)

    def test_h_linear_growth(self):
        g, v = linear_flow(64)
        dt, n = 0.005, 40
        h = march(lambda f: advance_h(f, v, np.ones(64), dt, 0.5, g, U2), np.ones(64), n)
        np.testing.assert_allclose(h, 1 + 0.5 * n * dt, rtol=1e-13)

    def test_varphi_rational(self):
        g, v = linear_flow(64)
        dt, n = 0.005, 40
        vp = march(lambda f: advance_varphi(f, v, np.ones(64), dt, 0.5, g, U2), np.ones(64), n)
        np.testing.assert_allclose(vp, 1 / (1 + 0.5 * n * dt), rtol=1e-13)

    def test_varphi_blowup_detected(self):
        g, v = linear_flow(16)
        with pytest.raises(PositivityError):
            advance_varphi(np.full(16, 1e3), -v, np.ones(16), 0.05, 0.5, g, U2)


class TestOracle:
    def test_constant_velocity(self):
        pts = np.linspace(-1, 1, 9)[None]
        res = characteristic_oracle("advect", lambda X: np.sin(X[0]), lambda s, X: np.full_like(X, 0.7), 0.5, pts)
        np.testing.assert_allclose(res.values, np.sin(pts[0] - 0.35), rtol=1e-9)
        np.testing.assert_allclose(res.origins[0], pts[0] - 0.35, atol=1e-10)

    def test_linear_velocity_phi(self):
        pts = np.linspace(-1, 1, 7)[None]
        t, gamma = 0.3, 1.7
        res = characteristic_oracle(
            "phi", lambda X: 1 + X[0] ** 2, lambda s, X: X, t, pts, div_v=lambda s, X: np.ones(X.shape[1]), gamma=gamma
        )
        x0 = pts[0] * math.exp(-t)
        np.testing.assert_allclose(res.values, (1 + x0**2) * math.exp(-(gamma - 1) * t), rtol=1e-9)

    def test_linear_velocity_varphi(self):
        pts = np.zeros((1, 1))
        one = lambda s, X: np.ones(X.shape[1])
        for t in (0.1, 0.5, 1.0):
            res = characteristic_oracle("varphi", lambda X: np.ones(X.shape[1]), lambda s, X: X, t, pts, div_v=one, g=one, delta=0.5)
            assert res.values[0] == pytest.approx(1 / (1 + 0.5 * t), rel=1e-10)

    def test_left_domain_uses_boundary_value(self):
        pts = np.array([[-0.9, 0.0, 0.9]])
        res = characteristic_oracle(
            "advect", lambda X: np.ones(X.shape[1]), lambda s, X: np.ones_like(X), 0.5, pts,
            domain=([-1.0], [1.0]), boundary_value=lambda X: np.full(X.shape[1], -5.0),
        )
        assert list(res.left_domain) == [True, False, False]
        assert list(res.values) == [-5.0, 1.0, 1.0]

    def test_missing_coefficients(self):
        with pytest.raises(ValueError):
            characteristic_oracle("phi", lambda X: X[0], lambda s, X: X, 0.1, np.zeros((1, 1)))


class TestOrders:
    @pytest.mark.parametrize("case", ["constant", "linear", "h_linear", "varphi_linear"])
    def test_upwind1(self, case):
        assert transport_order_study(UPWIND1, case, (64, 128, 256, 512)).order >= 0.9

    @pytest.mark.parametrize("case", ["constant", "linear", "h_linear", "varphi_linear"])
    def test_upwind2(self, case):
        assert transport_order_study(UPWIND2, case, (32, 64, 128, 256)).order >= 1.8

    def test_semi_lagrangian_beats_second_order(self):
        assert transport_order_study(SEMI_LAGRANGIAN, "constant", (32, 64, 128, 256)).order >= 2.5


def _smooth_2d(n):
    g = Grid.uniform(2, n, 1.0, PERIODIC)
    x, y = g.coords
    s = lambda k: np.sin(2 * np.pi * k)
    c = lambda k: np.cos(2 * np.pi * k)
    v = np.stack([0.5 + 0.2 * s(y), -0.3 + 0.2 * c(x) * s(y)])
    h0 = 1.0 + 0.3 * s(x) * c(y)
    return g, v, h0


class TestCompatibility:
    P = Params(gamma=2.0, delta=0.5, dim=2)

    def _run(self, n, scheme, grouping="split", T=0.05):
        g, v, h0 = _smooth_2d(n)
        a, delta = derive_constants(self.P).a, self.P.delta
        k = a * delta / (delta - 1)
        psi, h = k * grad(h0, g), h0.copy()
        steps = int(round(T * n / 0.25))
        dt = T / steps
        for _ in range(steps):
            psi = advance_psi(psi, v, h, dt, a, delta, g, scheme, grouping)
            h = advance_h(h, v, h, dt, delta, g, scheme)
        return g, psi, h, k

    def test_gradient_compatibility_second_order(self):
        errs, dxs = [], []
        for n in (16, 32, 64):
            g, psi, h, k = self._run(n, U2)
            errs.append(math.sqrt(g.integrate(np.sum((psi - k * grad(h, g)) ** 2, axis=0))))
            dxs.append(g.dx)
        assert np.polyfit(np.log(dxs), np.log(errs), 1)[0] >= 1.5

    def test_groupings_agree_to_discretization_error(self):
        diffs = []
        for n in (16, 32, 64):
            g, p1, _, _ = self._run(n, U2, "split")
            _, p2, _, _ = self._run(n, U2, "product")
            diffs.append(np.abs(p1 - p2).max())
        assert diffs[1] < diffs[0] / 3 and diffs[2] < diffs[1] / 3

    def test_f_track_matches_psi_times_varphi(self):
        delta = 0.5
        diffs = []
        for n in (16, 32, 64):
            g, v, h0 = _smooth_2d(n)
            a = 1.2
            psi = a * delta / (delta - 1) * grad(h0, g)
            vp = 1.0 / h0
            f = psi * vp
            gcoef = h0
            dt = 0.25 / n
            for _ in range(n // 5):
                vp_new = advance_varphi(vp, v, gcoef, dt, delta, g, U2)
                f = advance_f(f, v, gcoef, (vp, vp_new), dt, a, delta, g, U2)
                psi = advance_psi(psi, v, gcoef, dt, a, delta, g, U2)
                vp = vp_new
            diffs.append(np.abs(f - psi * vp).max())
        assert diffs[2] < diffs[1] < diffs[0]
        assert diffs[2] < diffs[0] / 3


phases = st.floats(0, 2 * math.pi)


class TestProperties:
    @given(st.integers(0, 2**31 - 1), phases, st.floats(-1, 1), st.sampled_from([PERIODIC, FARFIELD]))
    def test_maximum_principle_upwind1(self, seed, ph, vmean, boundary):
        rng = np.random.default_rng(seed)
        g = Grid.uniform(2, 12, 1.0, boundary)
        x, y = g.coords
        f0 = rng.uniform(-1, 1, g.shape)
        v = np.stack([vmean + np.sin(2 * np.pi * x + ph), np.cos(2 * np.pi * y - ph)])
        dt = U1.courant_limit * 0.99 / (np.abs(v[0]).max() / g.dx + np.abs(v[1]).max() / g.dx)
        f = transport_step(f0, v, dt, g, U1)
        assert f.min() >= f0.min() - 1e-12 and f.max() <= f0.max() + 1e-12

    @given(phases, st.floats(0.1, 1.0), st.floats(1.1, 3.0))
    def test_phi_positivity_bound(self, ph, amp, gamma):
        g = Grid.uniform(1, 128)
        x = g.coords[0]
        v = (amp * np.sin(2 * np.pi * x + ph))[None]
        div_max = 2 * np.pi * amp
        phi0 = 1.0 + 0.5 * np.cos(2 * np.pi * x)
        T, steps = 0.05, 25
        phi = march(lambda f: advance_phi(f, v, T / steps, gamma, g, U2), phi0, steps)
        assert phi.min() >= phi0.min() * math.exp(-(gamma - 1) * T * div_max) - 2 * g.dx

    @given(st.integers(0, 2**31 - 1))
    def test_linear_in_advected_field(self, seed):
        rng = np.random.default_rng(seed)
        g = Grid.uniform(1, 16, 2.0, FARFIELD)
        v = rng.uniform(-1, 1, (1, 16))
        a, b = rng.standard_normal((2, 16))
        lhs = transport_step(a + 2 * b, v, 0.05, g, U2)
        rhs = transport_step(a, v, 0.05, g, U2) + 2 * transport_step(b, v, 0.05, g, U2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
