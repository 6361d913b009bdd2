"""Generalized metrics: phi, eigenframes, projections and transfers."""
from __future__ import annotations

import numpy as np
import pytest

from courant_forge.bigtangent import BigOperator, Section, neutral_pairing
from courant_forge.expressions import as_expr, parse
from courant_forge.fields import Chart, TensorField
from courant_forge.genmetric import (
    TRANSFER_FACTOR,
    MetricPair,
    build_generalized_metric,
)
from courant_forge.sampling import sample_envs, scan

R2 = Chart(("x", "y"), ((-1.0, 1.0),) * 2)
ENVS = sample_envs(R2, 25, seed=11)


def make_metric(gamma_rows, psi_rows, chart=R2):
    gamma = TensorField.from_matrix(chart, "twotensor_sym", gamma_rows)
    psi = TensorField.from_matrix(chart, "twoform_antisym", psi_rows)
    return build_generalized_metric(MetricPair(gamma, psi))


CURVED = make_metric([["1", "0"], ["0", "1+x^2"]], [["0", "x*y"], ["-x*y", "0"]])
FLAT = make_metric([["1", "0"], ["0", "1"]], [["0", "0"], ["0", "0"]])


def sec(ventries, fentries, chart=R2):
    return Section(
        TensorField.vector(chart, [parse(e) for e in ventries]),
        TensorField.oneform(chart, [parse(e) for e in fentries]),
    )


def op_residual(op, envs=ENVS):
    return scan(
        lambda env: float(np.abs(op.evaluate(env, {})).max()), envs, op.chart.coord_names
    ).max_residual


def section_residual(s, envs=ENVS):
    return scan(
        lambda env: float(np.abs(s.evaluate(env, {})).max()), envs, s.chart.coord_names
    ).max_residual


class TestMetricPairValidation:
    def test_rejects_indefinite_gamma(self):
        g = TensorField.from_matrix(R2, "twotensor_sym", [["1", "0"], ["0", "-1"]])
        psi = TensorField.zero(R2, "twoform_antisym")
        with pytest.raises(ValueError, match="positive definite"):
            MetricPair(g, psi)

    def test_rejects_wrong_kinds(self):
        g = TensorField.from_matrix(R2, "twotensor_sym", [["1", "0"], ["0", "1"]])
        with pytest.raises(ValueError, match="2-form"):
            MetricPair(g, g)

    def test_flat_sharp_roundtrip(self):
        pair = CURVED.pair
        for sign in (+1, -1):
            prod = pair.flat_pm(sign) @ pair.sharp_pm(sign)
            diff = prod - pair.flat_pm(sign).__class__.identity(2)
            r = scan(lambda env: float(np.abs(diff.evaluate(env, {})).max()), ENVS, R2.coord_names)
            assert r.max_residual <= 1e-12


class TestPhi:
    def test_phi_squares_to_identity(self):
        diff = CURVED.phi.compose(CURVED.phi) - BigOperator.identity(R2)
        assert op_residual(diff) <= 1e-12

    def test_phi_is_plus_one_on_vplus(self):
        for s in CURVED.vplus.sections:
            assert section_residual(CURVED.phi.apply(s) - s) <= 1e-12

    def test_phi_is_minus_one_on_vminus(self):
        for s in CURVED.vminus.sections:
            assert section_residual(CURVED.phi.apply(s) + s) <= 1e-12

    def test_phi_preserves_neutral_pairing(self):
        x = sec(("y", "1"), ("x", "0"))
        y = sec(("1", "x"), ("0", "y"))
        diff = neutral_pairing(CURVED.phi.apply(x), CURVED.phi.apply(y)) - neutral_pairing(x, y)
        r = scan(lambda env: abs(diff.evaluate(env)), ENVS, R2.coord_names)
        assert r.max_residual <= 1e-12

    def test_flat_metric_phi_swaps_slots(self):
        # gamma = identity, psi = 0: phi (X, alpha) = (sharp alpha, flat X)
        val = FLAT.phi.evaluate({"x": 0.0, "y": 0.0})
        expect = np.zeros((4, 4))
        expect[:2, 2:] = np.eye(2)
        expect[2:, :2] = np.eye(2)
        assert np.allclose(val, expect)


class TestBigMetric:
    def test_gram_symmetric_positive_definite(self):
        def check(env):
            gmat = CURVED.big_metric_matrix(env)
            sym = float(np.abs(gmat - gmat.T).max())
            lo = float(np.linalg.eigvalsh((gmat + gmat.T) / 2).min())
            return sym + (0.0 if lo > 1e-12 else 1.0)

        assert scan(check, ENVS, R2.coord_names).max_residual <= 1e-12

    def test_restriction_to_eigenbundles(self):
        # G = +g on V+ and -g on V-
        X = TensorField.vector(R2, [parse("x"), parse("1")])
        Y = TensorField.vector(R2, [parse("y"), parse("x")])
        for sign in (+1, -1):
            a, b = CURVED.embed_pm(X, sign), CURVED.embed_pm(Y, sign)
            diff = CURVED.big_metric(a, b) - as_expr(sign) * neutral_pairing(a, b)
            r = scan(lambda env: abs(diff.evaluate(env)), ENVS, R2.coord_names)
            assert r.max_residual <= 1e-12


class TestTransfer:
    def test_transfer_factor_is_two_gamma(self):
        X = TensorField.vector(R2, [parse("x"), parse("1")])
        Y = TensorField.vector(R2, [parse("y"), parse("x")])
        gamma = CURVED.pair.gamma
        gxy = sum(
            (
                gamma.component(i, j) * X.component(i) * Y.component(j)
                for i in range(2)
                for j in range(2)
            ),
            as_expr(0),
        )
        for sign in (+1, -1):
            lifted = neutral_pairing(CURVED.embed_pm(X, sign), CURVED.embed_pm(Y, sign))
            diff = lifted - as_expr(sign * TRANSFER_FACTOR) * gxy
            r = scan(lambda env: abs(diff.evaluate(env)), ENVS, R2.coord_names)
            assert r.max_residual <= 1e-12

    def test_eigenbundles_are_g_orthogonal(self):
        X = TensorField.vector(R2, [parse("x"), parse("1")])
        Y = TensorField.vector(R2, [parse("y"), parse("x")])
        e = neutral_pairing(CURVED.embed_pm(X, +1), CURVED.embed_pm(Y, -1))
        r = scan(lambda env: abs(e.evaluate(env)), ENVS, R2.coord_names)
        assert r.max_residual <= 1e-12

    def test_tau_pm_roundtrip(self):
        X = TensorField.vector(R2, [parse("1+x"), parse("y")])
        assert CURVED.tau_pm(CURVED.embed_pm(X, +1), +1) is X
        assert CURVED.tau_pm(CURVED.embed_pm(X, -1), -1) is X

    def test_tau_pm_rejects_off_bundle_sections(self):
        bad = sec(("1", "0"), ("0", "0"))
        with pytest.raises(ValueError, match="membership residual"):
            CURVED.tau_pm(bad, +1)


class TestProjections:
    def test_projections_sum_to_identity(self):
        x = sec(("x*y", "1"), ("1+y", "x"))
        back = (CURVED.project_pm(x, +1) + CURVED.project_pm(x, -1)) - x
        assert section_residual(back) <= 1e-12

    def test_projection_matches_closed_form_decomposition(self):
        x = sec(("x*y", "1"), ("1+y", "x"))
        plus, minus = CURVED.decompose(x)
        assert section_residual(CURVED.project_pm(x, +1) - plus) <= 1e-12
        assert section_residual(CURVED.project_pm(x, -1) - minus) <= 1e-12

    def test_projections_land_in_eigenbundles(self):
        x = sec(("x*y", "1"), ("1+y", "x"))
        plus, minus = CURVED.decompose(x)
        # tau_pm accepts them, so the membership residual is below tolerance
        CURVED.tau_pm(plus, +1)
        CURVED.tau_pm(minus, -1)

    def test_projections_are_big_metric_orthogonal(self):
        x = sec(("x*y", "1"), ("1+y", "x"))
        y = sec(("y", "x^2"), ("0", "1"))
        e = CURVED.big_metric(CURVED.project_pm(x, +1), CURVED.project_pm(y, -1))
        r = scan(lambda env: abs(e.evaluate(env)), ENVS, R2.coord_names)
        assert r.max_residual <= 1e-12

    def test_frames_have_full_rank(self):
        assert CURVED.vplus.rank_residuals(ENVS).max_residual <= 1e-12
        assert CURVED.vminus.rank_residuals(ENVS).max_residual <= 1e-12
