"""Connections: D+/-, the canonical big connection, torsions and curvatures."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from courant_forge.bigtangent import (
    Section,
    courant_bracket,
    membership_residual,
    neutral_pairing,
    tensoriality_check,
)
from courant_forge.connections import (
    build_dpm,
    big_curvature,
    canonical_connection,
    courant_torsion,
    gen_curvature,
    generalized_lc,
    gualtieri_torsion,
    levi_civita,
    modified_bracket,
)
from courant_forge.expressions import add, is_zero, mul, parse, sub
from courant_forge.fields import (
    Chart,
    TensorField,
    apply_vector,
    exterior_derivative,
    interior_product,
    lie_bracket,
    lie_derivative,
    musical,
)
from courant_forge.genmetric import MetricPair, build_generalized_metric
from courant_forge.matrices import ExprMatrix
from courant_forge.sampling import sample_envs, scan

R2 = Chart(("x", "y"), ((-1.0, 1.0),) * 2)
R3 = Chart(("x", "y", "z"), ((-1.0, 1.0),) * 3)
R4 = Chart(("x1", "x2", "x3", "x4"), ((-1.0, 1.0),) * 4)
ENVS2 = sample_envs(R2, 25, seed=11)
ENVS3 = sample_envs(R3, 25, seed=11)


def make_pair(chart, gamma_rows, psi_rows):
    gamma = TensorField.from_matrix(chart, "twotensor_sym", gamma_rows)
    psi = TensorField.from_matrix(chart, "twoform_antisym", psi_rows)
    return MetricPair(gamma, psi)


# gamma = diag(1, x^2+1), psi = 0: the two-dimensional curvature workhorse
CURVED2 = make_pair(R2, [["1", "0"], ["0", "x^2+1"]], [["0", "0"], ["0", "0"]])
# flat gamma with a non-closed psi: every torsion value is an integer
FLAT3 = make_pair(
    R3,
    [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]],
    [["0", "z", "0"], ["-z", "0", "0"], ["0", "0", "0"]],
)
# curved gamma and non-closed psi together
TWIST3 = make_pair(
    R3,
    [["1", "0", "0"], ["0", "1+x^2", "0"], ["0", "0", "1"]],
    [["0", "z", "0"], ["-z", "0", "0"], ["0", "0", "0"]],
)
GM3 = build_generalized_metric(TWIST3)
CANON3 = canonical_connection(GM3)
DLC3 = generalized_lc(GM3)


def vec(chart, entries):
    return TensorField.vector(chart, [parse(e) for e in entries])


def sec(chart, ventries, fentries):
    return Section(
        TensorField.vector(chart, [parse(e) for e in ventries]),
        TensorField.oneform(chart, [parse(e) for e in fentries]),
    )


X3 = vec(R3, ["y", "x*z", "1"])
Y3 = vec(R3, ["sin(x)", "1", "x*y"])
Z3 = vec(R3, ["1", "z", "x"])
SX3 = sec(R3, ["y", "x*z", "1"], ["x*y", "1", "0"])
SY3 = sec(R3, ["sin(x)", "1", "x*y"], ["0", "z", "x"])
SZ3 = sec(R3, ["1", "z", "x"], ["1", "0", "y"])


def expr_max(e, envs):
    if is_zero(e):
        return 0.0
    return scan(lambda env: abs(e.evaluate(env)), envs, tuple(envs[0])).max_residual


def field_max(t, envs):
    return scan(
        lambda env: float(np.abs(np.atleast_1d(t.evaluate(env, {}))).max()),
        envs,
        t.chart.coord_names,
    ).max_residual


def sec_max(s, envs):
    return scan(
        lambda env: float(np.abs(s.evaluate(env, {})).max()), envs, s.chart.coord_names
    ).max_residual


def gvalue(gamma, x, y):
    """gamma(X, Y) as a scalar expression."""
    return interior_product(y, musical(gamma, "flat", x)).component()


def three_eval(omega, x, y, z):
    """omega(X, Y, Z) for a 3-form."""
    return interior_product(z, interior_product(y, interior_product(x, omega))).component()


def lift(gm, v, sign):
    return gm.embed_pm(v, sign)


class TestLeviCivita:
    def test_flat_metric_has_zero_symbols(self):
        pair = make_pair(
            R3,
            [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]],
            [["0", "0", "0"], ["0", "0", "0"], ["0", "0", "0"]],
        )
        lc = levi_civita(pair)
        assert all(
            is_zero(lc.symbol(k, i, j)) for k in range(3) for i in range(3) for j in range(3)
        )

    def test_curved_example_symbols(self):
        lc = levi_civita(CURVED2)
        r1 = expr_max(sub(lc.symbol(1, 0, 1), parse("x / (x^2+1)")), ENVS2)
        r2 = expr_max(sub(lc.symbol(0, 1, 1), parse("-x")), ENVS2)
        assert r1 <= 1e-12 and r2 <= 1e-12

    def test_symbols_symmetric_in_lower_indices(self):
        lc = levi_civita(TWIST3)
        worst = max(
            expr_max(sub(lc.symbol(k, i, j), lc.symbol(k, j, i)), ENVS3[:8])
            for k in range(3)
            for i in range(3)
            for j in range(i + 1, 3)
        )
        assert worst <= 1e-12

    def test_torsion_vanishes_on_fields(self):
        lc = levi_civita(TWIST3)
        assert field_max(lc.torsion(X3, Y3), ENVS3) <= 1e-12

    def test_metric_compatibility(self):
        lc = levi_civita(CURVED2)
        x = vec(R2, ["y", "x"])
        y = vec(R2, ["1", "x*y"])
        z = vec(R2, ["x", "1"])
        lhs = apply_vector(x, gvalue(CURVED2.gamma, y, z))
        rhs = add(
            gvalue(CURVED2.gamma, lc.apply(x, y), z),
            gvalue(CURVED2.gamma, y, lc.apply(x, z)),
        )
        assert expr_max(sub(lhs, rhs), ENVS2) <= 1e-12


class TestDpm:
    @pytest.mark.parametrize("sign", [+1, -1])
    def test_torsion_pairs_with_dpsi(self, sign):
        conn = build_dpm(TWIST3, sign)
        dpsi = TWIST3.dpsi()
        worst = 0.0
        for x, y, z in [(X3, Y3, Z3), (Y3, Z3, X3)]:
            lhs = gvalue(TWIST3.gamma, conn.torsion(x, y), z)
            rhs = three_eval(dpsi, x, y, z)
            diff = sub(lhs, mul(parse(str(sign)), rhs))
            worst = max(worst, expr_max(diff, ENVS3))
        assert worst <= 1e-12

    def test_coordinate_torsion_value(self):
        conn = build_dpm(FLAT3, +1)
        dx, dy, dz = (vec(R3, [str(int(i == j)) for j in range(3)]) for i in range(3))
        val = gvalue(FLAT3.gamma, conn.torsion(dx, dy), dz)
        assert expr_max(sub(val, parse("1")), ENVS3) <= 1e-12

    @pytest.mark.parametrize("sign", [+1, -1])
    def test_closed_psi_reduces_to_levi_civita(self, sign):
        lc = levi_civita(CURVED2)
        conn = build_dpm(CURVED2, sign)
        worst = max(
            expr_max(sub(conn.symbol(k, i, j), lc.symbol(k, i, j)), ENVS2[:8])
            for k in range(2)
            for i in range(2)
            for j in range(2)
        )
        assert worst <= 1e-12

    @pytest.mark.parametrize("sign", [+1, -1])
    def test_metric_compatibility(self, sign):
        conn = build_dpm(TWIST3, sign)
        lhs = apply_vector(X3, gvalue(TWIST3.gamma, Y3, Z3))
        rhs = add(
            gvalue(TWIST3.gamma, conn.apply(X3, Y3), Z3),
            gvalue(TWIST3.gamma, Y3, conn.apply(X3, Z3)),
        )
        assert expr_max(sub(lhs, rhs), ENVS3) <= 1e-12


class TestCanonicalConnection:
    def test_acts_by_dpm_on_graph_sections(self):
        for sign, conn in ((+1, CANON3.dplus), (-1, CANON3.dminus)):
            moved = CANON3.derivative_along(X3, lift(GM3, Y3, sign))
            expected = lift(GM3, conn.apply(X3, Y3), sign)
            assert sec_max(moved - expected, ENVS3) <= 1e-12

    @pytest.mark.parametrize("sign", [+1, -1])
    def test_preserves_eigenbundles(self, sign):
        frame = GM3.vplus if sign == +1 else GM3.vminus
        moved = CANON3.derivative_along(X3, lift(GM3, Y3, sign))
        assert membership_residual(frame, moved, ENVS3[:10]).max_residual <= 1e-9

    def test_neutral_metric_compatibility(self):
        lhs = apply_vector(X3, neutral_pairing(SY3, SZ3))
        rhs = add(
            neutral_pairing(CANON3.derivative_along(X3, SY3), SZ3),
            neutral_pairing(SY3, CANON3.derivative_along(X3, SZ3)),
        )
        assert expr_max(sub(lhs, rhs), ENVS3) <= 1e-12

    def test_big_metric_compatibility(self):
        lhs = apply_vector(X3, GM3.big_metric(SY3, SZ3))
        rhs = add(
            GM3.big_metric(CANON3.derivative_along(X3, SY3), SZ3),
            GM3.big_metric(SY3, CANON3.derivative_along(X3, SZ3)),
        )
        assert expr_max(sub(lhs, rhs), ENVS3) <= 1e-12

    def test_accepts_plain_pair(self):
        conn = canonical_connection(TWIST3)
        diff = conn.derivative(SX3, SY3) - CANON3.derivative(SX3, SY3)
        assert sec_max(diff, ENVS3[:8]) <= 1e-12


class TestGraphBracketFormulas:
    @pytest.mark.parametrize("sign", [+1, -1])
    def test_same_side_bracket(self, sign):
        """Graph brackets close up to the dpsi term and a Lie-derivative pair."""
        dpsi = TWIST3.dpsi()
        got = courant_bracket(lift(GM3, X3, sign), lift(GM3, Y3, sign))
        bxy = lie_bracket(X3, Y3)
        lie_pair = lie_derivative(X3, musical(TWIST3.gamma, "flat", Y3)) - musical(
            lie_derivative(Y3, TWIST3.gamma), "flat", X3
        )
        form = TensorField.oneform(
            R3, TWIST3.flat_pm(sign).apply([bxy.component(i) for i in range(3)])
        )
        form = form + interior_product(Y3, interior_product(X3, dpsi))
        form = form + lie_pair.scale(sign)
        assert sec_max(got - Section(bxy, form), ENVS3) <= 1e-11

    def test_mixed_bracket(self):
        """Opposite graphs bracket to the psi-graph of the Lie bracket plus corrections."""
        dpsi = TWIST3.dpsi()
        got = courant_bracket(lift(GM3, X3, +1), lift(GM3, Y3, -1))
        bxy = lie_bracket(X3, Y3)
        form = musical(TWIST3.psi, "flat", bxy)
        form = form + interior_product(Y3, interior_product(X3, dpsi))
        form = form - lie_derivative(X3, musical(TWIST3.gamma, "flat", Y3))
        form = form - lie_derivative(Y3, musical(TWIST3.gamma, "flat", X3))
        form = form + exterior_derivative(
            TensorField.scalar(R3, gvalue(TWIST3.gamma, X3, Y3))
        )
        assert sec_max(got - Section(bxy, form), ENVS3) <= 1e-11


class TestCourantTorsion:
    def test_mixed_graph_sections_give_zero(self):
        tors = courant_torsion(CANON3, lift(GM3, X3, +1), lift(GM3, Y3, -1))
        assert sec_max(tors, ENVS3) <= 1e-12

    @pytest.mark.parametrize("sign", [+1, -1])
    def test_same_side_projections(self, sign):
        """TM part is the D+- torsion; the form part keeps the bracket corrections."""
        dpsi = TWIST3.dpsi()
        tors = courant_torsion(CANON3, lift(GM3, X3, sign), lift(GM3, Y3, sign))
        dconn = CANON3.dplus if sign == +1 else CANON3.dminus
        td = dconn.torsion(X3, Y3)
        assert field_max(tors.vec - td, ENVS3) <= 1e-12
        assert field_max(
            tors.vec - musical(TWIST3.gamma, "sharp", interior_product(Y3, interior_product(X3, dpsi))).scale(sign),
            ENVS3,
        ) <= 1e-12
        lie_pair = lie_derivative(X3, musical(TWIST3.gamma, "flat", Y3)) - musical(
            lie_derivative(Y3, TWIST3.gamma), "flat", X3
        )
        expected_form = TensorField.oneform(
            R3, TWIST3.flat_pm(sign).apply([td.component(i) for i in range(3)])
        )
        expected_form = expected_form - (
            interior_product(Y3, interior_product(X3, dpsi)) + lie_pair.scale(sign)
        )
        assert field_max(tors.form - expected_form, ENVS3) <= 1e-11

    def test_coordinate_projection_value(self):
        gm = build_generalized_metric(FLAT3)
        conn = canonical_connection(gm)
        dx = vec(R3, ["1", "0", "0"])
        dy = vec(R3, ["0", "1", "0"])
        tors = courant_torsion(conn, lift(gm, dx, +1), lift(gm, dy, +1))
        expected = vec(R3, ["0", "0", "1"])
        assert field_max(tors.vec - expected, ENVS3) <= 1e-12

    def test_flat_coordinate_sections_give_zero(self):
        pair = make_pair(
            R2, [["1", "0"], ["0", "1"]], [["0", "0"], ["0", "0"]]
        )
        conn = canonical_connection(pair)
        basis = Section.basis(R2)
        worst = max(
            sec_max(courant_torsion(conn, a, b), ENVS2[:6]) for a in basis for b in basis
        )
        assert worst == 0.0

    def test_not_tensorial(self):
        def t(a, b, c):
            return neutral_pairing(courant_torsion(CANON3, a, b), c)

        report = tensoriality_check(t, (SX3, SY3, SZ3), ENVS3[:8])
        assert max(r.max_residual for r in report.values()) > 0.1


class TestGualtieriTorsion:
    @pytest.mark.parametrize("sign", [+1, -1])
    def test_same_side_equals_twice_dpsi(self, sign):
        dpsi = TWIST3.dpsi()
        got = gualtieri_torsion(
            CANON3, lift(GM3, X3, sign), lift(GM3, Y3, sign), lift(GM3, Z3, sign)
        )
        want = mul(parse("2"), three_eval(dpsi, X3, Y3, Z3))
        assert expr_max(sub(got, want), ENVS3) <= 1e-11

    def test_coordinate_value_is_two(self):
        gm = build_generalized_metric(FLAT3)
        conn = canonical_connection(gm)
        lifts = [lift(gm, vec(R3, [str(int(i == j)) for j in range(3)]), +1) for i in range(3)]
        got = gualtieri_torsion(conn, *lifts)
        assert expr_max(sub(got, parse("2")), ENVS3) <= 1e-12

    def test_mixed_patterns_vanish(self):
        xp, yp = lift(GM3, X3, +1), lift(GM3, Y3, +1)
        xm, ym = lift(GM3, X3, -1), lift(GM3, Y3, -1)
        zp, zm = lift(GM3, Z3, +1), lift(GM3, Z3, -1)
        worst = max(
            expr_max(gualtieri_torsion(CANON3, *args), ENVS3)
            for args in [(xp, ym, zp), (xp, ym, zm), (xp, yp, zm), (xm, ym, zp)]
        )
        assert worst <= 1e-12

    def test_totally_antisymmetric(self):
        base = gualtieri_torsion(CANON3, SX3, SY3, SZ3)
        flips = [
            gualtieri_torsion(CANON3, SY3, SX3, SZ3),
            gualtieri_torsion(CANON3, SX3, SZ3, SY3),
            gualtieri_torsion(CANON3, SZ3, SY3, SX3),
        ]
        worst = max(expr_max(add(base, f), ENVS3) for f in flips)
        assert worst <= 1e-11

    def test_tensorial_in_every_slot(self):
        def t(a, b, c):
            return gualtieri_torsion(CANON3, a, b, c)

        report = tensoriality_check(t, (SX3, SY3, SZ3), ENVS3[:8])
        assert max(r.max_residual for r in report.values()) <= 1e-9

    def test_closed_psi_gives_zero(self):
        conn = canonical_connection(CURVED2)
        a = sec(R2, ["y", "x"], ["x*y", "1"])
        b = sec(R2, ["1", "x"], ["0", "y"])
        c = sec(R2, ["x", "y"], ["1", "x"])
        assert expr_max(gualtieri_torsion(conn, a, b, c), ENVS2) <= 1e-12


class TestGeneralizedLeviCivita:
    def test_descriptor_forms_are_plus_minus_dpsi(self):
        dpsi = TWIST3.dpsi()
        assert field_max(DLC3.xi_plus - dpsi, ENVS3[:6]) == 0.0
        assert field_max(DLC3.xi_minus + dpsi, ENVS3[:6]) == 0.0

    def test_descriptor_antisymmetric_in_first_two_slots(self):
        worst = max(
            expr_max(add(three_eval(xi, X3, Y3, Z3), three_eval(xi, Y3, X3, Z3)), ENVS3[:8])
            for xi in (DLC3.xi_plus, DLC3.xi_minus)
        )
        assert worst <= 1e-12

    def test_accepts_plain_pair(self):
        dlc = generalized_lc(TWIST3)
        diff = dlc.derivative(SX3, SY3) - DLC3.derivative(SX3, SY3)
        assert sec_max(diff, ENVS3[:8]) <= 1e-12

    def test_neutral_metric_compatibility(self):
        lhs = apply_vector(X3, neutral_pairing(SY3, SZ3))
        sx = Section(X3, TensorField.zero(R3, "oneform"))
        rhs = add(
            neutral_pairing(DLC3.derivative(sx, SY3), SZ3),
            neutral_pairing(SY3, DLC3.derivative(sx, SZ3)),
        )
        assert expr_max(sub(lhs, rhs), ENVS3) <= 1e-12

    def test_plain_lc_triple_torsion_is_minus_dpsi(self):
        dpsi = TWIST3.dpsi()
        lc_big = DLC3.nabla
        got = gualtieri_torsion(lc_big, SX3, SY3, SZ3)
        want = three_eval(dpsi, SX3.vec, SY3.vec, SZ3.vec)
        assert expr_max(add(got, want), ENVS3) <= 1e-11

    @pytest.mark.parametrize("sign", [+1, -1])
    def test_same_side_torsion_display(self, sign):
        dpsi = TWIST3.dpsi()
        args = [lift(GM3, v, sign) for v in (X3, Y3, Z3)]
        got = gualtieri_torsion(DLC3, *args)
        base = gualtieri_torsion(DLC3.nabla, *args)
        want = add(base, mul(parse(str(3 * sign)), three_eval(dpsi, X3, Y3, Z3)))
        assert expr_max(sub(got, want), ENVS3) <= 1e-11

    @pytest.mark.parametrize("sign", [+1, -1])
    def test_mixed_torsion_display(self, sign):
        dpsi = TWIST3.dpsi()
        args = [lift(GM3, X3, sign), lift(GM3, Y3, sign), lift(GM3, Z3, -sign)]
        got = gualtieri_torsion(DLC3, *args)
        base = gualtieri_torsion(DLC3.nabla, *args)
        moved = TWIST3.sharp_pm(sign).apply(
            TWIST3.flat_pm(-sign).apply([Z3.component(i) for i in range(3)])
        )
        zmoved = TensorField.vector(R3, moved)
        want = add(base, mul(parse(str(sign)), three_eval(dpsi, X3, Y3, zmoved)))
        assert expr_max(sub(got, want), ENVS3) <= 1e-11

    def test_coordinate_graph_torsion_value(self):
        gm = build_generalized_metric(FLAT3)
        dlc = generalized_lc(gm)
        lifts = [lift(gm, vec(R3, [str(int(i == j)) for j in range(3)]), +1) for i in range(3)]
        got = gualtieri_torsion(dlc, *lifts)
        assert expr_max(sub(got, parse("2")), ENVS3) <= 1e-12

    def test_closed_psi_reduces_to_plain_lc(self):
        dlc = generalized_lc(CURVED2)
        a = sec(R2, ["y", "x"], ["x*y", "1"])
        b = sec(R2, ["1", "x"], ["0", "y"])
        c = sec(R2, ["x", "y"], ["1", "x"])
        diff = dlc.derivative(a, b) - dlc.nabla.derivative(a, b)
        assert sec_max(diff, ENVS2) == 0.0
        assert expr_max(gualtieri_torsion(dlc, a, b, c), ENVS2) <= 1e-12


class TestModifiedBracket:
    def test_defining_pairing(self):
        got = modified_bracket(DLC3, SX3, SY3)
        plain = courant_bracket(SX3, SY3)
        half = parse("1/2")
        for z in [SZ3, sec(R3, ["0", "x", "1"], ["y", "0", "z"])]:
            lhs = neutral_pairing(got, z)
            rhs = sub(
                neutral_pairing(plain, z),
                mul(
                    half,
                    sub(
                        neutral_pairing(DLC3.derivative(z, SX3), SY3),
                        neutral_pairing(DLC3.derivative(z, SY3), SX3),
                    ),
                ),
            )
            assert expr_max(sub(lhs, rhs), ENVS3) <= 1e-11

    def test_mixed_graph_sections_unchanged(self):
        xp, ym = lift(GM3, X3, +1), lift(GM3, Y3, -1)
        diff = modified_bracket(DLC3, xp, ym) - courant_bracket(xp, ym)
        assert sec_max(diff, ENVS3) <= 1e-12

    def test_torsion_consistency(self):
        got = gualtieri_torsion(DLC3, SX3, SY3, SZ3)
        direct = neutral_pairing(
            DLC3.derivative(SX3, SY3)
            - DLC3.derivative(SY3, SX3)
            - modified_bracket(DLC3, SX3, SY3),
            SZ3,
        )
        assert expr_max(sub(got, direct), ENVS3) <= 1e-11

    def test_flat_coordinate_data_vanishes(self):
        pair = make_pair(R2, [["1", "0"], ["0", "1"]], [["0", "0"], ["0", "0"]])
        dlc = generalized_lc(pair)
        basis = Section.basis(R2)
        assert sec_max(modified_bracket(dlc, basis[0], basis[3]), ENVS2[:6]) == 0.0


class TestCurvature:
    def test_big_curvature_matches_eigenblock(self):
        gm = build_generalized_metric(CURVED2)
        conn = canonical_connection(gm)
        lc = levi_civita(CURVED2)
        dx = vec(R2, ["1", "0"])
        dy = vec(R2, ["0", "1"])
        w = vec(R2, ["y", "x"])
        for sign in (+1, -1):
            got = big_curvature(conn, dx, dy, lift(gm, w, sign))
            want = lift(gm, lc.curvature(dx, dy, w), sign)
            assert sec_max(got - want, ENVS2) <= 1e-9

    @pytest.mark.parametrize("sign", [+1, -1])
    def test_big_curvature_eigenblock_curved_twist(self, sign):
        dconn = CANON3.dplus if sign == +1 else CANON3.dminus
        got = big_curvature(CANON3, X3, Y3, lift(GM3, Z3, sign))
        want = lift(GM3, dconn.curvature(X3, Y3, Z3), sign)
        assert sec_max(got - want, ENVS3[:10]) <= 1e-9

    def test_gen_curvature_tensorial_in_directions(self):
        probe = Section.basis(R3)[4]

        def t(a, b, c):
            return neutral_pairing(gen_curvature(DLC3, a, b, c), probe)

        report = tensoriality_check(t, (SX3, SY3, SZ3), ENVS3[:6])
        for key in ("slot0:x1", "slot0:sin(x1)", "slot1:x1", "slot1:sin(x1)"):
            assert report[key].max_residual <= 1e-9

    def test_gen_curvature_last_slot_defect(self):
        """Scaling the differentiated section leaks the bracket correction:
        R(X, Y, f Z) - f R(X, Y, Z) = (1/2) (pr W)(f) Z, with W the
        modified-bracket correction term."""
        f = parse("x")
        lhs = gen_curvature(DLC3, SX3, SY3, SZ3.scale(f)) - gen_curvature(
            DLC3, SX3, SY3, SZ3
        ).scale(f)
        w = (courant_bracket(SX3, SY3) - modified_bracket(DLC3, SX3, SY3)).scale(parse("2"))
        rhs = SZ3.scale(mul(parse("1/2"), apply_vector(w.vec, f)))
        assert sec_max(lhs - rhs, ENVS3[:10]) <= 1e-11
        assert sec_max(lhs, ENVS3[:10]) > 0.01

    def test_gen_curvature_last_slot_tensorial_when_psi_closed(self):
        dlc = generalized_lc(CURVED2)
        f = parse("x")
        a = sec(R2, ["y", "x"], ["x*y", "1"])
        b = sec(R2, ["1", "x"], ["0", "y"])
        c = sec(R2, ["x", "y"], ["1", "x"])
        lhs = gen_curvature(dlc, a, b, c.scale(f)) - gen_curvature(dlc, a, b, c).scale(f)
        assert sec_max(lhs, ENVS2[:10]) <= 1e-11

    def test_flat_coordinate_data_vanishes(self):
        pair = make_pair(R2, [["1", "0"], ["0", "1"]], [["0", "0"], ["0", "0"]])
        gm = build_generalized_metric(pair)
        conn = canonical_connection(gm)
        dlc = generalized_lc(gm)
        basis = Section.basis(R2)
        dx = vec(R2, ["1", "0"])
        dy = vec(R2, ["0", "1"])
        assert sec_max(big_curvature(conn, dx, dy, basis[1]), ENVS2[:6]) == 0.0
        assert sec_max(gen_curvature(dlc, basis[0], basis[1], basis[2]), ENVS2[:6]) == 0.0


class TestIsometryCompatibilityObstruction:
    """A gamma-isometry J can commute with the corrected operator only when
    dpsi vanishes; the obstruction is dpsi(JX, Y, Z) + dpsi(X, JY, Z)."""

    J_ROWS = [
        ["0", "-1", "0", "0"],
        ["1", "0", "0", "0"],
        ["0", "0", "0", "-1"],
        ["0", "0", "1", "0"],
    ]

    def _obstruction(self, psi_rows):
        psi = TensorField.from_matrix(R4, "twoform_antisym", psi_rows)
        dpsi = exterior_derivative(psi)
        jmat = ExprMatrix([[parse(e) for e in row] for row in self.J_ROWS])
        envs = sample_envs(R4, 6, seed=3)
        basis = [vec(R4, [str(int(i == k)) for k in range(4)]) for i in range(4)]

        def jmove(v):
            return TensorField.vector(R4, jmat.apply([v.component(k) for k in range(4)]))

        worst = 0.0
        for x in basis:
            for y in basis:
                for z in basis:
                    e = add(
                        three_eval(dpsi, jmove(x), y, z), three_eval(dpsi, x, jmove(y), z)
                    )
                    worst = max(worst, expr_max(e, envs))
        return worst

    def test_nonclosed_psi_obstructs(self):
        rows = [["0", "0", "0", "0"] for _ in range(4)]
        rows[0][1] = "x3"
        rows[1][0] = "-x3"
        assert self._obstruction(rows) >= 0.5

    def test_closed_psi_is_unobstructed(self):
        rows = [["0", "0", "0", "0"] for _ in range(4)]
        rows[0][1] = "1"
        rows[1][0] = "-1"
        assert self._obstruction(rows) == 0.0


@st.composite
def poly_vectors(draw):
    atoms = ["0", "1", "x", "y", "z", "x*y"]
    return vec(R3, [draw(st.sampled_from(atoms)) for _ in range(3)])


@st.composite
def poly_sections3(draw):
    atoms = ["0", "1", "x", "y", "z", "x*y"]
    entries = [draw(st.sampled_from(atoms)) for _ in range(6)]
    return sec(R3, entries[:3], entries[3:])


@given(poly_vectors(), poly_sections3(), poly_sections3())
@settings(max_examples=20, deadline=None)
def test_canonical_connection_metric_invariance(v, s, t):
    """pr-direction derivative of g(s, t) splits through the connection."""
    lhs = apply_vector(v, neutral_pairing(s, t))
    rhs = add(
        neutral_pairing(CANON3.derivative_along(v, s), t),
        neutral_pairing(s, CANON3.derivative_along(v, t)),
    )
    diff = sub(lhs, rhs)
    r = scan(lambda env: abs(diff.evaluate(env)), ENVS3[:8], R3.coord_names)
    assert r.max_residual <= 1e-9
