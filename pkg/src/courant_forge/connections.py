"""Connections: Levi-Civita, the D+- pair, and derivatives on TM + T*M.

Three layers:

* ``AffineConnection`` — Christoffel data on the base chart; covariant
  derivatives of vectors/1-forms, torsion and curvature.
* ``BigConnection`` — a pair (D+, D-) acting on sections through the V+-
  splitting of a generalized metric; directions are vector fields.
* ``GenConnection`` — a big connection extended to directions that are full
  sections; the extra covector direction acts through the gamma-skew
  operators Lambda+- below.

The Lambda normalization deserves a note: writing zeta for the covector
direction, both eigenbundle corrections are

    gamma(Lambda_zeta Y, Z) = STAR_COEFF * dpsi(sharp_pm(zeta), Y, Z)

with the *same* coefficient 1/2 on V+ and V-.  This is the unique scaling
for which the divergence of the torsion scalar from the plain Levi-Civita
value is 3*dpsi / -3*dpsi on same-side triples and dpsi(X, Y, sharp_pm
flat_mp Z) on mixed ones; the regression tests pin these down numerically.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .bigtangent import Section, courant_bracket, neutral_pairing
from .expressions import Const, Expr, ZERO, add, mul, sub
from .fields import Chart, TensorField, differentiate, interior_product, lie_bracket
from .genmetric import GenMetric, MetricPair, build_generalized_metric

#: Coefficient of the covector-direction correction, per eigenbundle sign.
STAR_COEFF = {+1: Const(Fraction(1, 2)), -1: Const(Fraction(1, 2))}

_HALF = Const(Fraction(1, 2))


@dataclass(frozen=True)
class AffineConnection:
    """Christoffel symbols gamma[k][i][j] of D_{d_i} d_j = gamma^k_{ij} d_k."""

    chart: Chart
    christoffels: tuple[tuple[tuple[Expr, ...], ...], ...]
    variant: str = "custom"

    def __post_init__(self):
        m = self.chart.dim
        if len(self.christoffels) != m or any(
            len(row) != m or any(len(col) != m for col in row) for row in self.christoffels
        ):
            raise ValueError("christoffels must be an m*m*m table")

    def symbol(self, k: int, i: int, j: int) -> Expr:
        return self.christoffels[k][i][j]

    def apply(self, x: TensorField, y: TensorField) -> TensorField:
        """Covariant derivative D_X Y of a vector field."""
        m = self.chart.dim
        names = self.chart.coord_names
        comps = []
        for k in range(m):
            acc = ZERO
            for i in range(m):
                xi = x.component(i)
                acc = add(acc, mul(xi, y.component(k).diff(names[i])))
                for j in range(m):
                    acc = add(acc, mul(self.christoffels[k][i][j], mul(xi, y.component(j))))
            comps.append(acc)
        return TensorField.vector(self.chart, comps)

    def apply_oneform(self, x: TensorField, mu: TensorField) -> TensorField:
        """Covariant derivative D_X mu of a 1-form."""
        m = self.chart.dim
        names = self.chart.coord_names
        comps = []
        for j in range(m):
            acc = ZERO
            for i in range(m):
                xi = x.component(i)
                acc = add(acc, mul(xi, mu.component(j).diff(names[i])))
                for k in range(m):
                    acc = sub(acc, mul(self.christoffels[k][i][j], mul(xi, mu.component(k))))
            comps.append(acc)
        return TensorField.oneform(self.chart, comps)

    def torsion(self, x: TensorField, y: TensorField) -> TensorField:
        return self.apply(x, y) - self.apply(y, x) - lie_bracket(x, y)

    def curvature(self, x: TensorField, y: TensorField, z: TensorField) -> TensorField:
        """R(X,Y)Z = D_X D_Y Z - D_Y D_X Z - D_{[X,Y]} Z."""
        return (
            self.apply(x, self.apply(y, z))
            - self.apply(y, self.apply(x, z))
            - self.apply(lie_bracket(x, y), z)
        )


def levi_civita(pair: MetricPair) -> AffineConnection:
    """The torsion-free gamma-metric connection of pair.gamma."""
    chart = pair.chart
    m = chart.dim
    names = chart.coord_names
    sharp = pair.gamma_sharp
    gamma = pair.gamma
    table = []
    for k in range(m):
        rows = []
        for i in range(m):
            cols = []
            for j in range(m):
                acc = ZERO
                for l in range(m):
                    bracket = sub(
                        add(
                            differentiate(gamma.component(j, l), i, chart),
                            differentiate(gamma.component(i, l), j, chart),
                        ),
                        differentiate(gamma.component(i, j), l, chart),
                    )
                    acc = add(acc, mul(sharp[(k, l)], bracket))
                cols.append(mul(_HALF, acc))
            rows.append(tuple(cols))
        table.append(tuple(rows))
    return AffineConnection(chart, tuple(table), "LC")


def build_dpm(pair: MetricPair, sign: int) -> AffineConnection:
    """D+- = Levi-Civita + sign/2 * sharp_gamma[i(Y)i(X) dpsi]."""
    lc = levi_civita(pair)
    dpsi = pair.dpsi()
    if not dpsi.components:
        return AffineConnection(pair.chart, lc.christoffels, "D+" if sign > 0 else "D-")
    m = pair.chart.dim
    sharp = pair.gamma_sharp
    half = Const(Fraction(sign, 2))
    table = []
    for k in range(m):
        rows = []
        for i in range(m):
            cols = []
            for j in range(m):
                acc = ZERO
                for l in range(m):
                    acc = add(acc, mul(sharp[(k, l)], dpsi.component(i, j, l)))
                cols.append(add(lc.christoffels[k][i][j], mul(half, acc)))
            rows.append(tuple(cols))
        table.append(tuple(rows))
    return AffineConnection(pair.chart, tuple(table), "D+" if sign > 0 else "D-")


@dataclass(frozen=True)
class BigConnection:
    """A connection on TM + T*M preserving V+-, acting by D+- on the parts."""

    dplus: AffineConnection
    dminus: AffineConnection
    metric: GenMetric

    @property
    def chart(self) -> Chart:
        return self.metric.chart

    def derivative(self, x: Section, s: Section) -> Section:
        """nabla_X s along X = pr_TM(x); the form part of x is ignored."""
        return self.derivative_along(x.vec, s)

    def derivative_along(self, x: TensorField, s: Section) -> Section:
        plus, minus = self.metric.decompose(s)
        out_plus = self.metric.embed_pm(self.dplus.apply(x, plus.vec), +1)
        out_minus = self.metric.embed_pm(self.dminus.apply(x, minus.vec), -1)
        return out_plus + out_minus


def canonical_connection(pair: MetricPair | GenMetric) -> BigConnection:
    """The big connection of (gamma, psi): D+ on V+, D- on V-."""
    metric = pair if isinstance(pair, GenMetric) else build_generalized_metric(pair)
    return BigConnection(build_dpm(metric.pair, +1), build_dpm(metric.pair, -1), metric)


def levi_civita_big(pair: MetricPair | GenMetric) -> BigConnection:
    """The big connection acting by the plain Levi-Civita on both V+-."""
    metric = pair if isinstance(pair, GenMetric) else build_generalized_metric(pair)
    lc = levi_civita(metric.pair)
    return BigConnection(lc, lc, metric)


def courant_torsion(conn, x: Section, y: Section) -> Section:
    """T(x, y) = conn_x y - conn_y x - [x, y]."""
    return conn.derivative(x, y) - conn.derivative(y, x) - courant_bracket(x, y)


def gualtieri_torsion(conn, x: Section, y: Section, z: Section) -> Expr:
    """g(T(x,y), z) + (1/2)[g(conn_z x, y) - g(conn_z y, x)]."""
    first = neutral_pairing(courant_torsion(conn, x, y), z)
    second = sub(
        neutral_pairing(conn.derivative(z, x), y),
        neutral_pairing(conn.derivative(z, y), x),
    )
    return add(first, mul(_HALF, second))


@dataclass(frozen=True)
class GenConnection:
    """A big connection extended to covector directions.

    The covector part of the direction acts on the V+- components of the
    argument through the gamma-skew operators Lambda+- (see the module
    docstring); xi_plus / xi_minus record the induced 3-forms +-dpsi.
    """

    nabla: BigConnection
    xi_plus: TensorField
    xi_minus: TensorField

    @property
    def chart(self) -> Chart:
        return self.nabla.chart

    @property
    def metric(self) -> GenMetric:
        return self.nabla.metric

    def derivative(self, x: Section, s: Section) -> Section:
        return self.nabla.derivative(x, s) + self.star_derivative(x.form, s)

    def star_derivative(self, alpha: TensorField, s: Section) -> Section:
        """The covector-direction part: Lambda+- applied to the V+- parts."""
        metric = self.metric
        pair = metric.pair
        m = self.chart.dim
        dpsi = pair.dpsi()
        if not dpsi.components:
            return Section.zero(self.chart)
        comps = [alpha.component(i) for i in range(m)]
        plus, minus = metric.decompose(s)
        out = Section.zero(self.chart)
        for sign, part in ((+1, plus), (-1, minus)):
            direction = TensorField.vector(self.chart, pair.sharp_pm(sign).apply(comps))
            one = interior_product(part.vec, interior_product(direction, dpsi))
            vec = TensorField.vector(
                self.chart, pair.gamma_sharp.apply([one.component(i) for i in range(m)])
            )
            out = out + metric.embed_pm(vec.scale(STAR_COEFF[sign]), sign)
        return out


def generalized_lc(pair: MetricPair | GenMetric) -> GenConnection:
    """The generalized Levi-Civita connection of (gamma, psi)."""
    metric = pair if isinstance(pair, GenMetric) else build_generalized_metric(pair)
    dpsi = metric.pair.dpsi()
    return GenConnection(levi_civita_big(metric), dpsi, -dpsi)


def modified_bracket(dconn: GenConnection, x: Section, y: Section) -> Section:
    """[x, y] - W/2 where g(W, z) = g(D_z x, y) - g(D_z y, x) for all z."""
    chart = dconn.chart
    m = chart.dim

    def pairing(z: Section) -> Expr:
        return sub(
            neutral_pairing(dconn.derivative(z, x), y),
            neutral_pairing(dconn.derivative(z, y), x),
        )

    basis = Section.basis(chart)
    w_form = [pairing(basis[i]) for i in range(m)]
    w_vec = [pairing(basis[m + i]) for i in range(m)]
    w = Section(TensorField.vector(chart, w_vec), TensorField.oneform(chart, w_form))
    return courant_bracket(x, y) - w.scale(_HALF)


def gen_curvature(dconn: GenConnection, x: Section, y: Section, z: Section) -> Section:
    """D_x D_y z - D_y D_x z - D_{[x,y]^D} z with the modified bracket."""
    return (
        dconn.derivative(x, dconn.derivative(y, z))
        - dconn.derivative(y, dconn.derivative(x, z))
        - dconn.derivative(modified_bracket(dconn, x, y), z)
    )


def big_curvature(conn: BigConnection, x: TensorField, y: TensorField, s: Section) -> Section:
    """R(X,Y)s = nabla_X nabla_Y s - nabla_Y nabla_X s - nabla_{[X,Y]} s."""
    return (
        conn.derivative_along(x, conn.derivative_along(y, s))
        - conn.derivative_along(y, conn.derivative_along(x, s))
        - conn.derivative_along(lie_bracket(x, y), s)
    )
