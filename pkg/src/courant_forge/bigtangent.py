"""The bundle TM + T*M: neutral pairing, Courant bracket, block operators.

Sections are pairs (vector field, 1-form).  The neutral pairing carries no
1/2 factor; all sign conventions for sharp/flat blocks are the ones fixed in
``fields``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .expressions import Coord, Expr, ZERO, add, as_expr, div, mul, sin, sub
from .fields import (
    Chart,
    TensorField,
    _probe_envs,
    exterior_derivative,
    flat_matrix,
    interior_product,
    lie_bracket,
    lie_derivative,
    sharp_matrix,
)
from .matrices import ExprMatrix, block_matrix
from .sampling import ScanResult, numeric_rank, scan

FRAME_LABELS = ("E", "E_prime", "V+", "V-", "S", "generic")


@dataclass(frozen=True)
class Section:
    """A section (X, alpha) of TM + T*M."""

    vec: TensorField
    form: TensorField

    def __post_init__(self):
        if self.vec.kind != "vector" or self.form.kind != "oneform":
            raise ValueError("a section is a (vector, oneform) pair")
        if self.vec.chart != self.form.chart:
            raise ValueError("section components live on different charts")

    @property
    def chart(self) -> Chart:
        return self.vec.chart

    def __add__(self, other: "Section") -> "Section":
        return Section(self.vec + other.vec, self.form + other.form)

    def __sub__(self, other: "Section") -> "Section":
        return Section(self.vec - other.vec, self.form - other.form)

    def __neg__(self) -> "Section":
        return Section(-self.vec, -self.form)

    def scale(self, f) -> "Section":
        return Section(self.vec.scale(f), self.form.scale(f))

    def evaluate(self, env: dict[str, float], cache: dict[int, float] | None = None) -> np.ndarray:
        """Stacked value (X^1..X^m, alpha_1..alpha_m) at a point."""
        if cache is None:
            cache = {}
        return np.concatenate([self.vec.evaluate(env, cache), self.form.evaluate(env, cache)])

    @staticmethod
    def zero(chart: Chart) -> "Section":
        return Section(TensorField.zero(chart, "vector"), TensorField.zero(chart, "oneform"))

    @staticmethod
    def from_vector(x: TensorField) -> "Section":
        return Section(x, TensorField.zero(x.chart, "oneform"))

    @staticmethod
    def from_form(a: TensorField) -> "Section":
        return Section(TensorField.zero(a.chart, "vector"), a)

    @staticmethod
    def basis(chart: Chart) -> list["Section"]:
        """The 2m coordinate sections (d_i, 0), (0, dx^i)."""
        out = []
        for i in range(chart.dim):
            v = TensorField(chart, "vector", {(i,): as_expr(1)})
            out.append(Section.from_vector(v))
        for i in range(chart.dim):
            a = TensorField(chart, "oneform", {(i,): as_expr(1)})
            out.append(Section.from_form(a))
        return out


def neutral_pairing(x: Section, y: Section) -> Expr:
    """g((X,alpha),(Y,mu)) = alpha(Y) + mu(X), with no 1/2 factor."""
    if x.chart != y.chart:
        raise ValueError("sections live on different charts")
    m = x.chart.dim
    acc = ZERO
    for i in range(m):
        acc = add(acc, mul(x.form.component(i), y.vec.component(i)))
        acc = add(acc, mul(y.form.component(i), x.vec.component(i)))
    return acc


def partial_of_function(f, chart: Chart) -> Section:
    """The section (0, df/2); satisfies pr(X)(f) = 2 g(X, partial f)."""
    e = as_expr(f)
    df = exterior_derivative(TensorField.scalar(chart, e))
    return Section.from_form(df.scale(div(as_expr(1), as_expr(2))))


def _closedness_components(theta: TensorField) -> list[Expr]:
    """Components of d(theta) for a 3-form, without a dedicated 4-form kind."""
    chart = theta.chart
    names = chart.coord_names
    out = []
    for idx in combinations(range(chart.dim), 4):
        acc = ZERO
        for pos, i in enumerate(idx):
            rest = tuple(j for j in idx if j != i)
            term = theta.component(*rest).diff(names[i])
            acc = add(acc, term) if pos % 2 == 0 else sub(acc, term)
        out.append(acc)
    return out


def _require_closed_twist(theta: TensorField) -> None:
    comps = _closedness_components(theta)
    if not comps:
        return
    for env in _probe_envs(theta.chart):
        cache: dict[int, float] = {}
        for e in comps:
            if abs(e._eval(env, cache)) > 1e-9:
                raise ValueError("twist 3-form is not closed")


def courant_bracket(x: Section, y: Section, twist: TensorField | None = None) -> Section:
    """The skew bracket ([X,Y], L_X mu - L_Y alpha + d(alpha(Y) - mu(X))/2).

    With ``twist`` (a closed 3-form T), the form slot additionally picks up
    -i(Y)i(X)T/2.
    """
    if x.chart != y.chart:
        raise ValueError("sections live on different charts")
    X, alpha = x.vec, x.form
    Y, mu = y.vec, y.form
    vec = lie_bracket(X, Y)
    form = lie_derivative(X, mu) - lie_derivative(Y, alpha)
    pairing = interior_product(Y, alpha) - interior_product(X, mu) if alpha.components or mu.components else None
    if pairing is not None:
        half_d = exterior_derivative(pairing).scale(div(as_expr(1), as_expr(2)))
        form = form + half_d
    if twist is not None:
        if twist.kind != "threeform_antisym":
            raise ValueError("twist must be a 3-form")
        _require_closed_twist(twist)
        correction = interior_product(Y, interior_product(X, twist))
        form = form - correction.scale(div(as_expr(1), as_expr(2)))
    return Section(vec, form)


class BigOperator:
    """A 2m x 2m block operator [[a, b], [c, d]] on sections.

    ``a`` maps vectors to vectors, ``b`` forms to vectors, ``c`` vectors to
    forms and ``d`` forms to forms; each block is an expression matrix.
    """

    __slots__ = ("chart", "a", "b", "c", "d")

    def __init__(self, chart: Chart, a: ExprMatrix, b: ExprMatrix, c: ExprMatrix, d: ExprMatrix):
        m = chart.dim
        for name, blk in (("a", a), ("b", b), ("c", c), ("d", d)):
            if blk.shape != (m, m):
                raise ValueError(f"block {name} has shape {blk.shape}, expected {(m, m)}")
        self.chart = chart
        self.a = a
        self.b = b
        self.c = c
        self.d = d

    @staticmethod
    def from_tensors(
        a: TensorField | None,
        pi: TensorField | None,
        sigma: TensorField | None,
        d: TensorField | None = None,
        *,
        chart: Chart | None = None,
    ) -> "BigOperator":
        """Assemble [[A, sharp(pi)], [flat(sigma), D]]; D defaults to -A^t."""
        for t in (a, pi, sigma, d):
            if t is not None:
                chart = t.chart
                break
        if chart is None:
            raise ValueError("need at least one tensor or an explicit chart")
        m = chart.dim
        amat = (
            ExprMatrix.from_fn(m, m, lambda i, j: a.component(i, j))
            if a is not None
            else ExprMatrix.zeros(m)
        )
        bmat = sharp_matrix(pi) if pi is not None else ExprMatrix.zeros(m)
        cmat = flat_matrix(sigma) if sigma is not None else ExprMatrix.zeros(m)
        if d is not None:
            dmat = ExprMatrix.from_fn(m, m, lambda i, j: d.component(i, j))
        else:
            dmat = amat.transpose().neg()
        return BigOperator(chart, amat, bmat, cmat, dmat)

    @staticmethod
    def identity(chart: Chart) -> "BigOperator":
        m = chart.dim
        return BigOperator(
            chart, ExprMatrix.identity(m), ExprMatrix.zeros(m), ExprMatrix.zeros(m), ExprMatrix.identity(m)
        )

    @staticmethod
    def zero(chart: Chart) -> "BigOperator":
        m = chart.dim
        z = ExprMatrix.zeros(m)
        return BigOperator(chart, z, z, z, z)

    def apply(self, x: Section) -> Section:
        m = self.chart.dim
        xv = [x.vec.component(i) for i in range(m)]
        xf = [x.form.component(i) for i in range(m)]
        vec = [add(p, q) for p, q in zip(self.a.apply(xv), self.b.apply(xf))]
        form = [add(p, q) for p, q in zip(self.c.apply(xv), self.d.apply(xf))]
        return Section(
            TensorField.vector(self.chart, vec), TensorField.oneform(self.chart, form)
        )

    def compose(self, other: "BigOperator") -> "BigOperator":
        """self after other."""
        return BigOperator(
            self.chart,
            self.a @ other.a + self.b @ other.c,
            self.a @ other.b + self.b @ other.d,
            self.c @ other.a + self.d @ other.c,
            self.c @ other.b + self.d @ other.d,
        )

    def __add__(self, other: "BigOperator") -> "BigOperator":
        return BigOperator(
            self.chart, self.a + other.a, self.b + other.b, self.c + other.c, self.d + other.d
        )

    def __sub__(self, other: "BigOperator") -> "BigOperator":
        return BigOperator(
            self.chart, self.a - other.a, self.b - other.b, self.c - other.c, self.d - other.d
        )

    def scale(self, f) -> "BigOperator":
        f = as_expr(f)
        return BigOperator(
            self.chart, self.a.scale(f), self.b.scale(f), self.c.scale(f), self.d.scale(f)
        )

    def __neg__(self) -> "BigOperator":
        return BigOperator(self.chart, self.a.neg(), self.b.neg(), self.c.neg(), self.d.neg())

    def matrix(self) -> ExprMatrix:
        return block_matrix([[self.a, self.b], [self.c, self.d]])

    def evaluate(self, env: dict[str, float], cache: dict[int, float] | None = None) -> np.ndarray:
        if cache is None:
            cache = {}
        return np.block(
            [
                [self.a.evaluate(env, cache), self.b.evaluate(env, cache)],
                [self.c.evaluate(env, cache), self.d.evaluate(env, cache)],
            ]
        )

    def g_skew_residual(self, envs: list[dict[str, float]]) -> ScanResult:
        """Max over points of |g(Tx, y) + g(x, Ty)| over the coordinate basis."""
        m = self.chart.dim

        def fn(env):
            cache: dict[int, float] = {}
            t = self.evaluate(env, cache)
            gmat = _neutral_matrix(m)
            return gmat @ t + t.T @ gmat

        return scan(fn, envs, self.chart.coord_names)

    def __repr__(self):
        return f"BigOperator(dim={self.chart.dim})"


def _neutral_matrix(m: int) -> np.ndarray:
    g = np.zeros((2 * m, 2 * m))
    g[:m, m:] = np.eye(m)
    g[m:, :m] = np.eye(m)
    return g


def apply_big_operator(op: BigOperator, x: Section) -> Section:
    return op.apply(x)


def compose(op1: BigOperator, op2: BigOperator) -> BigOperator:
    return op1.compose(op2)


@dataclass(frozen=True)
class Frame:
    """An ordered set of sections expected to stay pointwise independent."""

    sections: tuple[Section, ...]
    label: str = "generic"

    def __post_init__(self):
        if self.label not in FRAME_LABELS:
            raise ValueError(f"unknown frame label {self.label!r}")
        if not self.sections:
            raise ValueError("a frame needs at least one section")

    @property
    def chart(self) -> Chart:
        return self.sections[0].chart

    def __len__(self) -> int:
        return len(self.sections)

    def evaluate(self, env: dict[str, float], cache: dict[int, float] | None = None) -> np.ndarray:
        """2m x k matrix whose columns are the section values."""
        if cache is None:
            cache = {}
        return np.column_stack([s.evaluate(env, cache) for s in self.sections])

    def rank_residuals(self, envs: list[dict[str, float]], rel_tol: float = 1e-9) -> ScanResult:
        """0 where the pointwise rank equals len(self), 1 where it drops."""
        k = len(self.sections)

        def fn(env):
            return 0.0 if numeric_rank(self.evaluate(env), rel_tol) == k else 1.0

        return scan(fn, envs, self.chart.coord_names)


def projection_residual(value: np.ndarray, frame_values: np.ndarray) -> float:
    coeffs, *_ = np.linalg.lstsq(frame_values, value, rcond=None)
    return float(np.max(np.abs(frame_values @ coeffs - value)))


def membership_residual(frame: Frame, section: Section, envs: list[dict[str, float]]) -> ScanResult:
    """Pointwise least-squares distance of ``section`` from span(frame)."""

    def fn(env):
        cache: dict[int, float] = {}
        fv = frame.evaluate(env, cache)
        sv = section.evaluate(env, cache)
        return projection_residual(sv, fv)

    return scan(fn, envs, frame.chart.coord_names)


def span_agreement_residual(f1: Frame, f2: Frame, envs: list[dict[str, float]]) -> ScanResult:
    """Mutual pointwise projection residual between two frames' spans."""

    def fn(env):
        cache: dict[int, float] = {}
        a = f1.evaluate(env, cache)
        b = f2.evaluate(env, cache)
        worst = 0.0
        for mat, other in ((a, b), (b, a)):
            for col in range(other.shape[1]):
                worst = max(worst, projection_residual(other[:, col], mat))
        return worst

    return scan(fn, envs, f1.chart.coord_names)


def tensoriality_check(
    t,
    args: tuple[Section, Section, Section],
    envs: list[dict[str, float]],
) -> dict[str, ScanResult]:
    """Empirical C-infinity-linearity probe, slot by slot.

    ``t`` maps (Section, Section, Section) -> ScalarExpr.  Each slot is
    scaled by f = x1 and f = sin(x1); a tensorial map commutes with both.
    """
    chart = args[0].chart
    x1 = Coord(chart.coord_names[0])
    base_value = t(*args)
    report: dict[str, ScanResult] = {}
    for slot in range(3):
        for fname, f in (("x1", x1), ("sin(x1)", sin(x1))):
            scaled = list(args)
            scaled[slot] = scaled[slot].scale(f)
            scaled_value = t(*scaled)
            diff = sub(scaled_value, mul(f, base_value))

            def fn(env, diff=diff):
                return diff.evaluate(env)

            report[f"slot{slot}:{fname}"] = scan(fn, envs, chart.coord_names)
    return report
