"""Charts, points and tensor fields with classical chart calculus.

A chart fixes coordinate names and a sampling box; tensor fields carry
expression components in compressed storage (strictly increasing indices for
antisymmetric kinds, upper triangle for the symmetric kind) and expand to
dense numpy arrays only at evaluation time.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .expressions import Expr, ZERO, add, as_expr, is_zero, mul, neg, parse, sub
from .matrices import ExprMatrix

KINDS = (
    "scalar",
    "vector",
    "oneform",
    "twoform_antisym",
    "twotensor_sym",
    "bivector_antisym",
    "threeform_antisym",
    "trivector_antisym",
    "endo11",
)

_FORM_DEGREE = {"scalar": 0, "oneform": 1, "twoform_antisym": 2, "threeform_antisym": 3}
_DEGREE_FORM = {v: k for k, v in _FORM_DEGREE.items()}


@dataclass(frozen=True)
class Chart:
    """A single coordinate chart: names plus the axis-aligned sampling box."""

    coord_names: tuple[str, ...]
    domain: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.coord_names) < 1:
            raise ValueError("chart needs at least one coordinate")
        if len(set(self.coord_names)) != len(self.coord_names):
            raise ValueError("coordinate names must be distinct")
        if len(self.domain) != len(self.coord_names):
            raise ValueError("domain box must have one interval per coordinate")
        for lo, hi in self.domain:
            if not lo < hi:
                raise ValueError(f"degenerate domain interval ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.coord_names)

    def env(self, coords) -> dict[str, float]:
        if len(coords) != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {len(coords)}")
        return dict(zip(self.coord_names, (float(c) for c in coords)))

    def point(self, *coords: float) -> "Point":
        return Point(self, tuple(float(c) for c in coords))


@dataclass(frozen=True)
class Point:
    chart: Chart
    coords: tuple[float, ...]

    def __post_init__(self):
        if len(self.coords) != self.chart.dim:
            raise ValueError("coordinate count does not match chart dimension")
        for c, (lo, hi) in zip(self.coords, self.chart.domain):
            if not (lo <= c <= hi):
                raise ValueError(f"coordinate {c} outside domain [{lo}, {hi}]")

    def env(self) -> dict[str, float]:
        return self.chart.env(self.coords)


def parse_scalar_expr(text: str, chart: Chart) -> Expr:
    """Parse ``text`` against the chart's coordinate names."""
    return parse(text, chart.coord_names)


def differentiate(e: Expr, i: int, chart: Chart) -> Expr:
    """Symbolic partial derivative with respect to the i-th coordinate."""
    return e.diff(chart.coord_names[i])


class TensorField:
    """Components of one tensor of a fixed ``kind`` over a chart.

    Storage is a mapping from canonical index tuples to expressions; missing
    canonical entries are zero.  ``component`` resolves arbitrary index
    tuples through the (anti)symmetry of the kind.
    """

    __slots__ = ("chart", "kind", "components")

    def __init__(self, chart: Chart, kind: str, components: dict[tuple[int, ...], Expr]):
        if kind not in KINDS:
            raise ValueError(f"unknown tensor kind {kind!r}")
        self.chart = chart
        self.kind = kind
        canon: dict[tuple[int, ...], Expr] = {}
        for idx, e in components.items():
            idx = tuple(idx)
            if idx != self._canonical(idx):
                raise ValueError(f"non-canonical index {idx} for kind {kind}")
            e = as_expr(e)
            if not is_zero(e):
                canon[idx] = e
        self.components = canon

    # -- indexing ----------------------------------------------------------

    def _canonical(self, idx: tuple[int, ...]) -> tuple[int, ...]:
        m = self.chart.dim
        if any(not (0 <= i < m) for i in idx):
            raise IndexError(f"index {idx} out of range for dimension {m}")
        k = self.kind
        if k == "scalar":
            expected = 0
        elif k in ("vector", "oneform"):
            expected = 1
        elif k in ("threeform_antisym", "trivector_antisym"):
            expected = 3
        else:
            expected = 2
        if len(idx) != expected:
            raise IndexError(f"kind {k} takes {expected} indices, got {len(idx)}")
        if k in ("twoform_antisym", "bivector_antisym", "threeform_antisym", "trivector_antisym"):
            return tuple(sorted(idx))
        if k == "twotensor_sym":
            return tuple(sorted(idx))
        return idx

    def component(self, *idx: int) -> Expr:
        """Entry at arbitrary indices, honoring the kind's symmetry."""
        key = self._canonical(tuple(idx))
        e = self.components.get(key, ZERO)
        if self.kind in ("twoform_antisym", "bivector_antisym", "threeform_antisym", "trivector_antisym"):
            if len(set(idx)) != len(idx):
                return ZERO
            if _parity(idx) < 0:
                return neg(e)
        return e

    # -- construction ------------------------------------------------------

    @staticmethod
    def scalar(chart: Chart, e) -> "TensorField":
        return TensorField(chart, "scalar", {(): as_expr(e)})

    @staticmethod
    def vector(chart: Chart, entries) -> "TensorField":
        return TensorField(chart, "vector", {(i,): as_expr(e) for i, e in enumerate(entries)})

    @staticmethod
    def oneform(chart: Chart, entries) -> "TensorField":
        return TensorField(chart, "oneform", {(i,): as_expr(e) for i, e in enumerate(entries)})

    @staticmethod
    def from_matrix(chart: Chart, kind: str, matrix, probe_tol: float = 1e-9) -> "TensorField":
        """Compress a dense matrix of expressions into ``kind`` storage.

        The required symmetry is checked structurally and, failing that,
        numerically at deterministic probe points.
        """
        m = chart.dim
        rows = [[as_expr(e) for e in row] for row in matrix]
        if len(rows) != m or any(len(r) != m for r in rows):
            raise ValueError(f"expected a {m}x{m} matrix")
        if kind == "endo11":
            return TensorField(
                chart, "endo11", {(i, j): rows[i][j] for i in range(m) for j in range(m)}
            )
        if kind == "twotensor_sym":
            _require_pair_symmetry(chart, rows, sign=+1, tol=probe_tol)
            return TensorField(
                chart, kind, {(i, j): rows[i][j] for i in range(m) for j in range(i, m)}
            )
        if kind in ("twoform_antisym", "bivector_antisym"):
            _require_pair_symmetry(chart, rows, sign=-1, tol=probe_tol)
            return TensorField(
                chart, kind, {(i, j): rows[i][j] for i in range(m) for j in range(i + 1, m)}
            )
        raise ValueError(f"from_matrix does not build kind {kind!r}")

    @staticmethod
    def zero(chart: Chart, kind: str) -> "TensorField":
        return TensorField(chart, kind, {})

    # -- algebra -----------------------------------------------------------

    def map(self, fn) -> "TensorField":
        return TensorField(self.chart, self.kind, {k: fn(e) for k, e in self.components.items()})

    def __add__(self, other: "TensorField") -> "TensorField":
        self._check_compatible(other)
        keys = set(self.components) | set(other.components)
        return TensorField(
            self.chart,
            self.kind,
            {k: add(self.components.get(k, ZERO), other.components.get(k, ZERO)) for k in keys},
        )

    def __sub__(self, other: "TensorField") -> "TensorField":
        self._check_compatible(other)
        keys = set(self.components) | set(other.components)
        return TensorField(
            self.chart,
            self.kind,
            {k: sub(self.components.get(k, ZERO), other.components.get(k, ZERO)) for k in keys},
        )

    def scale(self, c) -> "TensorField":
        c = as_expr(c)
        return self.map(lambda e: mul(c, e))

    def __neg__(self) -> "TensorField":
        return self.map(neg)

    def _check_compatible(self, other: "TensorField") -> None:
        if self.chart is not other.chart and self.chart != other.chart:
            raise ValueError("fields live on different charts")
        if self.kind != other.kind:
            raise ValueError(f"kind mismatch: {self.kind} vs {other.kind}")

    # -- evaluation --------------------------------------------------------

    def evaluate(self, env: dict[str, float], cache: dict[int, float] | None = None) -> np.ndarray | float:
        if cache is None:
            cache = {}
        m = self.chart.dim
        k = self.kind
        if k == "scalar":
            return self.component()._eval(env, cache)
        if k in ("vector", "oneform"):
            return np.array([self.component(i)._eval(env, cache) for i in range(m)])
        if k in ("threeform_antisym", "trivector_antisym"):
            out = np.zeros((m, m, m))
            for (i, j, l), e in self.components.items():
                v = e._eval(env, cache)
                out[i, j, l] = out[j, l, i] = out[l, i, j] = v
                out[j, i, l] = out[i, l, j] = out[l, j, i] = -v
            return out
        out = np.zeros((m, m))
        if k == "endo11":
            for (i, j), e in self.components.items():
                out[i, j] = e._eval(env, cache)
        elif k == "twotensor_sym":
            for (i, j), e in self.components.items():
                out[i, j] = out[j, i] = e._eval(env, cache)
        else:
            for (i, j), e in self.components.items():
                v = e._eval(env, cache)
                out[i, j] = v
                out[j, i] = -v
        return out

    def __repr__(self):
        return f"TensorField({self.kind}, dim={self.chart.dim})"


def _parity(idx) -> int:
    sign = 1
    idx = list(idx)
    for a, b in combinations(range(len(idx)), 2):
        if idx[a] > idx[b]:
            sign = -sign
    return sign


def _probe_envs(chart: Chart) -> list[dict[str, float]]:
    rng = np.random.default_rng(20240901)
    envs = []
    for _ in range(5):
        coords = [lo + (hi - lo) * rng.uniform(0.1, 0.9) for lo, hi in chart.domain]
        envs.append(chart.env(coords))
    return envs


def _require_pair_symmetry(chart: Chart, rows, sign: int, tol: float) -> None:
    m = chart.dim
    envs = None
    for i in range(m):
        for j in range(i, m):
            a = rows[i][j]
            b = rows[j][i]
            want = a if sign > 0 else neg(a)
            if b == want:
                continue
            if envs is None:
                envs = _probe_envs(chart)
            for env in envs:
                cache: dict[int, float] = {}
                if abs(b._eval(env, cache) - want._eval(env, cache)) > tol:
                    rel = "symmetric" if sign > 0 else "antisymmetric"
                    raise ValueError(f"matrix is not {rel}: entries ({i},{j}) vs ({j},{i})")


# ---------------------------------------------------------------------------
# Chart calculus.


def exterior_derivative(f: TensorField) -> TensorField:
    chart = f.chart
    m = chart.dim
    deg = _FORM_DEGREE.get(f.kind)
    if deg is None or deg >= 3:
        raise ValueError(f"exterior derivative undefined for kind {f.kind}")
    names = chart.coord_names
    if deg == 0:
        e = f.component()
        return TensorField.oneform(chart, [e.diff(names[i]) for i in range(m)])
    if deg == 1:
        comps = {}
        for i, j in combinations(range(m), 2):
            comps[(i, j)] = sub(f.component(j).diff(names[i]), f.component(i).diff(names[j]))
        return TensorField(chart, "twoform_antisym", comps)
    comps = {}
    for i, j, k in combinations(range(m), 3):
        comps[(i, j, k)] = add(
            sub(f.component(j, k).diff(names[i]), f.component(i, k).diff(names[j])),
            f.component(i, j).diff(names[k]),
        )
    return TensorField(chart, "threeform_antisym", comps)


def interior_product(x: TensorField, form: TensorField) -> TensorField:
    if x.kind != "vector":
        raise ValueError("first argument must be a vector field")
    chart = form.chart
    m = chart.dim
    deg = _FORM_DEGREE.get(form.kind)
    if deg is None or deg == 0:
        raise ValueError(f"interior product needs a form of degree >= 1, got {form.kind}")
    if deg == 1:
        acc = ZERO
        for i in range(m):
            acc = add(acc, mul(x.component(i), form.component(i)))
        return TensorField.scalar(chart, acc)
    if deg == 2:
        entries = []
        for j in range(m):
            acc = ZERO
            for i in range(m):
                acc = add(acc, mul(x.component(i), form.component(i, j)))
            entries.append(acc)
        return TensorField.oneform(chart, entries)
    comps = {}
    for j, k in combinations(range(m), 2):
        acc = ZERO
        for i in range(m):
            acc = add(acc, mul(x.component(i), form.component(i, j, k)))
        comps[(j, k)] = acc
    return TensorField(chart, "twoform_antisym", comps)


def lie_bracket(x: TensorField, y: TensorField) -> TensorField:
    if x.kind != "vector" or y.kind != "vector":
        raise ValueError("lie_bracket takes two vector fields")
    chart = x.chart
    names = chart.coord_names
    m = chart.dim
    entries = []
    for i in range(m):
        acc = ZERO
        for j in range(m):
            acc = add(acc, mul(x.component(j), y.component(i).diff(names[j])))
            acc = sub(acc, mul(y.component(j), x.component(i).diff(names[j])))
        entries.append(acc)
    return TensorField.vector(chart, entries)


def lie_derivative(x: TensorField, f: TensorField) -> TensorField:
    """Cartan's formula i(X)d + d i(X); defined here for scalars and forms.

    Symmetric 2-tensors fall outside Cartan's formula and use the component
    expression X^k dT_ij/dx^k + T_kj dX^k/dx^i + T_ik dX^k/dx^j instead.
    """
    if f.kind == "scalar":
        return interior_product(x, exterior_derivative(f))
    if f.kind == "vector":
        return lie_bracket(x, f)
    if f.kind in ("oneform", "twoform_antisym"):
        return interior_product(x, exterior_derivative(f)) + exterior_derivative(
            interior_product(x, f)
        )
    if f.kind == "twotensor_sym":
        chart = x.chart
        names = chart.coord_names
        m = chart.dim
        comps = {}
        for i in range(m):
            for j in range(i, m):
                acc = ZERO
                for k in range(m):
                    acc = add(acc, mul(x.component(k), f.component(i, j).diff(names[k])))
                    acc = add(acc, mul(f.component(k, j), x.component(k).diff(names[i])))
                    acc = add(acc, mul(f.component(i, k), x.component(k).diff(names[j])))
                comps[(i, j)] = acc
        return TensorField(chart, "twotensor_sym", comps)
    raise ValueError(f"lie_derivative not defined for kind {f.kind}")


def apply_vector(x: TensorField, e: Expr) -> Expr:
    """Directional derivative X(f) of a scalar expression."""
    chart = x.chart
    acc = ZERO
    for i in range(chart.dim):
        acc = add(acc, mul(x.component(i), e.diff(chart.coord_names[i])))
    return acc


def schouten_bracket(p: TensorField, q: TensorField) -> TensorField:
    """Schouten-Nijenhuis bracket of two bivectors, as a trivector.

    [P,Q]^{ijk} = sum over cyclic (i,j,k) of P^{il} dQ^{jk}/dx^l + Q^{il} dP^{jk}/dx^l.
    With this normalization [P,P] is twice the Jacobiator of P, so [P,P] = 0
    still characterizes the Poisson condition.
    """
    if p.kind != "bivector_antisym" or q.kind != "bivector_antisym":
        raise ValueError("schouten_bracket takes two bivector fields")
    chart = p.chart
    names = chart.coord_names
    m = chart.dim
    comps = {}
    for i, j, k in combinations(range(m), 3):
        acc = ZERO
        for a, b, c in ((i, j, k), (j, k, i), (k, i, j)):
            for l in range(m):
                acc = add(acc, mul(p.component(a, l), q.component(b, c).diff(names[l])))
                acc = add(acc, mul(q.component(a, l), p.component(b, c).diff(names[l])))
        comps[(i, j, k)] = acc
    return TensorField(chart, "trivector_antisym", comps)


# ---------------------------------------------------------------------------
# Musical maps.  Conventions, fixed once and verified in the test suite:
#   flat:   (b_B X)_j = B_{ij} X^i   for any covariant 2-tensor B;
#   sharp:  (s_P a)^j = P^{ij} a_i   for any contravariant 2-tensor P;
#   metric:   sharp is the matrix inverse of flat        (s.b = +Id);
#   2-form:   sharp is minus the matrix inverse of flat  (s.b = -Id);
#   bivector: flat is minus the matrix inverse of sharp  (b.s = -Id).


def flat_matrix(b: TensorField) -> ExprMatrix:
    if b.kind not in ("twotensor_sym", "twoform_antisym"):
        raise ValueError(f"flat needs a covariant 2-tensor, got {b.kind}")
    m = b.chart.dim
    return ExprMatrix.from_fn(m, m, lambda j, i: b.component(i, j))


def sharp_matrix(p: TensorField) -> ExprMatrix:
    if p.kind not in ("twotensor_sym", "bivector_antisym"):
        raise ValueError(f"sharp needs a contravariant 2-tensor, got {p.kind}")
    m = p.chart.dim
    return ExprMatrix.from_fn(m, m, lambda j, i: p.component(i, j))


def metric_sharp_matrix(gamma: TensorField) -> ExprMatrix:
    return flat_matrix(gamma).inverse()


def twoform_sharp_matrix(mu: TensorField) -> ExprMatrix:
    return flat_matrix(mu).inverse().neg()


def bivector_flat_matrix(w: TensorField) -> ExprMatrix:
    return sharp_matrix(w).inverse().neg()


def musical(tensor: TensorField, direction: str, arg: TensorField) -> TensorField:
    """Flat/sharp against a metric, a 2-form or a bivector."""
    chart = tensor.chart
    if direction == "flat":
        if arg.kind != "vector":
            raise ValueError("flat expects a vector field")
        if tensor.kind in ("twotensor_sym", "twoform_antisym"):
            mat = flat_matrix(tensor)
        elif tensor.kind == "bivector_antisym":
            mat = bivector_flat_matrix(tensor)
        else:
            raise ValueError(f"flat undefined for kind {tensor.kind}")
        entries = mat.apply([arg.component(i) for i in range(chart.dim)])
        return TensorField.oneform(chart, entries)
    if direction == "sharp":
        if arg.kind != "oneform":
            raise ValueError("sharp expects a one-form")
        if tensor.kind == "twotensor_sym":
            mat = metric_sharp_matrix(tensor)
        elif tensor.kind == "bivector_antisym":
            mat = sharp_matrix(tensor)
        elif tensor.kind == "twoform_antisym":
            mat = twoform_sharp_matrix(tensor)
        else:
            raise ValueError(f"sharp undefined for kind {tensor.kind}")
        entries = mat.apply([arg.component(i) for i in range(chart.dim)])
        return TensorField.vector(chart, entries)
    raise ValueError(f"direction must be 'flat' or 'sharp', got {direction!r}")
