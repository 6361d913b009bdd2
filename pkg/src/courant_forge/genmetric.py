"""Generalized Riemannian metrics: the pair (gamma, psi), phi, and V+/V-.

A positive-definite metric gamma and a 2-form psi on the base determine a
positive pairing G = g(phi ., .) on TM + T*M whose +1/-1 eigenbundles of phi
are the graphs of flat(psi + gamma) and flat(psi - gamma).  Everything here
is derived from that block description; the transfer isomorphisms V+- -> TM
are plain vector-part projections guarded by membership checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bigtangent import BigOperator, Frame, Section, neutral_pairing
from .expressions import Expr, as_expr, div
from .fields import (
    Chart,
    TensorField,
    _probe_envs,
    exterior_derivative,
    flat_matrix,
    metric_sharp_matrix,
)
from .matrices import ExprMatrix

#: g(tau-lift X, tau-lift Y) = TRANSFER_FACTOR * (+-gamma)(X, Y) on V+-.
TRANSFER_FACTOR = 2

_HALF = div(as_expr(1), as_expr(2))


@dataclass(frozen=True)
class MetricPair:
    """The defining data (gamma, psi): a Riemannian metric and a 2-form."""

    gamma: TensorField
    psi: TensorField

    def __post_init__(self):
        if self.gamma.kind != "twotensor_sym":
            raise ValueError("gamma must be a symmetric 2-tensor")
        if self.psi.kind != "twoform_antisym":
            raise ValueError("psi must be a 2-form")
        if self.gamma.chart != self.psi.chart:
            raise ValueError("gamma and psi live on different charts")
        for env in _probe_envs(self.chart):
            g = self.gamma.evaluate(env, {})
            try:
                np.linalg.cholesky(g)
            except np.linalg.LinAlgError:
                coords = tuple(env[n] for n in self.chart.coord_names)
                raise ValueError(f"gamma is not positive definite at {coords}") from None

    @property
    def chart(self) -> Chart:
        return self.gamma.chart

    @cached_property
    def gamma_flat(self) -> ExprMatrix:
        return flat_matrix(self.gamma)

    @cached_property
    def gamma_sharp(self) -> ExprMatrix:
        return metric_sharp_matrix(self.gamma)

    @cached_property
    def psi_flat(self) -> ExprMatrix:
        return flat_matrix(self.psi)

    def flat_pm(self, sign: int) -> ExprMatrix:
        """Matrix of flat(psi + sign*gamma)."""
        return self._flat_plus if sign > 0 else self._flat_minus

    def sharp_pm(self, sign: int) -> ExprMatrix:
        """Matrix inverse of flat_pm(sign)."""
        return self._sharp_plus if sign > 0 else self._sharp_minus

    @cached_property
    def _flat_plus(self) -> ExprMatrix:
        return self.psi_flat + self.gamma_flat

    @cached_property
    def _flat_minus(self) -> ExprMatrix:
        return self.psi_flat - self.gamma_flat

    @cached_property
    def _sharp_plus(self) -> ExprMatrix:
        return self._flat_plus.inverse()

    @cached_property
    def _sharp_minus(self) -> ExprMatrix:
        return self._flat_minus.inverse()

    def dpsi(self) -> TensorField:
        return exterior_derivative(self.psi)


def _graph_frame(pair: MetricPair, sign: int, label: str) -> Frame:
    chart = pair.chart
    m = chart.dim
    flat = pair.flat_pm(sign)
    sections = []
    for i in range(m):
        vec = TensorField(chart, "vector", {(i,): as_expr(1)})
        form = TensorField.oneform(chart, [flat[(j, i)] for j in range(m)])
        sections.append(Section(vec, form))
    return Frame(tuple(sections), label)


@dataclass(frozen=True)
class GenMetric:
    """A generalized metric: (gamma, psi) with phi and the eigenframes V+-."""

    pair: MetricPair
    phi: BigOperator
    vplus: Frame = field(repr=False)
    vminus: Frame = field(repr=False)

    @property
    def chart(self) -> Chart:
        return self.pair.chart

    def g(self, x: Section, y: Section) -> Expr:
        return neutral_pairing(x, y)

    def big_metric(self, x: Section, y: Section) -> Expr:
        """G(x, y) = g(phi x, y)."""
        return neutral_pairing(self.phi.apply(x), y)

    def big_metric_matrix(self, env: dict[str, float], cache: dict[int, float] | None = None) -> np.ndarray:
        """The 2m x 2m Gram matrix of G in the coordinate basis at a point."""
        m = self.chart.dim
        n = np.zeros((2 * m, 2 * m))
        n[:m, m:] = np.eye(m)
        n[m:, :m] = np.eye(m)
        phi = self.phi.evaluate(env, cache if cache is not None else {})
        return phi.T @ n

    def project_pm(self, x: Section, sign: int) -> Section:
        """The projection (x + sign*phi(x))/2 onto V+ or V-."""
        half = x.scale(_HALF)
        phi_half = self.phi.apply(x).scale(_HALF)
        return half + phi_half if sign > 0 else half - phi_half

    def embed_pm(self, x: TensorField, sign: int) -> Section:
        """Lift a vector field to (X, flat(psi + sign*gamma) X) in V+-."""
        if x.kind != "vector":
            raise ValueError("embed_pm expects a vector field")
        m = self.chart.dim
        comps = [x.component(i) for i in range(m)]
        form = TensorField.oneform(self.chart, self.pair.flat_pm(sign).apply(comps))
        return Section(x, form)

    def tau_pm(self, x: Section, sign: int) -> TensorField:
        """Transfer a section of V+- back to its vector part.

        Refuses sections whose form part is not flat(psi +- gamma) of the
        vector part, since the transfer is only defined on the eigenbundle.
        """
        m = self.chart.dim
        comps = [x.vec.component(i) for i in range(m)]
        expected = self.pair.flat_pm(sign).apply(comps)
        worst = 0.0
        for env in _probe_envs(self.chart):
            cache: dict[int, float] = {}
            for j in range(m):
                got = x.form.component(j)._eval(env, cache)
                want = expected[j]._eval(env, cache)
                worst = max(worst, abs(got - want))
        if worst > 1e-9:
            label = "V+" if sign > 0 else "V-"
            raise ValueError(f"section is not in {label}: membership residual {worst:.3e}")
        return x.vec

    def decompose(self, x: Section) -> tuple[Section, Section]:
        """Split x = x_plus + x_minus along V+ and V-, in closed form."""
        m = self.chart.dim
        z = [x.vec.component(i) for i in range(m)]
        zeta = [x.form.component(i) for i in range(m)]
        psi_z = self.pair.psi_flat.apply(z)
        w = self.pair.gamma_sharp.apply([a - b for a, b in zip(zeta, psi_z)])
        plus_vec = TensorField.vector(self.chart, [(zi + wi) * _HALF for zi, wi in zip(z, w)])
        minus_vec = TensorField.vector(self.chart, [(zi - wi) * _HALF for zi, wi in zip(z, w)])
        return self.embed_pm(plus_vec, +1), self.embed_pm(minus_vec, -1)


def build_generalized_metric(pair: MetricPair) -> GenMetric:
    """Assemble phi and the V+- frames from (gamma, psi).

    phi is the unique g-symmetric operator that is +Id on the graph of
    flat(psi + gamma) and -Id on the graph of flat(psi - gamma); its blocks
    are written out in closed form below and the eigen-property is what the
    test-suite pins down.
    """
    sharp_g = pair.gamma_sharp
    flat_g = pair.gamma_flat
    flat_p = pair.psi_flat
    a = (sharp_g @ flat_p).neg()
    b = sharp_g
    c = flat_g - flat_p @ sharp_g @ flat_p
    d = flat_p @ sharp_g
    phi = BigOperator(pair.chart, a, b, c, d)
    vplus = _graph_frame(pair, +1, "V+")
    vminus = _graph_frame(pair, -1, "V-")
    return GenMetric(pair, phi, vplus, vminus)
