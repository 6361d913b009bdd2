"""Generalized complex/paracomplex structures and Dirac structures.

A structure here is a block operator Psi on TM + T*M with Psi^2 = eps*Id and
g(Psi x, y) = -g(x, Psi y); eps = -1 is the complex case, eps = +1 the
paracomplex one.  Attached to a generalized metric, the paracomplex
structures compatible with it correspond bijectively to isometries F of
(TM, gamma): Psi maps the graph of flat(psi + gamma) by F into the graph of
flat(psi - gamma) and comes back by F^{-1}.  The +1-eigenbundle E of such a
Psi is an almost Dirac structure, represented throughout by its frame

    e_i = ((Id + F) d_i,  flat_psi (Id + F) d_i + flat_gamma (Id - F) d_i),

and E' = phi(E) is the -1-eigenbundle.  Dirac structures are kept as frames;
the isometry F_E is derived data, recovered pointwise from the V+/V- split
of the frame.  Integrability is always measured, never assumed: the report
carries max |g([e_i,e_j], e_k)| over frame triples and sample points.

Normalization note: the Ehresmann-style curvature of E with respect to E'
is taken as one half of (Id - Psi)[(Id + Psi)x, (Id + Psi)y], which is the
scaling for which E(E;E') + E(E';E) equals the Nijenhuis torsion N_Psi and
E(E;E') = (1/2)(Id - Psi) N_Psi holds identically.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .bigtangent import (
    BigOperator,
    Frame,
    Section,
    courant_bracket,
    membership_residual,
    neutral_pairing,
)
from .connections import (
    AffineConnection,
    BigConnection,
    canonical_connection,
    gualtieri_torsion,
    levi_civita,
)
from .expressions import Const, Expr, ZERO, add, mul, sub
from .fields import (
    Chart,
    TensorField,
    _probe_envs,
    exterior_derivative,
    interior_product,
    musical,
    schouten_bracket,
    sharp_matrix,
)
from .genmetric import GenMetric, MetricPair, build_generalized_metric
from .matrices import ExprMatrix
from .sampling import numeric_rank, sample_envs, scan

_HALF = Const(Fraction(1, 2))

PRESENTATIONS = ("graph_two_form", "graph_bivector", "para_eigenbundle")


class DegenerateFrameError(ValueError):
    """The vector parts of a frame's V+ components fail to span TM somewhere."""


class NonIntegrableGraphError(ValueError):
    """A graph construction was asked to certify integrability and cannot.

    Carries the offending index triple and the sample point where the
    closedness/Poisson precondition fails.
    """

    def __init__(self, message: str, triple: tuple[int, ...], point: tuple[float, ...]):
        super().__init__(message)
        self.triple = triple
        self.point = point


# ---------------------------------------------------------------------------
# helpers shared by the builders


def _endo_matrix(f: TensorField | ExprMatrix, chart: Chart) -> ExprMatrix:
    if isinstance(f, ExprMatrix):
        return f
    if f.kind != "endo11":
        raise ValueError(f"expected an endo11 field, got {f.kind}")
    m = chart.dim
    return ExprMatrix.from_fn(m, m, lambda i, j: f.component(i, j))


def _endo_field(chart: Chart, mat: ExprMatrix) -> TensorField:
    m = chart.dim
    return TensorField.from_matrix(chart, "endo11", [[mat[i, j] for j in range(m)] for i in range(m)])


def _as_metric(metric: GenMetric | MetricPair) -> GenMetric:
    return metric if isinstance(metric, GenMetric) else build_generalized_metric(metric)


def _split_rows(gm: GenMetric, sign: int) -> tuple[ExprMatrix, ExprMatrix]:
    """Row blocks of the V+- projection's vector part: X_s = (Z + s sharp_g(zeta - flat_psi Z))/2."""
    m = gm.chart.dim
    ident = ExprMatrix.identity(m)
    sg = gm.pair.gamma_sharp
    fp = gm.pair.psi_flat
    left = (ident - (sg @ fp).scale(Const(sign))).scale(_HALF)
    right = sg.scale(Const(sign)).scale(_HALF)
    return left, right


def _graph_operator(gm: GenMetric, terms) -> BigOperator:
    """Assemble sum of lift_t . M . (V_s vector projection) as a big operator."""
    m = gm.chart.dim
    z = ExprMatrix.zeros(m)
    a, b, c, d = z, z, z, z
    for t, mat, s in terms:
        left, right = _split_rows(gm, s)
        flat = gm.pair.flat_pm(t)
        a = a + mat @ left
        b = b + mat @ right
        c = c + flat @ mat @ left
        d = d + flat @ mat @ right
    return BigOperator(gm.chart, a, b, c, d)


def _isometry_residual(fmat: ExprMatrix, gamma: TensorField, envs) -> float:
    def fn(env):
        cache: dict[int, float] = {}
        fv = fmat.evaluate(env, cache)
        gv = gamma.evaluate(env, cache)
        return fv.T @ gv @ fv - gv

    return scan(fn, envs, gamma.chart.coord_names).max_residual


def _coordinate_vectors(chart: Chart) -> list[TensorField]:
    m = chart.dim
    return [
        TensorField.vector(chart, [Const(1) if i == j else ZERO for j in range(m)])
        for i in range(m)
    ]


def _three_form_value(omega: TensorField, x: TensorField, y: TensorField, z: TensorField) -> Expr:
    return interior_product(z, interior_product(y, interior_product(x, omega))).component()


# ---------------------------------------------------------------------------
# structures


@dataclass(frozen=True)
class GenEndoStructure:
    """A g-skew endomorphism squaring to eps*Id, optionally tied to a metric.

    Construction probes Psi^2 = eps*Id, g-skewness and - when a metric is
    attached - G-invariance together with phi Psi = -eps Psi phi at a handful
    of random chart points; anything beyond ``probe_tol`` is rejected.
    """

    op: BigOperator
    epsilon: int
    metric: GenMetric | None = None
    probe_tol: float = 1e-9

    def __post_init__(self):
        if self.epsilon not in (-1, +1):
            raise ValueError("epsilon must be -1 or +1")
        chart = self.op.chart
        envs = _probe_envs(chart)
        m = chart.dim
        sq = self.op.compose(self.op).matrix() - ExprMatrix.identity(2 * m).scale(Const(self.epsilon))
        worst = scan(lambda env: sq.evaluate(env, {}), envs, chart.coord_names).max_residual
        if worst > self.probe_tol:
            raise ValueError(f"operator does not square to {self.epsilon}*Id: residual {worst:.3e}")
        worst = self.op.g_skew_residual(envs).max_residual
        if worst > self.probe_tol:
            raise ValueError(f"operator is not g-skew: residual {worst:.3e}")
        if self.metric is not None:
            if self.metric.chart != chart:
                raise ValueError("metric lives on a different chart")
            anti = (
                self.metric.phi.compose(self.op)
                + self.op.compose(self.metric.phi).scale(Const(self.epsilon))
            ).matrix()
            worst = scan(lambda env: anti.evaluate(env, {}), envs, chart.coord_names).max_residual
            if worst > self.probe_tol:
                raise ValueError(f"structure is not metric-compatible: phi residual {worst:.3e}")

    @property
    def chart(self) -> Chart:
        return self.op.chart

    def apply(self, x: Section) -> Section:
        return self.op.apply(x)

    def block_tensors(self) -> tuple[TensorField, TensorField, TensorField]:
        """The classical data (A, pi, sigma) hiding in the block matrix.

        The vector-to-vector block is A itself, the form-to-vector block is
        sharp(pi) and the vector-to-form block is flat(sigma); building the
        tensors through ``from_matrix`` re-validates their symmetry type.
        """
        chart = self.chart
        m = chart.dim
        a = _endo_field(chart, self.op.a)
        pi = TensorField.from_matrix(
            chart, "bivector_antisym", [[self.op.b[j, i] for j in range(m)] for i in range(m)]
        )
        sigma = TensorField.from_matrix(
            chart, "twoform_antisym", [[self.op.c[j, i] for j in range(m)] for i in range(m)]
        )
        return a, pi, sigma


@dataclass(frozen=True)
class DiracData:
    """An almost Dirac structure, kept as a maximal isotropic frame.

    ``f_e`` is the derived gamma-isometry when a metric is attached and
    ``presentation`` records which construction produced the frame.
    """

    frame: Frame
    metric: GenMetric | None = None
    f_e: TensorField | None = None
    presentation: str = "para_eigenbundle"
    probe_tol: float = 1e-9

    def __post_init__(self):
        if self.presentation not in PRESENTATIONS:
            raise ValueError(f"unknown presentation {self.presentation!r}")
        chart = self.frame.chart
        m = chart.dim
        if len(self.frame) != m:
            raise ValueError(f"a Dirac frame on an m-manifold has m sections, got {len(self.frame)}")
        envs = _probe_envs(chart)
        secs = self.frame.sections
        pairings = [[neutral_pairing(a, b) for b in secs] for a in secs]

        def gram(env):
            cache: dict[int, float] = {}
            return np.array([[p._eval(env, cache) for p in row] for row in pairings])

        worst = scan(gram, envs, chart.coord_names).max_residual
        if worst > self.probe_tol:
            raise ValueError(f"frame is not isotropic: residual {worst:.3e}")
        rank = self.frame.rank_residuals(envs).max_residual
        if rank > 0:
            raise ValueError("frame drops rank at a probe point")
        if self.f_e is not None and self.metric is not None:
            fmat = _endo_matrix(self.f_e, chart)
            worst = _isometry_residual(fmat, self.metric.pair.gamma, envs)
            if worst > self.probe_tol:
                raise ValueError(f"f_e is not a gamma-isometry: residual {worst:.3e}")

    @property
    def chart(self) -> Chart:
        return self.frame.chart


# ---------------------------------------------------------------------------
# builders


def eigenbundle_frame(f: TensorField | ExprMatrix, metric: GenMetric | MetricPair, sign: int) -> Frame:
    """Frame of the +-1 eigenbundle of the structure attached to the isometry f."""
    gm = _as_metric(metric)
    chart = gm.chart
    m = chart.dim
    fmat = _endo_matrix(f, chart)
    ident = ExprMatrix.identity(m)
    f1 = ident + fmat if sign > 0 else ident - fmat
    f2 = ident - fmat if sign > 0 else ident + fmat
    form_rows = gm.pair.psi_flat @ f1 + gm.pair.gamma_flat @ f2
    sections = []
    for i in range(m):
        basis = [Const(1) if j == i else ZERO for j in range(m)]
        sections.append(
            Section(
                TensorField.vector(chart, f1.apply(basis)),
                TensorField.oneform(chart, form_rows.apply(basis)),
            )
        )
    return Frame(tuple(sections), "E" if sign > 0 else "E_prime")


def para_from_isometry(
    f: TensorField | ExprMatrix, metric: GenMetric | MetricPair, probe_tol: float = 1e-9
) -> tuple[GenEndoStructure, DiracData, DiracData]:
    """The paracomplex structure of a gamma-isometry, with its eigenbundles.

    Psi sends (X, flat(psi+gamma) X) to (FX, flat(psi-gamma) FX) and inverts
    on the way back; the returned Dirac pair is (E, E') with E' = phi(E).
    The E'-side isometry is -F, since swapping the eigenvalue roles negates
    the structure.
    """
    gm = _as_metric(metric)
    chart = gm.chart
    fmat = _endo_matrix(f, chart)
    envs = _probe_envs(chart)
    worst = _isometry_residual(fmat, gm.pair.gamma, envs)
    if worst > probe_tol:
        raise ValueError(f"f is not a gamma-isometry: residual {worst:.3e}")
    op = _graph_operator(gm, [(-1, fmat, +1), (+1, fmat.inverse(), -1)])
    structure = GenEndoStructure(op, +1, gm, probe_tol)
    e_data = DiracData(
        eigenbundle_frame(fmat, gm, +1), gm, _endo_field(chart, fmat), "para_eigenbundle", probe_tol
    )
    eprime_data = DiracData(
        eigenbundle_frame(fmat, gm, -1), gm, _endo_field(chart, fmat.neg()), "para_eigenbundle", probe_tol
    )
    return structure, e_data, eprime_data


def hermitian_from_pair(
    jplus: TensorField | ExprMatrix,
    jminus: TensorField | ExprMatrix,
    metric: GenMetric | MetricPair,
    probe_tol: float = 1e-9,
) -> GenEndoStructure:
    """The complex structure acting by J+ on V+ and J- on V-.

    Both arguments must be gamma-compatible almost complex structures; the
    result preserves the eigenbundles instead of swapping them.
    """
    gm = _as_metric(metric)
    chart = gm.chart
    m = chart.dim
    envs = _probe_envs(chart)
    mats = []
    for name, j in (("J+", jplus), ("J-", jminus)):
        jmat = _endo_matrix(j, chart)
        sq = jmat @ jmat + ExprMatrix.identity(m)
        worst = scan(lambda env: sq.evaluate(env, {}), envs, chart.coord_names).max_residual
        if worst > probe_tol:
            raise ValueError(f"{name} does not square to -Id: residual {worst:.3e}")
        worst = _isometry_residual(jmat, gm.pair.gamma, envs)
        if worst > probe_tol:
            raise ValueError(f"{name} is not gamma-compatible: residual {worst:.3e}")
        mats.append(jmat)
    op = _graph_operator(gm, [(+1, mats[0], +1), (-1, mats[1], -1)])
    return GenEndoStructure(op, -1, gm, probe_tol)


def hermitian_pair(structure: GenEndoStructure) -> tuple[TensorField, TensorField]:
    """Transfer an eigenbundle-preserving structure back to (J+, J-) on TM."""
    if structure.metric is None:
        raise ValueError("transferring to TM needs the attached metric")
    if structure.epsilon != -1:
        raise ValueError("only complex structures preserve V+ and V-")
    gm = structure.metric
    out = []
    for s in (+1, -1):
        jmat = structure.op.a + structure.op.b @ gm.pair.flat_pm(s)
        out.append(_endo_field(gm.chart, jmat))
    return out[0], out[1]


def para_isometry(structure: GenEndoStructure) -> TensorField:
    """Read the defining isometry F off a paracomplex structure's blocks."""
    if structure.metric is None:
        raise ValueError("recovering F needs the attached metric")
    if structure.epsilon != +1:
        raise ValueError("only paracomplex structures swap V+ and V-")
    gm = structure.metric
    return _endo_field(gm.chart, structure.op.a + structure.op.b @ gm.pair.flat_pm(+1))


def isometry_from_dirac(
    e: Frame | DiracData, metric: GenMetric | MetricPair, probe_tol: float = 1e-9
) -> TensorField:
    """Recover F_E from a maximal isotropic frame.

    Each frame section splits as lift_+(X_a) + lift_-(Y_a); F_E is the
    solution of F X_a = Y_a, which exists when the X_a span TM.  For a
    positive-definite gamma this always holds on an isotropic frame (the
    neutral pairing is definite on V+ and V-, so E meets neither), hence
    DegenerateFrameError signals a frame that left the isotropic locus
    (e.g. V- itself) or a numerically collapsed one.
    """
    frame = e.frame if isinstance(e, DiracData) else e
    gm = _as_metric(metric)
    chart = gm.chart
    m = chart.dim
    xs, ys = [], []
    for s in frame.sections:
        plus, minus = gm.decompose(s)
        xs.append([plus.vec.component(i) for i in range(m)])
        ys.append([minus.vec.component(i) for i in range(m)])
    xmat = ExprMatrix.from_fn(m, m, lambda i, a: xs[a][i])
    ymat = ExprMatrix.from_fn(m, m, lambda i, a: ys[a][i])
    envs = _probe_envs(chart)
    for env in envs:
        vals = xmat.evaluate(env, {})
        if numeric_rank(vals) < m:
            point = tuple(env[n] for n in chart.coord_names)
            raise DegenerateFrameError(
                f"V+ components of the frame do not span TM at {point}"
            )
    fmat = ymat @ xmat.inverse()
    worst = _isometry_residual(fmat, gm.pair.gamma, envs)
    if worst > probe_tol:
        raise ValueError(f"recovered map is not a gamma-isometry: residual {worst:.3e}")
    return _endo_field(chart, fmat)


def dirac_graph(
    tensor: TensorField,
    metric: GenMetric | MetricPair | None = None,
    *,
    integrability: bool = False,
    envs=None,
    tol: float = 1e-9,
) -> DiracData:
    """The graph Dirac structure of a 2-form theta or a bivector P.

    Frames are {(d_i, flat_theta d_i)} resp. {(sharp_P dx^i, dx^i)}.  With
    ``integrability=True`` the closedness (d theta = 0) or Poisson
    ([P, P] = 0) precondition is probed first - failure raises
    :class:`NonIntegrableGraphError` with a witness triple - and the frame
    is then checked to close under the Courant bracket.
    """
    chart = tensor.chart
    m = chart.dim
    gm = _as_metric(metric) if metric is not None else None
    if tensor.kind == "twoform_antisym":
        presentation = "graph_two_form"
        obstruction = exterior_derivative(tensor)
        vectors = _coordinate_vectors(chart)
        sections = [
            Section(v, TensorField.oneform(chart, [tensor.component(i, j) for j in range(m)]))
            for i, v in enumerate(vectors)
        ]
    elif tensor.kind == "bivector_antisym":
        presentation = "graph_bivector"
        obstruction = schouten_bracket(tensor, tensor)
        sp = sharp_matrix(tensor)
        sections = []
        for i in range(m):
            basis = [Const(1) if j == i else ZERO for j in range(m)]
            sections.append(
                Section(
                    TensorField.vector(chart, sp.apply(basis)),
                    TensorField.oneform(chart, basis),
                )
            )
    else:
        raise ValueError(f"dirac_graph needs a 2-form or a bivector, got {tensor.kind}")
    frame = Frame(tuple(sections), "E")
    if integrability:
        if envs is None:
            envs = sample_envs(chart)
        for (i, j, k), e in sorted(obstruction.components.items()):
            res = scan(lambda env: e._eval(env, {}), envs, chart.coord_names)
            if res.max_residual > tol:
                kindword = "closed" if presentation == "graph_two_form" else "Poisson"
                raise NonIntegrableGraphError(
                    f"graph tensor is not {kindword}: obstruction component {(i, j, k)} "
                    f"reaches {res.max_residual:.3e} at {res.witness}",
                    (i, j, k),
                    res.witness,
                )
        for i in range(m):
            for j in range(i + 1, m):
                bracket = courant_bracket(frame.sections[i], frame.sections[j])
                res = membership_residual(frame, bracket, envs)
                if res.max_residual > tol:
                    raise NonIntegrableGraphError(
                        f"bracket of frame sections {i},{j} leaves the span: "
                        f"residual {res.max_residual:.3e}",
                        (i, j),
                        res.witness,
                    )
    f_e = isometry_from_dirac(frame, gm) if gm is not None else None
    return DiracData(frame, gm, f_e, presentation)


# ---------------------------------------------------------------------------
# torsions and curvature


def nijenhuis_torsion(psi: GenEndoStructure | BigOperator, x: Section, y: Section) -> Section:
    """[Psi x, Psi y] - Psi[x, Psi y] - Psi[Psi x, y] + Psi^2 [x, y].

    The last term is applied literally through the operator square, so the
    same formula serves complex, paracomplex and 2-nilpotent inputs.
    """
    op = psi.op if isinstance(psi, GenEndoStructure) else psi
    px, py = op.apply(x), op.apply(y)
    out = courant_bracket(px, py)
    out = out - op.apply(courant_bracket(x, py))
    out = out - op.apply(courant_bracket(px, y))
    return out + op.compose(op).apply(courant_bracket(x, y))


def ehresmann(psi: GenEndoStructure | BigOperator, x: Section, y: Section) -> Section:
    """Curvature of the +1-eigenbundle relative to the -1 one.

    Computes (1/2)(Id - Psi)[(Id + Psi)x, (Id + Psi)y]; the prefactor makes
    the identity with the Nijenhuis torsion exact (see the module note).
    The swapped curvature is this applied to -Psi.
    """
    op = psi.op if isinstance(psi, GenEndoStructure) else psi
    ident = BigOperator.identity(op.chart)
    plus = ident + op
    minus = ident - op
    return minus.apply(courant_bracket(plus.apply(x), plus.apply(y))).scale(_HALF)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class IntegrabilityReport:
    """Bracket-closure residuals of a Dirac frame, plus a rank diagnostic."""

    max_residual: float
    witness: tuple[tuple[int, int, int], tuple[float, ...]] | None
    tangent_rank_min: int
    tangent_rank_max: int
    evaluated: int

    def ok(self, tol: float = 1e-9) -> bool:
        return self.max_residual <= tol

    @property
    def tangent_rank_jumps(self) -> bool:
        return self.tangent_rank_min != self.tangent_rank_max


def integrability_report(e: DiracData | Frame, envs=None) -> IntegrabilityReport:
    """Max of |g([e_i, e_j], e_k)| over frame triples and sample points."""
    frame = e.frame if isinstance(e, DiracData) else e
    chart = frame.chart
    m = chart.dim
    if envs is None:
        envs = sample_envs(chart)
    worst = 0.0
    witness = None
    evaluated = 0
    for i in range(len(frame)):
        for j in range(i + 1, len(frame)):
            bracket = courant_bracket(frame.sections[i], frame.sections[j])
            for k in range(len(frame)):
                pairing = neutral_pairing(bracket, frame.sections[k])
                res = scan(lambda env: pairing._eval(env, {}), envs, chart.coord_names)
                evaluated += res.evaluated
                if res.max_residual > worst:
                    worst = res.max_residual
                    witness = ((i, j, k), res.witness)
    rank_min, rank_max = 2 * m, 0
    for env in envs:
        cache: dict[int, float] = {}
        vecs = np.column_stack([s.vec.evaluate(env, cache) for s in frame.sections])
        r = numeric_rank(vecs)
        rank_min = min(rank_min, r)
        rank_max = max(rank_max, r)
    return IntegrabilityReport(worst, witness, rank_min, rank_max, evaluated)


@dataclass(frozen=True)
class ParallelReport:
    """Residuals deciding whether the canonical connection preserves E.

    ``derivative_residual`` is the isometry-derivative condition
    gamma(F_E Z, (D_X F_E) Y) = (dpsi(X,Y,Z) + dpsi(X, F_E Y, F_E Z)) / 2,
    ``twist_residual`` is dpsi(X,Y,Z) + dpsi(F_E X, F_E Y, F_E Z), and
    ``span_residual`` is the direct check that covariant derivatives of
    frame sections stay in the span of the frame.  The first and third
    measure the same property two ways and must agree at any tolerance
    separating pass from fail.
    """

    derivative_residual: float
    twist_residual: float
    span_residual: float

    def ok(self, tol: float = 1e-9) -> bool:
        return max(self.derivative_residual, self.twist_residual, self.span_residual) <= tol

    def consistent(self, tol: float = 1e-9) -> bool:
        return (self.derivative_residual <= tol) == (self.span_residual <= tol)


def parallel_dirac_check(
    e: DiracData, metric: GenMetric | MetricPair | None = None, envs=None
) -> ParallelReport:
    """Check E against the canonical big connection of (gamma, psi)."""
    gm = _as_metric(metric) if metric is not None else e.metric
    if gm is None:
        raise ValueError("parallel check needs a metric")
    chart = gm.chart
    m = chart.dim
    if envs is None:
        envs = sample_envs(chart)
    f_e = e.f_e if e.f_e is not None else isometry_from_dirac(e.frame, gm)
    fmat = _endo_matrix(f_e, chart)
    lc = levi_civita(gm.pair)
    dpsi = gm.pair.dpsi()
    gamma = gm.pair.gamma
    vectors = _coordinate_vectors(chart)

    def f_of(v: TensorField) -> TensorField:
        return TensorField.vector(chart, fmat.apply([v.component(t) for t in range(m)]))

    derivative_worst = 0.0
    twist_worst = 0.0
    for x in vectors:
        for y in vectors:
            dxf_y = lc.apply(x, f_of(y)) - f_of(lc.apply(x, y))
            for z in vectors:
                fy, fz = f_of(y), f_of(z)
                lhs = interior_product(dxf_y, musical(gamma, "flat", fz)).component()
                rhs = mul(
                    _HALF,
                    add(_three_form_value(dpsi, x, y, z), _three_form_value(dpsi, x, fy, fz)),
                )
                res = scan(lambda env, e_=sub(lhs, rhs): e_._eval(env, {}), envs, chart.coord_names)
                derivative_worst = max(derivative_worst, res.max_residual)
                tw = add(
                    _three_form_value(dpsi, x, y, z),
                    _three_form_value(dpsi, f_of(x), fy, fz),
                )
                res = scan(lambda env, e_=tw: e_._eval(env, {}), envs, chart.coord_names)
                twist_worst = max(twist_worst, res.max_residual)
    nabla = canonical_connection(gm)
    span_worst = 0.0
    for s in e.frame.sections:
        for x in vectors:
            ds = nabla.derivative_along(x, s)
            span_worst = max(span_worst, membership_residual(e.frame, ds, envs).max_residual)
    return ParallelReport(derivative_worst, twist_worst, span_worst)


@dataclass(frozen=True)
class ConnectionCompatReport:
    """Torsion sums of a big connection against a structure.

    ``commutation_residual`` probes nabla Psi = Psi nabla (precondition -
    the sums are still evaluated when it fails, flagged by ``commutes``);
    ``identity_residual`` is the five-term pairing between the Nijenhuis
    torsion and the Gualtieri torsion; ``integrability_sum`` is the
    eps-weighted four-term sum over basis triples, and ``eigenbundle_sum``
    restricts the third slot to the +1-eigenbundle (paracomplex only).
    """

    commutation_residual: float
    commutes: bool
    identity_residual: float
    integrability_sum: float
    eigenbundle_sum: float | None


def connection_integrability_test(
    obj: GenEndoStructure | DiracData,
    conn: BigConnection,
    envs=None,
    tol: float = 1e-8,
) -> ConnectionCompatReport:
    """Evaluate the Nijenhuis/Gualtieri torsion sums for a structure.

    The five-term identity couples g(N_Psi(x,y), z) with four torsion terms
    and must vanish for any metric connection commuting with the structure;
    the four-term sums vanish precisely on integrable structures (all
    sections, resp. third slot in E).
    """
    if isinstance(obj, DiracData):
        if obj.metric is None or obj.f_e is None:
            raise ValueError("need a metric-backed Dirac structure")
        structure, _, _ = para_from_isometry(obj.f_e, obj.metric)
    else:
        structure = obj
    op = structure.op
    eps = structure.epsilon
    chart = op.chart
    if envs is None:
        envs = sample_envs(chart)
    basis = Section.basis(chart)
    vectors = _coordinate_vectors(chart)
    commutation = 0.0
    for x in vectors:
        for s in basis:
            diff = conn.derivative_along(x, op.apply(s)) - op.apply(conn.derivative_along(x, s))
            commutation = max(
                commutation,
                scan(lambda env, d=diff: d.evaluate(env, {}), envs, chart.coord_names).max_residual,
            )

    def four_terms(x: Section, y: Section, z: Section) -> Expr:
        px, py, pz = op.apply(x), op.apply(y), op.apply(z)
        total = mul(Const(eps), gualtieri_torsion(conn, x, y, z))
        total = add(total, gualtieri_torsion(conn, x, py, pz))
        total = add(total, gualtieri_torsion(conn, px, y, pz))
        return add(total, gualtieri_torsion(conn, px, py, z))

    identity_worst = 0.0
    integrability_worst = 0.0
    for i in range(len(basis)):
        for j in range(i + 1, len(basis)):
            x, y = basis[i], basis[j]
            pairing_base = nijenhuis_torsion(op, x, y)
            for z in basis:
                s4 = four_terms(x, y, z)
                total = add(neutral_pairing(pairing_base, z), s4)
                res = scan(lambda env, e_=total: e_._eval(env, {}), envs, chart.coord_names)
                identity_worst = max(identity_worst, res.max_residual)
                res = scan(lambda env, e_=s4: e_._eval(env, {}), envs, chart.coord_names)
                integrability_worst = max(integrability_worst, res.max_residual)
    eigen_worst = None
    if eps == +1:
        ident = BigOperator.identity(chart)
        plus = ident + op
        zs = [plus.apply(b) for b in basis[: chart.dim]]
        eigen_worst = 0.0
        for i in range(len(basis)):
            for j in range(i + 1, len(basis)):
                x, y = basis[i], basis[j]
                px, py = op.apply(x), op.apply(y)
                for z in zs:
                    total = add(gualtieri_torsion(conn, x, y, z), gualtieri_torsion(conn, x, py, z))
                    total = add(total, gualtieri_torsion(conn, px, y, z))
                    total = add(total, gualtieri_torsion(conn, px, py, z))
                    res = scan(lambda env, e_=total: e_._eval(env, {}), envs, chart.coord_names)
                    eigen_worst = max(eigen_worst, res.max_residual)
    return ConnectionCompatReport(
        commutation, commutation <= tol, identity_worst, integrability_worst, eigen_worst
    )


def commuting_connection(
    f: TensorField | ExprMatrix, metric: GenMetric | MetricPair, probe_tol: float = 1e-9
) -> BigConnection:
    """A metric big connection commuting with the structure of the isometry f.

    Single-chart construction: D+ parallelizes the coordinate frame and D-
    parallelizes its f-image, so D- (f Y) = f (D+ Y) holds identically.
    Both halves are metric only when the metric coefficients are constant
    on the chart, which is required here.
    """
    gm = _as_metric(metric)
    chart = gm.chart
    m = chart.dim
    names = chart.coord_names
    for i in range(m):
        for j in range(i, m):
            for n in names:
                if not _is_probe_zero(gm.pair.gamma.component(i, j).diff(n), chart, probe_tol):
                    raise ValueError("chart construction needs constant metric coefficients")
    fmat = _endo_matrix(f, chart)
    finv = fmat.inverse()
    zero = tuple(tuple(tuple(ZERO for _ in range(m)) for _ in range(m)) for _ in range(m))
    dplus = AffineConnection(chart, zero, "D+")
    gammas = []
    for i in range(m):
        dfi = ExprMatrix.from_fn(m, m, lambda p, q: fmat[p, q].diff(names[i]))
        gammas.append((dfi @ finv).neg())
    table = tuple(
        tuple(tuple(gammas[i][k, j] for j in range(m)) for i in range(m)) for k in range(m)
    )
    dminus = AffineConnection(chart, table, "D-")
    return BigConnection(dplus, dminus, gm)


def _is_probe_zero(e: Expr, chart: Chart, tol: float) -> bool:
    return all(abs(e._eval(env, {})) <= tol for env in _probe_envs(chart))
