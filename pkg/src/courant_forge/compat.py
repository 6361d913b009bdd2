"""Metric compatibility for 2-nilpotent structures.

Attaching a generalized Riemannian metric G = g(phi., .) to a 2-nilpotent
tau splits the big tangent bundle as E + phi(E) + S, with S the G-orthogonal
of E inside ker tau (empty exactly in the almost-tangent case rank tau =
dim M).  Compatibility of tau with G is a single condition wearing six
equivalent coats, all measured here side by side:

  1. G is invariant under tau.phi.tau against tau;
  2. omega_E is invariant under lambda = tau.phi restricted to E;
  3. lambda^2 = -Id on E;
  4. lambda'^2 = -Id on phi(E), lambda' = phi.tau restricted;
  5. (tau.phi)^3 + tau.phi = 0 on the whole bundle;
  6. (phi.tau)^3 + phi.tau = 0.

A compatible pair carries Phi = tau.phi + phi.tau, a skew (for both g and G)
bundle map with Phi^3 + Phi = 0 that squares to -Id precisely in the
almost-tangent case; together with the reflection Psi across E along phi(E)
it reconstructs tau as (1/2) Phi (Id + Psi) phi, the bridge to the
eigenbundle presentation.

The Riemannian side: G restricted to E is a fiber metric on the Lie
algebroid (E, Courant bracket, pr_TM), whose Levi-Civita connection D^E is
built by the Koszul formula on the image frame.  The structure is of Kaehler
type when lambda is D^E-parallel; the derivative of lambda is tied to
d_E omega_E and the Nijenhuis torsion of lambda by a fixed-sign display
(see lambda_derivative_residual) pinned by a regression test.

A big connection commuting with tau is assembled blockwise on the
E/phi(E)/S splitting: a Hermitianized metric connection on E (making the
omega_E-correction vanish identically), its g-dual on phi(E), and a
phi-averaged metric connection on S.  Its Gualtieri-torsion behaviour on
kernel triples and the three-term sums over tau-images is what
``tau_torsion_conditions`` measures.
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
    span_agreement_residual,
)
from .connections import AffineConnection, BigConnection, gualtieri_torsion
from .expressions import Const, Expr, ZERO, add, mul, sub
from .fields import Chart, TensorField, apply_vector
from .genmetric import GenMetric
from .matrices import ExprMatrix
from .nilpotent import (
    STRUCTURE_TOL,
    TauStructure,
    combine,
    de_omega,
    frame_columns,
    greedy_columns,
    lsq_pinv,
    nijenhuis_tau,
    pairing_rows,
    section_components,
    section_from_components,
)
from .sampling import numeric_rank, scan

_HALF = Const(Fraction(1, 2))


def _expr_residual(e: Expr, envs, chart: Chart) -> float:
    return scan(lambda env: e.evaluate(env), envs, chart.coord_names).max_residual


def _matrix_residual(mat: ExprMatrix, envs, chart: Chart) -> float:
    return scan(lambda env: mat.evaluate(env), envs, chart.coord_names).max_residual


def _section_residual(s: Section, envs) -> float:
    return scan(lambda env: s.evaluate(env, {}), envs, s.chart.coord_names).max_residual


def frame_pinv(frame: Frame) -> ExprMatrix:
    return lsq_pinv(frame_columns(frame))


def operator_matrix_on_frame(op_apply, frame: Frame, pinv: ExprMatrix) -> ExprMatrix:
    """Coefficient matrix of an operator preserving the frame's span."""
    cols = [pinv.apply(section_components(op_apply(s))) for s in frame.sections]
    return ExprMatrix.from_fn(len(frame), len(frame), lambda i, j: cols[j][i])


def gram(metric: GenMetric, f1: Frame, f2: Frame) -> ExprMatrix:
    return ExprMatrix.from_fn(
        len(f1), len(f2), lambda a, b: metric.big_metric(f1.sections[a], f2.sections[b])
    )


# ---------------------------------------------------------------------------
# the compatible pair


@dataclass
class MetricTau:
    """A 2-nilpotent structure together with a generalized metric.

    Carries the derived operators lambda (tau.phi on the image frame),
    lambda_prime (phi.tau on the conjugate frame phi(E)), their unrestricted
    bundle versions lambda_tilde/lambda_tilde_prime, and the G-orthogonal
    complement S of E inside the kernel (None in the almost-tangent case).
    Compatibility is *measured* by :func:`metric_compat`, never assumed.
    """

    tau: TauStructure
    metric: GenMetric

    def __post_init__(self):
        self.chart = self.tau.chart
        self.phi = self.metric.phi
        if self.tau.image_frame is None:
            raise ValueError("rank-0 structures carry no compatibility data")
        e = self.tau.image_frame
        self.phi_frame = Frame(tuple(self.phi.apply(s) for s in e.sections), "E_prime")
        self._pinv_e = self.tau._pinv_e
        self._pinv_phi = frame_pinv(self.phi_frame)
        self.lam = operator_matrix_on_frame(
            lambda s: self.tau.apply(self.phi.apply(s)), e, self._pinv_e
        )
        self.lam_prime = operator_matrix_on_frame(
            lambda s: self.phi.apply(self.tau.apply(s)), self.phi_frame, self._pinv_phi
        )
        self.lambda_tilde = self.tau.op.compose(self.phi)
        self.lambda_tilde_prime = self.phi.compose(self.tau.op)
        self.g_e = gram(self.metric, e, e)
        self.g_e_inv = self.g_e.inverse()
        self.s_frame = self._build_s_frame()
        self.g_s = None if self.s_frame is None else gram(self.metric, self.s_frame, self.s_frame)

    def _build_s_frame(self) -> Frame | None:
        """G-orthogonal complement of E inside the kernel, as kernel combos."""
        kernel = self.tau.kernel_frame
        e = self.tau.image_frame
        rank = len(e)
        nk = len(kernel)
        if nk == rank:  # almost tangent: the kernel is E itself, S is empty
            return None
        mat = ExprMatrix.from_fn(
            rank, nk, lambda a, j: self.metric.big_metric(e.sections[a], kernel.sections[j])
        )
        piv = greedy_columns(mat.evaluate(self.tau.probe_envs[0]), stop=rank)
        if len(piv) != rank:
            raise ValueError("orthogonal-complement pivot extraction is rank deficient")
        block = ExprMatrix.from_fn(rank, rank, lambda i, j: mat[i, piv[j]])
        block_inv = block.inverse()
        out = []
        for f in (j for j in range(nk) if j not in piv):
            sol = block_inv.apply([mat[i, f] for i in range(rank)])
            sec = kernel.sections[f]
            for k, j in enumerate(piv):
                sec = sec - kernel.sections[j].scale(sol[k])
            out.append(sec)
        return Frame(tuple(out), "S")

    def lambda_apply(self, s: Section) -> Section:
        """lambda on an image-bundle section, through frame coefficients."""
        coeffs = self.lam.apply(self._pinv_e.apply(section_components(s)))
        return combine(self.tau.image_frame, coeffs)

    def phi_operator(self) -> BigOperator:
        """Phi = tau.phi + phi.tau."""
        return self.lambda_tilde + self.lambda_tilde_prime

    def nijenhuis_lambda(self, u: Section, v: Section) -> Section:
        """Nijenhuis torsion of lambda for the restricted bracket on E."""
        lu, lv = self.lambda_apply(u), self.lambda_apply(v)
        n = courant_bracket(lu, lv)
        n = n - self.lambda_apply(courant_bracket(lu, v))
        n = n - self.lambda_apply(courant_bracket(u, lv))
        n = n + self.lambda_apply(self.lambda_apply(courant_bracket(u, v)))
        return n


@dataclass(frozen=True)
class CompatReport:
    """Residuals of the six equivalent compatibility conditions plus the
    identities every compatible pair must satisfy (Hermitian pairing of
    omega_E with G through lambda, and the Phi algebra)."""

    conditions: dict[str, float]
    hermitian: float
    phi_cube: float
    phi_g_skew: float
    phi_big_skew: float

    def compatible(self, tol: float = STRUCTURE_TOL) -> bool:
        return all(v <= tol for v in self.conditions.values())

    def consistent(self, tol: float = STRUCTURE_TOL) -> bool:
        """All six conditions pass together or fail together."""
        verdicts = {v <= tol for v in self.conditions.values()}
        return len(verdicts) == 1


def compatibility_conditions(mt: MetricTau, envs=None) -> dict[str, float]:
    """The six equivalent conditions, each as a worst-case residual."""
    tau, metric = mt.tau, mt.metric
    chart = tau.chart
    envs = tau.probe_envs if envs is None else envs
    basis = Section.basis(chart)
    out: dict[str, float] = {}
    tb = [tau.apply(b) for b in basis]
    tft = [tau.apply(mt.phi.apply(t)) for t in tb]
    worst = 0.0
    for i in range(len(basis)):
        for j in range(i, len(basis)):
            d = sub(metric.big_metric(tft[i], tft[j]), metric.big_metric(tb[i], tb[j]))
            worst = max(worst, _expr_residual(d, envs, chart))
    out["big_metric_invariance"] = worst
    worst = 0.0
    for i in range(len(basis)):
        for j in range(i, len(basis)):
            d = sub(
                tau.omega_value(mt.lambda_apply(tb[i]), mt.lambda_apply(tb[j])),
                tau.omega_value(tb[i], tb[j]),
            )
            worst = max(worst, _expr_residual(d, envs, chart))
    out["omega_invariance"] = worst
    ident = ExprMatrix.identity(tau.rank)
    out["complex_on_image"] = _matrix_residual(mt.lam @ mt.lam + ident, envs, chart)
    out["complex_on_conjugate"] = _matrix_residual(
        mt.lam_prime @ mt.lam_prime + ident, envs, chart
    )
    for key, op in (
        ("cube_tau_phi", mt.lambda_tilde),
        ("cube_phi_tau", mt.lambda_tilde_prime),
    ):
        cube = op.compose(op).compose(op)
        out[key] = _matrix_residual(cube.matrix() + op.matrix(), envs, chart)
    return out


def metric_compat(tau: TauStructure, metric: GenMetric, envs=None) -> tuple[MetricTau, CompatReport]:
    """Attach a metric and measure all six compatibility conditions."""
    mt = MetricTau(tau, metric)
    envs = tau.probe_envs if envs is None else envs
    chart = tau.chart
    conditions = compatibility_conditions(mt, envs)
    secs = tau.image_frame.sections
    hermitian = 0.0
    for a in range(tau.rank):
        for b in range(tau.rank):
            d = add(tau.omega[a, b], metric.big_metric(secs[a], mt.lambda_apply(secs[b])))
            hermitian = max(hermitian, _expr_residual(d, envs, chart))
    phi = mt.phi_operator()
    cube = phi.compose(phi).compose(phi)
    phi_cube = _matrix_residual(cube.matrix() + phi.matrix(), envs, chart)
    phi_g_skew = phi.g_skew_residual(envs).max_residual
    basis = Section.basis(chart)
    phi_big_skew = 0.0
    for i in range(len(basis)):
        for j in range(i, len(basis)):
            d = add(
                metric.big_metric(phi.apply(basis[i]), basis[j]),
                metric.big_metric(basis[i], phi.apply(basis[j])),
            )
            phi_big_skew = max(phi_big_skew, _expr_residual(d, envs, chart))
    return mt, CompatReport(conditions, hermitian, phi_cube, phi_g_skew, phi_big_skew)


# ---------------------------------------------------------------------------
# eigenbundle presentation: tau <-> (Phi, Psi) <-> (E, Phi)


def eigenbundle_reflection(e_frame: Frame, metric: GenMetric) -> BigOperator:
    """Psi = Id - 2 P with P the projection onto phi(E) along ker(pairing with E).

    Fixes E pointwise and negates phi(E); built from the frame Gram matrix,
    so it needs no quotient bookkeeping.
    """
    chart = e_frame.chart
    phi_cols = ExprMatrix.from_fn(
        2 * chart.dim,
        len(e_frame),
        lambda i, j: section_components(metric.phi.apply(e_frame.sections[j]))[i],
    )
    g_e = ExprMatrix.from_fn(
        len(e_frame),
        len(e_frame),
        lambda a, b: metric.big_metric(e_frame.sections[a], e_frame.sections[b]),
    )
    projector = phi_cols @ g_e.inverse() @ pairing_rows(e_frame)
    mat = ExprMatrix.identity(2 * chart.dim) - projector.scale(Const(Fraction(2)))
    return _operator_from_matrix(mat, chart)


def _operator_from_matrix(mat: ExprMatrix, chart: Chart) -> BigOperator:
    m = chart.dim

    def blk(r0: int, c0: int) -> ExprMatrix:
        return ExprMatrix.from_fn(m, m, lambda i, j: mat[r0 + i, c0 + j])

    return BigOperator(chart, blk(0, 0), blk(0, m), blk(m, 0), blk(m, m))


def tau_from_phi_psi(phi_op: BigOperator, psi: BigOperator, metric: GenMetric, envs) -> BigOperator:
    """tau = (1/2) Phi (Id + Psi) phi for a commuting (Phi, Psi) pair."""
    chart = phi_op.chart
    commute = phi_op.compose(psi).matrix() - psi.compose(phi_op).matrix()
    res = _matrix_residual(commute, envs, chart)
    if res > STRUCTURE_TOL:
        raise ValueError(f"the pair does not commute (residual {res:.3e})")
    half = BigOperator.identity(chart) + psi
    return phi_op.compose(half).compose(metric.phi).scale(_HALF)


def tau_from_image_phi(e_frame: Frame, phi_op: BigOperator, metric: GenMetric, envs) -> BigOperator:
    """tau rebuilt from (E, Phi) with Phi preserving E; Psi derived from E."""
    worst = 0.0
    for s in e_frame.sections:
        worst = max(worst, membership_residual(e_frame, phi_op.apply(s), envs).max_residual)
    if worst > STRUCTURE_TOL:
        raise ValueError(f"Phi does not preserve the image bundle (residual {worst:.3e})")
    return tau_from_phi_psi(phi_op, eigenbundle_reflection(e_frame, metric), metric, envs)


@dataclass(frozen=True)
class CorrespondenceReport:
    """Round-trips between the presentations of a compatible pair.

    ``tau_roundtrip``: tau -> (Phi, Psi) -> tau.
    ``image_roundtrip``: tau -> (E, Phi) -> tau.
    ``commutator_identity``: Phi.Psi = Psi.Phi = tau.phi - phi.tau.
    ``image_match``: im(Id + Psi) against E as spans.
    ``square_identity``: Phi^2 + Id (zero exactly in the almost-tangent case).
    ``integrability_membership``: worst [Phi x, phi y] + [phi x, Phi y] +
    phi Phi [Phi x, Phi y] membership residual against E — the
    integrability test in this presentation.
    ``nijenhuis_residual``: direct N_tau cross-check over the same pairs.
    """

    tau_roundtrip: float
    image_roundtrip: float
    commutator_identity: float
    image_match: float
    square_identity: float
    integrability_membership: float
    nijenhuis_residual: float


def correspondences(mt: MetricTau, envs=None) -> CorrespondenceReport:
    """Derive the (Phi, Psi) and (E, Phi) presentations and round-trip them.

    Only meaningful in the almost-tangent case (rank tau = dim M), where
    TM + T*M = E + phi(E); other ranks are rejected.
    """
    tau = mt.tau
    chart = tau.chart
    envs = tau.probe_envs if envs is None else envs
    if tau.rank != chart.dim:
        raise ValueError(
            f"presentation round-trips need rank {chart.dim} (almost tangent), got {tau.rank}"
        )
    phi_op = mt.phi_operator()
    psi = eigenbundle_reflection(tau.image_frame, mt.metric)
    rebuilt = tau_from_phi_psi(phi_op, psi, mt.metric, envs)
    tau_roundtrip = _matrix_residual(rebuilt.matrix() - tau.op.matrix(), envs, chart)
    rebuilt2 = tau_from_image_phi(tau.image_frame, phi_op, mt.metric, envs)
    image_roundtrip = _matrix_residual(rebuilt2.matrix() - tau.op.matrix(), envs, chart)
    diff = (mt.lambda_tilde - mt.lambda_tilde_prime).matrix()
    commutator_identity = max(
        _matrix_residual(phi_op.compose(psi).matrix() - diff, envs, chart),
        _matrix_residual(psi.compose(phi_op).matrix() - diff, envs, chart),
    )
    id_psi = ExprMatrix.identity(2 * chart.dim) + psi.matrix()
    cols = greedy_columns(id_psi.evaluate(envs[0]))
    image = Frame(
        tuple(
            section_from_components(chart, [id_psi[i, j] for i in range(2 * chart.dim)])
            for j in cols
        ),
        "generic",
    )
    image_match = span_agreement_residual(image, tau.image_frame, envs).max_residual
    square = phi_op.compose(phi_op).matrix() + ExprMatrix.identity(2 * chart.dim)
    square_identity = _matrix_residual(square, envs, chart)
    membership = 0.0
    nij = 0.0
    secs = tau.image_frame.sections
    for a in range(tau.rank):
        for b in range(a + 1, tau.rank):
            x, y = secs[a], secs[b]
            px, py = mt.phi.apply(x), mt.phi.apply(y)
            big_x, big_y = phi_op.apply(x), phi_op.apply(y)
            expr = courant_bracket(big_x, py) + courant_bracket(px, big_y)
            expr = expr + mt.phi.apply(phi_op.apply(courant_bracket(big_x, big_y)))
            membership = max(
                membership, membership_residual(tau.image_frame, expr, envs).max_residual
            )
            nij = max(nij, _section_residual(nijenhuis_tau(tau, tau.preimages[a], tau.preimages[b]), envs))
    return CorrespondenceReport(
        tau_roundtrip,
        image_roundtrip,
        commutator_identity,
        image_match,
        square_identity,
        membership,
        nij,
    )


# ---------------------------------------------------------------------------
# the Levi-Civita connection of G|_E on the image algebroid


class AlgebroidLeviCivita:
    """Koszul-formula connection on the image algebroid, in frame Christoffels.

    ``gammas[a][c, b]`` is the coefficient of e_c in D_{e_a} e_b; the anchor
    is the tangent projection, the bracket the (restricted) Courant bracket,
    the fiber metric G|_E.  Torsion-freeness and metricity are measured by
    the callers, not assumed.
    """

    def __init__(self, mt: MetricTau):
        self.mt = mt
        e = mt.tau.image_frame
        rank = len(e)
        metric = mt.metric
        secs = e.sections
        brackets = [
            [courant_bracket(secs[a], secs[b]) for b in range(rank)] for a in range(rank)
        ]
        gammas = []
        for a in range(rank):
            cols = []
            for b in range(rank):
                kappa = []
                for c in range(rank):
                    term = apply_vector(secs[a].vec, metric.big_metric(secs[b], secs[c]))
                    term = add(term, apply_vector(secs[b].vec, metric.big_metric(secs[a], secs[c])))
                    term = sub(term, apply_vector(secs[c].vec, metric.big_metric(secs[a], secs[b])))
                    term = add(term, metric.big_metric(brackets[a][b], secs[c]))
                    term = sub(term, metric.big_metric(brackets[b][c], secs[a]))
                    term = add(term, metric.big_metric(brackets[c][a], secs[b]))
                    kappa.append(term)
                sol = mt.g_e_inv.apply(kappa)
                cols.append([mul(_HALF, s) for s in sol])
            gammas.append(ExprMatrix.from_fn(rank, rank, lambda i, j, cols=cols: cols[j][i]))
        self.gammas = gammas
        self.rank = rank

    def derive_coeffs(self, a: int, coeffs) -> list[Expr]:
        anchored = [apply_vector(self.mt.tau.image_frame.sections[a].vec, c) for c in coeffs]
        corr = self.gammas[a].apply(list(coeffs))
        return [add(p, q) for p, q in zip(anchored, corr)]

    def derive(self, a: int, s: Section) -> Section:
        """D_{e_a} of an image-bundle section."""
        coeffs = self.mt._pinv_e.apply(section_components(s))
        return combine(self.mt.tau.image_frame, self.derive_coeffs(a, coeffs))

    def derive_along(self, x: Section, s: Section) -> Section:
        """D_x for an image-bundle direction x (C-infinity-linear in x)."""
        coeffs = self.mt._pinv_e.apply(section_components(x))
        out = Section.zero(self.mt.chart)
        for a in range(self.rank):
            out = out + self.derive(a, s).scale(coeffs[a])
        return out


# ---------------------------------------------------------------------------
# the commuting big connection, blockwise on E / phi(E) / S


class SplitConnection:
    """Coordinate-direction covariant derivative acting blockwise.

    On E: a G|_E-metric base connection Hermitianized so it commutes with
    lambda, which makes the omega_E-preserving correction Theta vanish
    identically (it is still computed and added, keeping the construction
    honest).  On phi(E): the g-dual.  On S: the phi-average of the metric
    base connection.  The result commutes with tau and preserves g, G and
    both metric eigenbundles; all of that is measured by the callers.
    """

    def __init__(self, mt: MetricTau):
        self.mt = mt
        chart = mt.chart
        m = chart.dim
        names = chart.coord_names
        rank = mt.tau.rank
        ge, ge_inv = mt.g_e, mt.g_e_inv
        lam = mt.lam
        omega = mt.tau.omega
        self.gamma_e: list[ExprMatrix] = []
        self.gamma_phi: list[ExprMatrix] = []
        self.gamma_s: list[ExprMatrix] = []
        for i in range(m):
            dge = ExprMatrix.from_fn(rank, rank, lambda a, b: ge[a, b].diff(names[i]))
            base = (ge_inv @ dge).scale(_HALF)
            dlam = ExprMatrix.from_fn(rank, rank, lambda a, b: lam[a, b].diff(names[i]))
            hermit = (base - (lam @ dlam) - (lam @ base @ lam)).scale(_HALF)
            dom = ExprMatrix.from_fn(rank, rank, lambda a, b: omega[a, b].diff(names[i]))
            nabla_om = dom - (hermit.transpose() @ omega) - (omega @ hermit)
            theta = (omega.inverse() @ nabla_om).scale(_HALF)
            gamma = hermit + theta
            self.gamma_e.append(gamma)
            # dual on phi(E): G_E Gamma'' = dG_E - Gamma'^T G_E
            self.gamma_phi.append(ge_inv @ (dge - (gamma.transpose() @ ge)))
        if mt.s_frame is not None:
            gs = mt.g_s
            gs_inv = gs.inverse()
            ns = len(mt.s_frame)
            pinv_s = frame_pinv(mt.s_frame)
            fmat = operator_matrix_on_frame(mt.phi.apply, mt.s_frame, pinv_s)
            for i in range(m):
                dgs = ExprMatrix.from_fn(ns, ns, lambda a, b: gs[a, b].diff(names[i]))
                base = (gs_inv @ dgs).scale(_HALF)
                avg = (base + (fmat @ ExprMatrix.from_fn(
                    ns, ns, lambda a, b: fmat[a, b].diff(names[i])
                )) + (fmat @ base @ fmat)).scale(_HALF)
                self.gamma_s.append(avg)
        # decomposition through g-pairings: g kills S against E and phi(E),
        # and pairs E with phi(E) exactly through G|_E
        self._b_e = pairing_rows(mt.tau.image_frame)
        self._b_phi = pairing_rows(mt.phi_frame)
        if mt.s_frame is not None:
            phi_s = Frame(tuple(mt.phi.apply(s) for s in mt.s_frame.sections), "generic")
            self._b_phi_s = pairing_rows(phi_s)
            self._gs_inv = mt.g_s.inverse()

    def decompose(self, s: Section):
        comps = section_components(s)
        ge_inv = self.mt.g_e_inv
        c_e = ge_inv.apply(self._b_phi.apply(comps))
        c_phi = ge_inv.apply(self._b_e.apply(comps))
        c_s = None
        if self.mt.s_frame is not None:
            c_s = self._gs_inv.apply(self._b_phi_s.apply(comps))
        return c_e, c_phi, c_s

    def recombine(self, c_e, c_phi, c_s) -> Section:
        mt = self.mt
        out = combine(mt.tau.image_frame, c_e) + combine(mt.phi_frame, c_phi)
        if c_s is not None:
            out = out + combine(mt.s_frame, c_s)
        return out

    def derivative_dir(self, i: int, s: Section) -> Section:
        names = self.mt.chart.coord_names
        c_e, c_phi, c_s = self.decompose(s)
        d_e = [add(c.diff(names[i]), t) for c, t in zip(c_e, self.gamma_e[i].apply(c_e))]
        d_phi = [add(c.diff(names[i]), t) for c, t in zip(c_phi, self.gamma_phi[i].apply(c_phi))]
        d_s = None
        if c_s is not None:
            d_s = [add(c.diff(names[i]), t) for c, t in zip(c_s, self.gamma_s[i].apply(c_s))]
        return self.recombine(d_e, d_phi, d_s)

    def derivative(self, x: Section, s: Section) -> Section:
        out = Section.zero(self.mt.chart)
        for i in range(self.mt.chart.dim):
            out = out + self.derivative_dir(i, s).scale(x.vec.component(i))
        return out


def big_connection_from_split(split: SplitConnection, envs=None) -> tuple[BigConnection, float]:
    """Read off the two tangent connections a split connection induces.

    A split connection preserving both metric eigenbundles acts on
    embedded vector fields as a pair of affine connections; the returned
    residual is the worst leakage out of the eigenbundles (zero when the
    construction is consistent).
    """
    mt = split.mt
    chart = mt.chart
    m = chart.dim
    metric = mt.metric
    envs = mt.tau.probe_envs if envs is None else envs
    worst = 0.0
    tables = {}
    for sign in (+1, -1):
        chris = [[[None] * m for _ in range(m)] for _ in range(m)]
        for j in range(m):
            vj = TensorField.vector(chart, [Const(Fraction(1 if t == j else 0)) for t in range(m)])
            sec = metric.embed_pm(vj, sign)
            for i in range(m):
                w = split.derivative_dir(i, sec)
                leak = w - metric.embed_pm(w.vec, sign)
                worst = max(worst, _section_residual(leak, envs))
                for k in range(m):
                    chris[k][i][j] = w.vec.component(k)
        tables[sign] = tuple(tuple(tuple(row) for row in plane) for plane in chris)
    return BigConnection(AffineConnection(chart, tables[+1]), AffineConnection(chart, tables[-1]), metric), worst


# ---------------------------------------------------------------------------
# Kaehler-type report


@dataclass(frozen=True)
class KahlerReport:
    """Everything the Kaehler-type verdict rests on, plus the induced-
    connection measurements for a tau-commuting metric big connection.

    ``lambda_parallel``: max |D^E lambda| over frame pairs — the verdict.
    ``lambda_nijenhuis``: max |N_lambda| over frame pairs.
    ``derivative_identity``: residual of the fixed-sign display tying
    G((D_X lambda)Y, Z) to d_E omega and N_lambda (independent sides).
    ``koszul_torsionless``/``koszul_metric``: sanity of D^E itself.
    ``commutation``: the assembled big connection against tau.
    ``eigenbundle_leak``: its leakage out of the metric eigenbundles.
    ``induced_torsion``: torsion of the induced E-connection of that big
    connection; ``induced_matches_koszul``: its distance from D^E.  The
    last two are *reported*, not asserted — they vanish on constant data
    but need not vanish in general (see the decision record).
    """

    lambda_parallel: float
    lambda_nijenhuis: float
    derivative_identity: float
    koszul_torsionless: float
    koszul_metric: float
    commutation: float
    eigenbundle_leak: float
    induced_torsion: float
    induced_matches_koszul: float

    def kahler(self, tol: float = STRUCTURE_TOL) -> bool:
        return self.lambda_parallel <= tol


def lambda_derivative_residual(
    mt: MetricTau,
    koszul: AlgebroidLeviCivita,
    x: Section,
    y: Section,
    z: Section,
    sign: int = +1,
) -> Expr:
    """Residual of G((D_x lambda)y, z) against its d_E omega/N_lambda display.

    The display: G((D_x lambda)y, z) = 1/2 [ d_E omega(x, y, z)
    - d_E omega(x, lambda y, lambda z) + G(N_lambda(y, z), lambda x) ].
    ``sign`` flips the N_lambda term; only +1 satisfies the identity, and a
    regression test keeps it that way.
    """
    tau, metric = mt.tau, mt.metric
    d_lam = koszul.derive_along(x, mt.lambda_apply(y)) - mt.lambda_apply(koszul.derive_along(x, y))
    lhs = metric.big_metric(d_lam, z)
    base = sub(
        de_omega(tau, x, y, z),
        de_omega(tau, x, mt.lambda_apply(y), mt.lambda_apply(z)),
    )
    nterm = metric.big_metric(mt.nijenhuis_lambda(y, z), mt.lambda_apply(x))
    if sign < 0:
        nterm = sub(ZERO, nterm)
    return sub(lhs, mul(_HALF, add(base, nterm)))


def _random_image_sections(tau: TauStructure, count: int, seed: int) -> list[Section]:
    """Constant rational-coefficient combinations of the image frame."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        weights = rng.integers(-3, 4, size=tau.rank)
        if not weights.any():
            weights[0] = 1
        coeffs = [Const(Fraction(int(w), 2)) for w in weights]
        out.append(combine(tau.image_frame, coeffs))
    return out


def kahler_type(mt: MetricTau, envs=None, tol: float = STRUCTURE_TOL, seed: int = 5) -> KahlerReport:
    """Build D^E, test lambda's parallelism, and exercise the display.

    Preconditions (integrable tau, metric-compatible pair) are measured and
    enforced; the induced-connection comparisons at the end run on the
    bundled tau-commuting big connection and are reported as-is.
    """
    tau = mt.tau
    chart = tau.chart
    envs = tau.probe_envs if envs is None else envs
    weak = tau.weak_residual(envs).max_residual
    nij = 0.0
    for a in range(tau.rank):
        for b in range(a + 1, tau.rank):
            nij = max(
                nij,
                _section_residual(nijenhuis_tau(tau, tau.preimages[a], tau.preimages[b]), envs),
            )
    if max(weak, nij) > tol:
        raise ValueError(
            f"structure is not integrable (closure {weak:.3e}, torsion {nij:.3e})"
        )
    conditions = compatibility_conditions(mt, envs)
    bad = max(conditions.values())
    if bad > tol:
        raise ValueError(f"pair is not metric-compatible (worst condition {bad:.3e})")
    koszul = AlgebroidLeviCivita(mt)
    secs = tau.image_frame.sections
    torsionless = 0.0
    metricity = 0.0
    parallel = 0.0
    n_lambda = 0.0
    for a in range(tau.rank):
        for b in range(tau.rank):
            t = koszul.derive(a, secs[b]) - koszul.derive(b, secs[a]) - courant_bracket(secs[a], secs[b])
            torsionless = max(torsionless, _section_residual(t, envs))
            d = koszul.derive(a, mt.lambda_apply(secs[b])) - mt.lambda_apply(koszul.derive(a, secs[b]))
            parallel = max(parallel, _section_residual(d, envs))
            if b > a:
                n_lambda = max(n_lambda, _section_residual(mt.nijenhuis_lambda(secs[a], secs[b]), envs))
            for c in range(tau.rank):
                lhs = apply_vector(secs[a].vec, mt.metric.big_metric(secs[b], secs[c]))
                rhs = add(
                    mt.metric.big_metric(koszul.derive(a, secs[b]), secs[c]),
                    mt.metric.big_metric(secs[b], koszul.derive(a, secs[c])),
                )
                metricity = max(metricity, _expr_residual(sub(lhs, rhs), envs, chart))
    display = 0.0
    randoms = _random_image_sections(tau, 3, seed)
    for x, y, z in zip(randoms, randoms[1:] + randoms[:1], randoms[2:] + randoms[:2]):
        r = lambda_derivative_residual(mt, koszul, x, y, z)
        display = max(display, _expr_residual(r, envs, chart))
    split = SplitConnection(mt)
    basis = Section.basis(chart)
    commutation = 0.0
    for i in range(chart.dim):
        for s in basis:
            d = split.derivative_dir(i, tau.apply(s)) - tau.apply(split.derivative_dir(i, s))
            commutation = max(commutation, _section_residual(d, envs))
    big, leak = big_connection_from_split(split, envs)
    induced_torsion = 0.0
    induced_match = 0.0
    for a in range(tau.rank):
        for b in range(tau.rank):
            ind = big.derivative(secs[a], secs[b])
            induced_match = max(induced_match, _section_residual(ind - koszul.derive(a, secs[b]), envs))
            if b > a:
                t = ind - big.derivative(secs[b], secs[a]) - courant_bracket(secs[a], secs[b])
                induced_torsion = max(induced_torsion, _section_residual(t, envs))
    return KahlerReport(
        parallel,
        n_lambda,
        display,
        torsionless,
        metricity,
        commutation,
        leak,
        induced_torsion,
        induced_match,
    )


# ---------------------------------------------------------------------------
# torsion conditions of a big connection against the structure


@dataclass(frozen=True)
class TorsionConditionsReport:
    """Gualtieri-torsion behaviour of a tau-commuting big connection.

    ``commutation`` is the enforced precondition (with its two equivalent
    faces: the connection preserves the image bundle and the induced
    connection preserves omega_E).  ``kernel_triples`` is the worst scalar
    torsion over kernel triples; ``image_sum`` the worst three-term sum
    T(tau x, tau y, z) + T(tau x, y, tau z) + T(x, tau y, tau z);
    ``five_term_identity`` the worst residual of that sum against
    -g(N_tau(x, y), z) — an identity for every commuting connection, which
    is what makes the sum track integrability.  ``nijenhuis`` is the direct
    N_tau residual for the converse reading.
    """

    commutation: float
    preserves_image: float
    preserves_omega: float
    kernel_triples: float
    image_sum: float
    five_term_identity: float
    nijenhuis: float

    def conditions_hold(self, tol: float = STRUCTURE_TOL) -> bool:
        return max(self.kernel_triples, self.image_sum) <= tol

    def converse_consistent(self, tol: float = STRUCTURE_TOL) -> bool:
        """Conditions + commutation must certify integrability and vice versa."""
        return self.conditions_hold(tol) == (self.nijenhuis <= tol)


def tau_torsion_conditions(
    tau: TauStructure,
    conn: BigConnection,
    envs=None,
    spanning=None,
    tol: float = STRUCTURE_TOL,
) -> TorsionConditionsReport:
    """Measure the torsion conditions for a commuting big connection.

    ``spanning`` restricts the three-term-sum probes (defaults to the
    coordinate basis sections); the commutation precondition is enforced.
    """
    chart = tau.chart
    envs = tau.probe_envs if envs is None else envs
    basis = Section.basis(chart)
    commutation = 0.0
    for i in range(chart.dim):
        xi = basis[i]
        for s in basis:
            d = conn.derivative(xi, tau.apply(s)) - tau.apply(conn.derivative(xi, s))
            commutation = max(commutation, _section_residual(d, envs))
    if commutation > tol:
        raise ValueError(
            f"connection does not commute with the structure (residual {commutation:.3e})"
        )
    preserves_image = 0.0
    preserves_omega = 0.0
    if tau.image_frame is not None:
        secs = tau.image_frame.sections
        for i in range(chart.dim):
            xi = basis[i]
            for a in range(tau.rank):
                preserves_image = max(
                    preserves_image,
                    membership_residual(tau.image_frame, conn.derivative(xi, secs[a]), envs).max_residual,
                )
                for b in range(tau.rank):
                    lhs = apply_vector(xi.vec, tau.omega_value(secs[a], secs[b]))
                    rhs = add(
                        tau.omega_value(conn.derivative(xi, secs[a]), secs[b]),
                        tau.omega_value(secs[a], conn.derivative(xi, secs[b])),
                    )
                    preserves_omega = max(preserves_omega, _expr_residual(sub(lhs, rhs), envs, chart))
    kernel = tau.kernel_frame.sections
    kernel_triples = 0.0
    for a in range(len(kernel)):
        for b in range(a + 1, len(kernel)):
            for c in range(len(kernel)):
                t = gualtieri_torsion(conn, kernel[a], kernel[b], kernel[c])
                kernel_triples = max(kernel_triples, _expr_residual(t, envs, chart))
    if spanning is None:
        spanning = basis
    image_sum = 0.0
    five_term = 0.0
    nijenhuis = 0.0
    for x in spanning:
        tx = tau.apply(x)
        for y in spanning:
            ty = tau.apply(y)
            n_xy = nijenhuis_tau(tau, x, y)
            nijenhuis = max(nijenhuis, _section_residual(n_xy, envs))
            for z in spanning:
                tz = tau.apply(z)
                s = gualtieri_torsion(conn, tx, ty, z)
                s = add(s, gualtieri_torsion(conn, tx, y, tz))
                s = add(s, gualtieri_torsion(conn, x, ty, tz))
                image_sum = max(image_sum, _expr_residual(s, envs, chart))
                ident = add(s, neutral_pairing(n_xy, z))
                five_term = max(five_term, _expr_residual(ident, envs, chart))
    return TorsionConditionsReport(
        commutation,
        preserves_image,
        preserves_omega,
        kernel_triples,
        image_sum,
        five_term,
        nijenhuis,
    )
