"""Generalized 2-nilpotent structures on the big tangent bundle.

A 2-nilpotent structure is a bundle operator tau on TM + T*M with tau^2 = 0
and g(tau x, y) = -g(x, tau y).  Its image E = im(tau) is then g-isotropic
of even rank and its kernel is exactly the g-orthogonal of E, so tau factors
through an isomorphism tau': (TM+T*M)/ker tau -> E.  The two derived objects
everything below revolves around are

  * omega, the non-degenerate 2-form on E defined by omega(e1, e2) =
    g(e1, x2) for any preimage tau x2 = e2 (well-definedness is checked, not
    assumed), and Lambda = (-omega)^{-1}, the dual bivector with
    sharp_Lambda . flat_omega = -Id;
  * the tau-bracket [x, y]_tau = [tau x, y] + [x, tau y], which descends to
    the quotient when E is closed under the Courant bracket ("weak
    integrability") and is controlled by the Nijenhuis torsion of tau
    ("full integrability").

Quotient classes are never kept abstract: a fixed complement Q of ker tau
(greedily completed from the coordinate basis) represents each class by its
unique Q-component, and the transfer tau': Q -> E is inverted through the
frame coefficients.  All brackets "mod ker" therefore return honest sections
lying in the span of the complement frame.

The exterior derivative d_E on E-forms is the standard Lie-algebroid Cartan
formula with anchor pr_TM and the (restricted) Courant bracket; the
preimage-style evaluation of d_E omega(tau x, tau y, tau z) is kept as an
independent cross-check, never as the implementation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bigtangent import (
    BigOperator,
    Frame,
    Section,
    courant_bracket,
    membership_residual,
    neutral_pairing,
)
from .expressions import Expr, ONE, ZERO, add, mul, sub
from .fields import (
    Chart,
    TensorField,
    _probe_envs,
    apply_vector,
    bivector_flat_matrix,
    flat_matrix,
    lie_bracket,
    sharp_matrix,
    twoform_sharp_matrix,
)
from .matrices import ExprMatrix
from .sampling import ScanResult, numeric_rank, scan

STRUCTURE_TOL = 1e-9
PREIMAGE_TOL = 1e-12


class RankJumpError(ValueError):
    """The operator's pointwise rank changes across the sample points."""


class DegenerateOmegaError(ValueError):
    """The induced 2-form on the image bundle is singular at a sample point."""


class WeakIntegrabilityError(ValueError):
    """A bracket of image sections leaves the image bundle.

    Carries the sample point where the membership residual is worst; the
    quotient brackets are undefined there.
    """

    def __init__(self, message: str, point: tuple[float, ...] | None):
        super().__init__(message)
        self.point = point


# ---------------------------------------------------------------------------
# component/frame plumbing shared with the compatibility layer


def section_components(s: Section) -> list[Expr]:
    m = s.chart.dim
    return [s.vec.component(i) for i in range(m)] + [s.form.component(i) for i in range(m)]


def section_from_components(chart: Chart, comps) -> Section:
    m = chart.dim
    return Section(
        TensorField.vector(chart, list(comps[:m])),
        TensorField.oneform(chart, list(comps[m:])),
    )


def frame_columns(frame: Frame) -> ExprMatrix:
    """The 2m x k matrix whose columns are the frame sections."""
    cols = [section_components(s) for s in frame.sections]
    return ExprMatrix.from_fn(2 * frame.chart.dim, len(cols), lambda i, j: cols[j][i])


def combine(frame: Frame, coeffs) -> Section:
    out = Section.zero(frame.chart)
    for c, s in zip(coeffs, frame.sections):
        out = out + s.scale(c)
    return out


def pairing_rows(frame: Frame) -> ExprMatrix:
    """Rows g(e_a, .) of the frame against the coordinate basis sections."""
    basis = Section.basis(frame.chart)
    return ExprMatrix.from_fn(
        len(frame),
        2 * frame.chart.dim,
        lambda a, s: neutral_pairing(frame.sections[a], basis[s]),
    )


def lsq_pinv(cols: ExprMatrix) -> ExprMatrix:
    """Symbolic least-squares pseudoinverse (A^T A)^{-1} A^T of full-rank columns."""
    at = cols.transpose()
    return (at @ cols).inverse() @ at


def greedy_columns(value: np.ndarray, rel_tol: float = 1e-9, stop: int | None = None) -> list[int]:
    """Left-to-right selection of numerically independent columns."""
    cols: list[int] = []
    for j in range(value.shape[1]):
        if numeric_rank(value[:, cols + [j]], rel_tol) == len(cols) + 1:
            cols.append(j)
            if stop is not None and len(cols) == stop:
                break
    return cols


def _nullspace_sections(bmat: ExprMatrix, chart: Chart, envs, rel_tol: float = 1e-9) -> list[Section]:
    """Symbolic nullspace of a full-row-rank pairing matrix, as sections.

    Pivot columns are chosen at the first probe point and the pivot block is
    required to stay invertible at every other probe; the free columns then
    parametrize the kernel through a Cramer solve.
    """
    rows, n = bmat.shape
    piv = greedy_columns(bmat.evaluate(envs[0]), rel_tol, stop=rows)
    if len(piv) != rows:
        raise RankJumpError("pairing rows are rank deficient at the first probe point")
    block = ExprMatrix.from_fn(rows, rows, lambda i, j: bmat[i, piv[j]])
    for env in envs:
        if numeric_rank(block.evaluate(env), rel_tol) != rows:
            point = tuple(env[c] for c in chart.coord_names)
            raise RankJumpError(f"pivot submatrix degenerates at {point}")
    block_inv = block.inverse()
    out = []
    for f in (j for j in range(n) if j not in piv):
        sol = block_inv.apply([bmat[i, f] for i in range(rows)])
        comps: list[Expr] = [ZERO] * n
        comps[f] = ONE
        for k, j in enumerate(piv):
            comps[j] = sub(ZERO, sol[k])
        out.append(section_from_components(chart, comps))
    return out


def _basis_completion(chart: Chart, kernel: Frame, count: int, env) -> Frame:
    """Complete the kernel columns to a full basis with coordinate sections."""
    kv = frame_columns(kernel).evaluate(env)
    eye = np.eye(2 * chart.dim)
    picked: list[int] = []
    for j in range(2 * chart.dim):
        probe = np.column_stack([kv] + [eye[:, i] for i in picked + [j]])
        if numeric_rank(probe) == probe.shape[1]:
            picked.append(j)
        if len(picked) == count:
            break
    basis = Section.basis(chart)
    return Frame(tuple(basis[j] for j in picked), "generic")


# ---------------------------------------------------------------------------
# the structure itself


@dataclass
class TauStructure:
    """A validated 2-nilpotent operator with its derived frames and 2-form.

    ``image_frame``/``omega``/``lambda_inv``/``complement_frame`` are None
    exactly in the degenerate rank-0 case (the zero operator), where the
    kernel is everything and there is nothing to transfer.
    """

    op: BigOperator
    image_frame: Frame | None
    kernel_frame: Frame
    complement_frame: Frame | None
    preimages: tuple[Section, ...]
    omega: ExprMatrix | None
    lambda_inv: ExprMatrix | None
    probe_envs: list[dict[str, float]] = field(repr=False)

    def __post_init__(self):
        self.chart = self.op.chart
        if self.image_frame is not None:
            self._e_cols = frame_columns(self.image_frame)
            self._pinv_e = lsq_pinv(self._e_cols)
            self._q_cols = frame_columns(self.complement_frame)
            self._b = pairing_rows(self.image_frame)
            self._bq_inv = (self._b @ self._q_cols).inverse()
            transfer = self._pinv_e @ (self.op.matrix() @ self._q_cols)
            self._transfer_inv = transfer.inverse()

    @property
    def rank(self) -> int:
        return 0 if self.image_frame is None else len(self.image_frame)

    def apply(self, x: Section) -> Section:
        return self.op.apply(x)

    def e_coefficients(self, s: Section) -> list[Expr]:
        """Least-squares coefficients of ``s`` in the image frame."""
        return self._pinv_e.apply(section_components(s))

    def omega_value(self, u: Section, v: Section) -> Expr:
        cu = self.e_coefficients(u)
        cv = self.e_coefficients(v)
        acc = ZERO
        for a in range(self.rank):
            for b in range(self.rank):
                acc = add(acc, mul(cu[a], mul(self.omega[a, b], cv[b])))
        return acc

    def class_covector(self, s: Section) -> list[Expr]:
        """The quotient class of ``s`` as the covector a -> g(s, e_a)."""
        return [neutral_pairing(s, e) for e in self.image_frame.sections]

    def rep_from_covector(self, xi) -> Section:
        """The complement representative whose class covector is ``xi``."""
        return combine(self.complement_frame, self._bq_inv.apply(list(xi)))

    def project_complement(self, s: Section) -> Section:
        """The complement representative of the class of ``s``."""
        return self.rep_from_covector(self.class_covector(s))

    def class_from_image(self, e_sec: Section) -> Section:
        """The class whose transfer image is ``e_sec`` (inverts tau')."""
        coeffs = self._transfer_inv.apply(self.e_coefficients(e_sec))
        return combine(self.complement_frame, coeffs)

    def sharp_lambda(self, xi) -> Section:
        """The image section Lambda-dual to the covector ``xi`` on E."""
        return combine(self.image_frame, self.omega.inverse().apply(list(xi)))

    def weak_residual(self, envs=None) -> ScanResult:
        """Worst membership residual of [e_a, e_b] against the image frame."""
        if self.image_frame is None:
            return ScanResult(0.0, None, [], 1)
        envs = self.probe_envs if envs is None else envs
        worst = ScanResult(0.0, None, [], 1)
        secs = self.image_frame.sections
        for a in range(self.rank):
            for b in range(a + 1, self.rank):
                r = membership_residual(self.image_frame, courant_bracket(secs[a], secs[b]), envs)
                if r.max_residual > worst.max_residual:
                    worst = r
        return worst


def _operator_residual(mat: ExprMatrix, envs, chart: Chart) -> float:
    return scan(lambda env: mat.evaluate(env), envs, chart.coord_names).max_residual


def _validate_two_nilpotent(op: BigOperator, envs, tol: float = STRUCTURE_TOL) -> None:
    square = op.compose(op).matrix()
    sq_res = _operator_residual(square, envs, op.chart)
    if sq_res > tol:
        raise ValueError(f"operator does not square to zero (residual {sq_res:.3e})")
    skew = op.g_skew_residual(envs).max_residual
    if skew > tol:
        raise ValueError(f"operator is not skew for the neutral pairing (residual {skew:.3e})")


def _check_derived_identities(tau: TauStructure) -> None:
    """Well-definedness of omega and the defining identities of Lambda."""
    envs = tau.probe_envs
    chart = tau.chart
    rank = tau.rank
    # omega must not depend on the preimage choice: shift one preimage by a
    # kernel section and recompute a full row of omega values.
    kernel_shift = tau.kernel_frame.sections[0]
    for b in range(rank):
        shifted = tau.preimages[b] + kernel_shift
        for a in range(rank):
            delta = sub(
                neutral_pairing(tau.image_frame.sections[a], shifted), tau.omega[a, b]
            )
            res = scan(lambda env, d=delta: d.evaluate(env), envs, chart.coord_names)
            if res.max_residual > PREIMAGE_TOL:
                raise DegenerateOmegaError(
                    f"omega depends on the preimage choice (residual {res.max_residual:.3e})"
                )
    ident = ExprMatrix.identity(rank)
    sharp_flat = tau.lambda_inv.transpose() @ tau.omega
    res = _operator_residual(sharp_flat - ident, envs, chart)
    if res > STRUCTURE_TOL:
        raise DegenerateOmegaError(f"sharp_Lambda . flat_omega != -Id (residual {res:.3e})")
    pullback = tau.omega.transpose() @ tau.lambda_inv @ tau.omega
    res = _operator_residual(pullback - tau.omega, envs, chart)
    if res > STRUCTURE_TOL:
        raise DegenerateOmegaError(f"Lambda does not pull back to omega (residual {res:.3e})")


def build_tau(op: BigOperator, envs=None) -> TauStructure:
    """Validate a 2-nilpotent operator and extract its derived structure.

    The image frame is read off the operator's independent columns at the
    first probe point (constant rank over the domain is enforced, odd rank is
    impossible for a skew square-zero operator and rejected), the kernel
    comes from the symbolic nullspace of the pairing rows g(e_a, .) — which
    annihilate exactly the g-orthogonal of the image — and omega(e_a, e_b) =
    g(e_a, x_b) is assembled from the coordinate-section preimages x_b.
    """
    chart = op.chart
    if envs is None:
        envs = _probe_envs(chart)
    _validate_two_nilpotent(op, envs)
    mat = op.matrix()
    ranks = {numeric_rank(mat.evaluate(env)) for env in envs}
    if len(ranks) != 1:
        raise RankJumpError(f"rank jumps across sample points: {sorted(ranks)}")
    rank = ranks.pop()
    if rank == 0:
        kernel = Frame(tuple(Section.basis(chart)), "generic")
        return TauStructure(op, None, kernel, None, (), None, None, envs)
    if rank % 2:
        raise ValueError(f"image rank {rank} is odd; a skew square-zero operator has even rank")
    cols = greedy_columns(mat.evaluate(envs[0]), stop=rank)
    image = Frame(
        tuple(section_from_components(chart, [mat[i, j] for i in range(2 * chart.dim)]) for j in cols),
        "E",
    )
    basis = Section.basis(chart)
    preimages = tuple(basis[j] for j in cols)
    kernel = Frame(tuple(_nullspace_sections(pairing_rows(image), chart, envs)), "generic")
    complement = _basis_completion(chart, kernel, rank, envs[0])
    omega = ExprMatrix.from_fn(
        rank, rank, lambda a, b: neutral_pairing(image.sections[a], preimages[b])
    )
    if any(numeric_rank(omega.evaluate(env)) != rank for env in envs):
        raise DegenerateOmegaError("omega is singular at a sample point")
    tau = TauStructure(op, image, kernel, complement, preimages, omega, omega.neg().inverse(), envs)
    _check_derived_identities(tau)
    return tau


def tau_from_omega(frame: Frame, omega: ExprMatrix, envs=None) -> TauStructure:
    """The unique 2-nilpotent operator with image ``frame`` and 2-form ``omega``.

    On the isotropic span E of the frame, tau is determined by
    g(tau z, e_a) matching the omega-pairing of the class of z; in matrix
    form tau = E . omega^{-1} . B with B the pairing rows of the frame.
    """
    chart = frame.chart
    if envs is None:
        envs = _probe_envs(chart)
    iso = 0.0
    for a in range(len(frame)):
        for b in range(a, len(frame)):
            p = neutral_pairing(frame.sections[a], frame.sections[b])
            iso = max(iso, scan(lambda env, e=p: e.evaluate(env), envs, chart.coord_names).max_residual)
    if iso > STRUCTURE_TOL:
        raise ValueError(f"frame is not isotropic (residual {iso:.3e})")
    rank = len(frame)
    if any(numeric_rank(omega.evaluate(env)) != rank for env in envs):
        raise DegenerateOmegaError("omega is singular at a sample point")
    e_cols = frame_columns(frame)
    bmat = pairing_rows(frame)
    op_mat = e_cols @ omega.inverse() @ bmat
    m = chart.dim

    def blk(r0: int, c0: int) -> ExprMatrix:
        return ExprMatrix.from_fn(m, m, lambda i, j: op_mat[r0 + i, c0 + j])

    op = BigOperator(chart, blk(0, 0), blk(0, m), blk(m, 0), blk(m, m))
    _validate_two_nilpotent(op, envs)
    kernel = Frame(tuple(_nullspace_sections(bmat, chart, envs)), "generic")
    complement = _basis_completion(chart, kernel, rank, envs[0])
    tau = TauStructure(op, frame, kernel, complement, (), omega, omega.neg().inverse(), envs)
    # preimages through the complement: columns of Q . transfer^{-1}
    pre_mat = tau._q_cols @ tau._transfer_inv
    tau.preimages = tuple(
        section_from_components(chart, [pre_mat[i, b] for i in range(2 * m)]) for b in range(rank)
    )
    _check_derived_identities(tau)
    return tau


# ---------------------------------------------------------------------------
# canonical operator builders


def two_form_graph_tau(mu: TensorField, theta: TensorField | None = None) -> BigOperator:
    """tau(X, alpha) = (U, flat_theta U) with U = sharp_mu(alpha - flat_theta X).

    The image is the graph of flat_theta over TM and the induced 2-form
    corresponds to mu; theta = None means the plain tangent slice.
    """
    chart = mu.chart
    m = chart.dim
    sharp = twoform_sharp_matrix(mu)
    if theta is None:
        z = ExprMatrix.zeros(m)
        return BigOperator(chart, z, sharp, z, z)
    th = flat_matrix(theta)
    a = (sharp @ th).neg()
    return BigOperator(chart, a, sharp, th @ a, th @ sharp)


def bivector_graph_tau(p: TensorField, w: TensorField) -> BigOperator:
    """tau(X, alpha) = (sharp_p lam, lam) with lam = flat_w(X - sharp_p alpha).

    The image is the graph of sharp_p over T*M; both arguments are
    bivectors, w entering through its inverse musical map flat_w and playing
    the role of the 2-form transported to that graph.
    """
    chart = p.chart
    sp = sharp_matrix(p)
    fw = bivector_flat_matrix(w)
    return BigOperator(chart, sp @ fw, (sp @ (fw @ sp)).neg(), fw, (fw @ sp).neg())


# ---------------------------------------------------------------------------
# brackets


def tau_bracket(tau: TauStructure, x: Section, y: Section) -> Section:
    """[x, y]_tau = [tau x, y] + [x, tau y]."""
    return courant_bracket(tau.apply(x), y) + courant_bracket(x, tau.apply(y))


def bracket_via_images(tau: TauStructure, x: Section, y: Section) -> Section:
    """The class (complement representative) of tau'^{-1}[tau x, tau y]."""
    return tau.class_from_image(courant_bracket(tau.apply(x), tau.apply(y)))


def gd_covector(tau: TauStructure, xi, eta) -> list[Expr]:
    """The dual (Gelfand-Dorfman) bracket of two class covectors.

    Components against the image frame: with u = sharp_Lambda xi,
    w = sharp_Lambda eta and r_xi, r_eta the complement representatives,

      {xi, eta}(e) = u(g(r_eta, e)) - g(r_eta, [u, e])
                   - w(g(r_xi, e)) + g(r_xi, [w, e]) - e(g(r_eta, u)).
    """
    u = tau.sharp_lambda(xi)
    w = tau.sharp_lambda(eta)
    r_xi = tau.rep_from_covector(xi)
    r_eta = tau.rep_from_covector(eta)
    f = neutral_pairing(r_eta, u)
    out = []
    for e in tau.image_frame.sections:
        comp = apply_vector(u.vec, neutral_pairing(r_eta, e))
        comp = sub(comp, neutral_pairing(r_eta, courant_bracket(u, e)))
        comp = sub(comp, apply_vector(w.vec, neutral_pairing(r_xi, e)))
        comp = add(comp, neutral_pairing(r_xi, courant_bracket(w, e)))
        comp = sub(comp, apply_vector(e.vec, f))
        out.append(comp)
    return out


def gd_bracket(tau: TauStructure, xi, eta) -> Section:
    """The dual bracket as a complement representative."""
    return tau.rep_from_covector(gd_covector(tau, xi, eta))


def tau_brackets(tau: TauStructure, x: Section, y: Section, envs=None, tol: float = STRUCTURE_TOL) -> dict:
    """The tau-bracket of two sections plus both quotient brackets.

    The quotient brackets need the image bundle closed under the Courant
    bracket; the closure residual is measured first and a violation raises
    with the worst sample point.
    """
    envs = tau.probe_envs if envs is None else envs
    result = {"tau_bracket": tau_bracket(tau, x, y)}
    if tau.image_frame is None:
        result["induced"] = Section.zero(tau.chart)
        result["gelfand_dorfman"] = Section.zero(tau.chart)
        return result
    closure = tau.weak_residual(envs)
    if closure.max_residual > tol:
        raise WeakIntegrabilityError(
            "quotient brackets undefined: a bracket of image sections is not a "
            f"section of the image bundle at sample point {closure.witness} "
            f"(residual {closure.max_residual:.3e})",
            closure.witness,
        )
    result["induced"] = tau.project_complement(result["tau_bracket"])
    result["gelfand_dorfman"] = gd_bracket(tau, tau.class_covector(x), tau.class_covector(y))
    return result


def poisson_bracket(tau: TauStructure, f: Expr, h: Expr) -> Expr:
    """{f, h} from the tangent-projected action of tau on exact covectors."""
    chart = tau.chart
    df = Section.from_form(TensorField.oneform(chart, [f.diff(n) for n in chart.coord_names]))
    return apply_vector(tau.apply(df).vec, h)


# ---------------------------------------------------------------------------
# the algebroid differential of omega


def de_omega(tau: TauStructure, u: Section, v: Section, w: Section) -> Expr:
    """Cartan formula for d_E omega on sections of the image bundle."""
    term = apply_vector(u.vec, tau.omega_value(v, w))
    term = sub(term, apply_vector(v.vec, tau.omega_value(u, w)))
    term = add(term, apply_vector(w.vec, tau.omega_value(u, v)))
    term = sub(term, tau.omega_value(courant_bracket(u, v), w))
    term = add(term, tau.omega_value(courant_bracket(u, w), v))
    term = sub(term, tau.omega_value(courant_bracket(v, w), u))
    return term


def de_omega_via_preimages(tau: TauStructure, x: Section, y: Section, z: Section) -> Expr:
    """d_E omega(tau x, tau y, tau z) evaluated through preimage pairings.

    Independent of :func:`de_omega`: the omega values collapse to neutral
    pairings g(tau., .) against the chosen preimages, so no frame
    coefficients enter.  Used as a cross-check only.
    """
    tx, ty, tz = tau.apply(x), tau.apply(y), tau.apply(z)
    term = apply_vector(tx.vec, neutral_pairing(ty, z))
    term = sub(term, apply_vector(ty.vec, neutral_pairing(tx, z)))
    term = add(term, apply_vector(tz.vec, neutral_pairing(tx, y)))
    term = sub(term, neutral_pairing(courant_bracket(tx, ty), z))
    term = add(term, neutral_pairing(courant_bracket(tx, tz), y))
    term = sub(term, neutral_pairing(courant_bracket(ty, tz), x))
    return term


def nijenhuis_tau(tau: TauStructure, x: Section, y: Section) -> Section:
    """N_tau(x, y) = [tau x, tau y] - tau[x, tau y] - tau[tau x, y] (tau^2 = 0)."""
    tx, ty = tau.apply(x), tau.apply(y)
    n = courant_bracket(tx, ty)
    n = n - tau.apply(courant_bracket(x, ty))
    n = n - tau.apply(courant_bracket(tx, y))
    return n


# ---------------------------------------------------------------------------
# integrability report


def _section_residual(s: Section, envs) -> float:
    return scan(lambda env: s.evaluate(env, {}), envs, s.chart.coord_names).max_residual


def _expr_residual(e: Expr, envs, chart: Chart) -> float:
    return scan(lambda env: e.evaluate(env), envs, chart.coord_names).max_residual


@dataclass(frozen=True)
class DualBracketReport:
    """Lie-algebroid health of the dual bracket on the quotient.

    ``jacobi`` is the worst cyclic-sum residual over covector triples,
    ``anchor`` the worst defect of sharp_Lambda-then-project against the Lie
    bracket of the anchored vector fields.  Both vanish together exactly when
    the structure is fully integrable.
    """

    jacobi: float
    anchor: float

    def ok(self, tol: float = STRUCTURE_TOL) -> bool:
        return max(self.jacobi, self.anchor) <= tol


@dataclass(frozen=True)
class TauIntegrabilityReport:
    """Every integrability measurement for one structure.

    ``weak_residual``: image-bundle closure under the Courant bracket.
    ``full_residual``: max |N_tau| over coordinate-basis section pairs.
    ``de_omega_identity``: worst residual of d_E omega(tau x, tau y, tau z)
    against -g(x, N_tau(y, z)), both sides evaluated independently.
    ``preimage_formula_gap``: Cartan vs preimage-style d_E omega.
    ``dual_bracket``: Jacobi/anchor health of the dual bracket.
    """

    weak_residual: float
    full_residual: float
    de_omega_identity: float
    preimage_formula_gap: float
    dual_bracket: DualBracketReport

    def weak(self, tol: float = STRUCTURE_TOL) -> bool:
        return self.weak_residual <= tol

    def full(self, tol: float = STRUCTURE_TOL) -> bool:
        return self.full_residual <= tol


def _dual_bracket_report(tau: TauStructure, envs) -> DualBracketReport:
    covectors = [tau.class_covector(q) for q in tau.complement_frame.sections]
    anchors = [tau.sharp_lambda(xi).vec for xi in covectors]
    worst_anchor = 0.0
    for r in range(len(covectors)):
        for s in range(r + 1, len(covectors)):
            bracket = gd_covector(tau, covectors[r], covectors[s])
            drift = Section.from_vector(
                tau.sharp_lambda(bracket).vec - lie_bracket(anchors[r], anchors[s])
            )
            worst_anchor = max(worst_anchor, _section_residual(drift, envs))
    worst_jacobi = 0.0
    for r in range(len(covectors)):
        for s in range(r + 1, len(covectors)):
            for t in range(s + 1, len(covectors)):
                total = Section.zero(tau.chart)
                for i, j, k in ((r, s, t), (s, t, r), (t, r, s)):
                    inner = gd_bracket(tau, covectors[j], covectors[k])
                    total = total + gd_bracket(tau, covectors[i], tau.class_covector(inner))
                worst_jacobi = max(worst_jacobi, _section_residual(total, envs))
    return DualBracketReport(worst_jacobi, worst_anchor)


def integrability(tau: TauStructure, envs=None) -> TauIntegrabilityReport:
    """Measure weak/full integrability and the identities they control."""
    envs = tau.probe_envs if envs is None else envs
    if tau.image_frame is None:
        return TauIntegrabilityReport(0.0, 0.0, 0.0, 0.0, DualBracketReport(0.0, 0.0))
    weak = tau.weak_residual(envs).max_residual
    basis = Section.basis(tau.chart)
    full = 0.0
    for i in range(len(basis)):
        for j in range(i + 1, len(basis)):
            full = max(full, _section_residual(nijenhuis_tau(tau, basis[i], basis[j]), envs))
    # both sides of the d_E omega identity, on preimage triples (their tau
    # images run through the whole image frame)
    identity = 0.0
    gap = 0.0
    pres = tau.preimages
    secs = tau.image_frame.sections
    for a in range(tau.rank):
        for b in range(a + 1, tau.rank):
            for c in range(b + 1, tau.rank):
                lhs = de_omega(tau, secs[a], secs[b], secs[c])
                rhs = sub(ZERO, neutral_pairing(pres[a], nijenhuis_tau(tau, pres[b], pres[c])))
                identity = max(identity, _expr_residual(sub(lhs, rhs), envs, tau.chart))
                alt = de_omega_via_preimages(tau, pres[a], pres[b], pres[c])
                gap = max(gap, _expr_residual(sub(lhs, alt), envs, tau.chart))
    return TauIntegrabilityReport(weak, full, identity, gap, _dual_bracket_report(tau, envs))
