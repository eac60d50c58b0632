"""Nystrom discretization of the surface operators and the resonance function.

Everything here acts on L^2(Sigma_delta) through a quadrature rule: an
operator with kernel K becomes the matrix K(x_i, x_j) combined with the rule
weights, (Af)_i = sum_j K_ij w_j f_j.  The free kernel diagonal is fixed by
singularity subtraction: the non-smooth 1/(4 pi r) - z r/(8 pi) part is
integrated semi-analytically over the surface (apex-Duffy transform in
parameter space) and the C^2 remainder enters at its diagonal limit.

Pairing convention (consequential): the pairings written (w_n(zbar), . ) are
implemented as the *bilinear* form sum_i w_i u_i v_i without conjugation,
using w_n(z) in both slots.  Since omega_n(zbar) = conj(omega_n(z)), the two
agree wherever the paper forms them, and the bilinear choice keeps every
assembled object analytic in z on each sheet, which the root finders rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg.lapack import zgecon

from . import geometry
from .geometry import QuadratureRule
from .greens import EwaldGreen, chi_n, omega_n
from .specfun import SheetContext, SpectralParams, first_sheet, gamma_n

__all__ = [
    "DiscreteKernelOperator",
    "ModeVector",
    "PoleCollisionError",
    "IllConditionedError",
    "SystemState",
    "self_panel_integrals",
    "singular_part_matrix",
    "assemble_free",
    "mode_vector",
    "assemble_A_l",
    "assemble_alpha",
    "eta_l",
    "bs_determinant",
    "neumann_apply",
    "default_mode_cutoff",
]

#: rcond below this means (I - beta R) sits on top of an impurity-band
#: resonance; results there would be numerical noise, so we refuse.
_COND_LIMIT = 1e12

_GAMMA_FLOOR = 1e-10


class PoleCollisionError(ArithmeticError):
    """A retained mode n != l has Gamma_n(z) ~ 0; the rank sum is singular."""


class IllConditionedError(ArithmeticError):
    """A Birman-Schwinger solve exceeded the condition-number budget."""


@dataclass(frozen=True)
class DiscreteKernelOperator:
    """Nystrom matrix of an integral operator on the rule's nodes."""

    matrix: np.ndarray
    weights: np.ndarray
    rule: QuadratureRule | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        w = np.asarray(self.weights, dtype=float)
        if m.shape != (len(w), len(w)):
            raise ValueError("matrix shape does not match the weight vector")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "weights", w)

    @property
    def n_nodes(self) -> int:
        return len(self.weights)

    @cached_property
    def weighted(self) -> np.ndarray:
        """Matrix of the nodal action f -> K diag(w) f."""
        return self.matrix * self.weights[None, :]

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.weighted @ f

    def compose(self, other: "DiscreteKernelOperator") -> "DiscreteKernelOperator":
        return DiscreteKernelOperator(self.weighted @ other.matrix, self.weights, self.rule)

    def op_norm(self) -> float:
        """Spectral norm on L^2: similarity-transform with sqrt(w)."""
        if self.n_nodes == 0:
            return 0.0
        sw = np.sqrt(self.weights)
        return float(np.linalg.norm(sw[:, None] * self.matrix * sw[None, :], ord=2))


@dataclass(frozen=True)
class ModeVector:
    """Restriction w_n(z) = omega_n(z)|_Sigma at the rule nodes."""

    values: np.ndarray
    n: int
    z: complex
    ctx: SheetContext

    def norm_sq(self, weights) -> complex:
        """Bilinear ||w_n||^2; real and positive when w_n is real."""
        return complex(np.sum(weights * self.values * self.values))


def self_panel_integrals(rule: QuadratureRule, order: int = 16) -> np.ndarray:
    """V_i = integral over Sigma of dS'/|x_i - x'| for every node.

    The parameter rectangle is split into four triangles with apex at the
    node; the Duffy map onto the unit square cancels the 1/r singularity
    against the polar Jacobian.  For a periodic second parameter the window
    is recentred on the node so the nearest periodic image does not put an
    unresolved peak at the far edge.
    """
    surf = rule.surface
    if surf is None:
        raise ValueError("self-panel integration needs a parametrized surface")
    (a1, b1), (a2, b2) = surf.domain
    xg, wg = leggauss(order)
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    u = xg[:, None]
    v = xg[None, :]
    wuv = np.outer(wg, wg)
    out = np.empty(rule.n_nodes)
    for i in range(rule.n_nodes):
        q1, q2 = rule.param_nodes[i]
        xi = rule.nodes[i]
        if surf.periodic2:
            half = 0.5 * (b2 - a2)
            lo2, hi2 = q2 - half, q2 + half
        else:
            lo2, hi2 = a2, b2
        corners = ((a1, lo2), (b1, lo2), (b1, hi2), (a1, hi2))
        total = 0.0
        for t in range(4):
            c1, c2 = corners[t], corners[(t + 1) % 4]
            e1 = (c1[0] - q1, c1[1] - q2)
            e2 = (c2[0] - q1, c2[1] - q2)
            det = e1[0] * e2[1] - e1[1] * e2[0]
            if abs(det) < 1e-14:
                continue
            qq1 = q1 + u * ((1.0 - v) * e1[0] + v * e2[0])
            qq2 = q2 + u * ((1.0 - v) * e1[1] + v * e2[1])
            pts = surf.param_map(qq1, qq2)
            jac = surf.jacobian(qq1, qq2)
            r = np.linalg.norm(pts - xi, axis=-1)
            total += abs(det) * float(np.sum(wuv * u * jac / r))
        out[i] = total
    return out


def _barycentric_weights(x):
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    return 1.0 / np.prod(d, axis=1)


def _lagrange_eval(x_nodes, bw, pts):
    """L[p, j] = l_j(pts[p]) by the barycentric formula (exact at nodes)."""
    diff = pts[:, None] - x_nodes[None, :]
    exact_p, exact_j = np.nonzero(diff == 0.0)
    diff[exact_p, :] = 1.0  # avoid 0-division; rows fixed below
    l = bw[None, :] / diff
    l /= l.sum(axis=1)[:, None]
    for p, j in zip(exact_p, exact_j):
        l[p, :] = 0.0
        l[p, j] = 1.0
    return l


def _trig_cardinal(x_nodes, period, pts):
    """L[p, j] = periodic cardinal interpolant of node j at pts[p].

    Nodes must be equispaced over one period; the Dirichlet-kernel cardinal
    functions are periodic, so evaluation needs no seam handling.
    """
    n = len(x_nodes)
    half = math.pi * (pts[:, None] - x_nodes[None, :]) / period
    s = np.sin(half)
    near = np.abs(s) < 1e-12
    s[near] = 1.0
    if n % 2 == 0:
        l = np.sin(n * half) * np.cos(half) / (n * s)
    else:
        l = np.sin(n * half) / (n * s)
    l[near] = 1.0
    return l


def singular_part_matrix(rule: QuadratureRule, duffy_order: int | None = None):
    """Product-integration matrices of the non-smooth kernel parts.

    Returns (p_inv, p_lin): nodal-action matrices for the kernels
    1/(4 pi |x - x'|) and |x - x'|.  Row i integrates the kernel against the
    interpolation basis of node j (Legendre cardinal; trigonometric in a
    periodic second direction) with an apex-Duffy
    quadrature around node i (the Duffy Jacobian cancels the 1/r
    singularity; the |x - x'| kink sits at the apex too).  The triangle
    split is done in metric-scaled parameter coordinates -- each direction
    divided by the local tangent length at the node -- so the apex looks
    isotropic even where the parametrization is degenerate (polar centers),
    and each triangle base is geometrically graded around the foot of the
    apex perpendicular so no sub-triangle is a sliver (near-boundary nodes
    otherwise put an unresolved 1/r ridge across the angular variable).
    Both matrices are z-independent; together they let the assembly subtract
    the odd-in-r part 1/(4 pi r) - z r/(8 pi) of the nearest Yukawa image,
    leaving a remainder the plain rule integrates to high order.
    """
    surf = rule.surface
    if surf is None:
        raise ValueError("product integration needs a parametrized surface")
    p = rule.order
    if duffy_order is None:
        duffy_order = max(2 * p, 24)
    (a1, b1), (a2, b2) = surf.domain
    xg, _ = leggauss(p)
    q1_nodes = 0.5 * (b1 - a1) * xg + 0.5 * (a1 + b1)
    bw1 = _barycentric_weights(q1_nodes)
    if surf.periodic2:
        q2_nodes = a2 + (b2 - a2) * (np.arange(p) + 0.5) / p
        bw2 = None
    else:
        q2_nodes = 0.5 * (b2 - a2) * xg + 0.5 * (a2 + b2)
        bw2 = _barycentric_weights(q2_nodes)
    xd, wd = leggauss(duffy_order)
    xd = 0.5 * (xd + 1.0)
    wd = 0.5 * wd
    u = xd[:, None]
    wuv = np.outer(wd, wd)
    n = rule.n_nodes
    span2 = b2 - a2
    p_inv = np.zeros((n, n))
    p_lin = np.zeros((n, n))
    for i in range(n):
        q1, q2 = rule.param_nodes[i]
        xi = rule.nodes[i]
        h1 = float(np.linalg.norm(surf.tangent1(q1, q2)))
        h2 = float(np.linalg.norm(surf.tangent2(q1, q2)))
        if surf.periodic2:
            lo2, hi2 = q2 - 0.5 * span2, q2 + 0.5 * span2
        else:
            lo2, hi2 = a2, b2
        corners = ((a1, lo2), (b1, lo2), (b1, hi2), (a1, hi2))
        acc_inv = np.zeros((p, p))
        acc_lin = np.zeros((p, p))
        for t in range(4):
            c1 = np.array([h1 * (corners[t][0] - q1), h2 * (corners[t][1] - q2)])
            c2 = np.array([h1 * (corners[(t + 1) % 4][0] - q1),
                           h2 * (corners[(t + 1) % 4][1] - q2)])
            if abs(c1[0] * c2[1] - c1[1] * c2[0]) < 1e-14:
                continue
            edge = c2 - c1
            length = float(np.hypot(*edge))
            t0 = min(max(-float(c1 @ edge) / length**2, 0.0), 1.0)
            dist = abs(c1[0] * c2[1] - c1[1] * c2[0]) / length
            cuts = {0.0, 1.0}
            if 0.0 < t0 < 1.0:
                cuts.add(t0)
            for sgn in (1.0, -1.0):
                step = dist / length
                while 0.0 < t0 + sgn * step < 1.0:
                    cuts.add(t0 + sgn * step)
                    step *= 2.0
            cuts = sorted(cuts)
            v = xd[None, :]
            for k in range(len(cuts) - 1):
                e1 = c1 + cuts[k] * edge
                e2 = c1 + cuts[k + 1] * edge
                det = e1[0] * e2[1] - e1[1] * e2[0]
                qq1 = q1 + u * ((1.0 - v) * e1[0] + v * e2[0]) / h1
                qq2 = q2 + u * ((1.0 - v) * e1[1] + v * e2[1]) / h2
                pts = surf.param_map(qq1, qq2)
                jac = surf.jacobian(qq1, qq2)
                r = np.linalg.norm(pts - xi, axis=-1)
                base = (abs(det) * wuv * u * jac / (h1 * h2)).ravel()
                l1 = _lagrange_eval(q1_nodes, bw1, qq1.ravel())
                if surf.periodic2:
                    l2 = _trig_cardinal(q2_nodes, span2, qq2.ravel())
                else:
                    l2 = _lagrange_eval(q2_nodes, bw2, qq2.ravel())
                rf = r.ravel()
                acc_inv += np.einsum("p,pi,pj->ij", base / rf, l1, l2, optimize=True)
                acc_lin += np.einsum("p,pi,pj->ij", base * rf, l1, l2, optimize=True)
        p_inv[i] = acc_inv.ravel()
        p_lin[i] = acc_lin.ravel()
    return p_inv / (4.0 * math.pi), p_lin


def assemble_free(z: complex, rule: QuadratureRule, ctx: SheetContext | None = None,
                  singular: tuple[np.ndarray, np.ndarray] | None = None,
                  ewald: EwaldGreen | None = None) -> DiscreteKernelOperator:
    """Nystrom matrix of the free layer resolvent R_SigmaSigma(z).

    The kernel is split as 1/(4 pi r) - z r/(8 pi) plus a C^2 remainder
    (those are the odd-in-r terms of the nearest image exp(-s r)/(4 pi r)
    through order r).  The non-smooth part enters through the z-independent
    product-integration matrices (:func:`singular_part_matrix`); the
    remainder is handled by plain Nystrom with its diagonal limit from
    :meth:`EwaldGreen.regularized_diag`.  For a tabulated rule without a
    parametrized surface only the regularized limit fixes the diagonal
    (documented fallback for point probes).
    """
    ctx = ctx or first_sheet()
    n = rule.n_nodes
    if n == 0:
        return DiscreteKernelOperator(np.zeros((0, 0), complex), rule.weights, rule)
    ew = ewald if ewald is not None else EwaldGreen(z, ctx)
    nodes = rule.nodes
    iu, ju = np.triu_indices(n, k=1)
    r_off = np.linalg.norm(nodes[iu] - nodes[ju], axis=1)
    if n > 1 and float(np.min(r_off)) == 0.0:
        raise ValueError("quadrature nodes must be pairwise distinct")
    mat = np.zeros((n, n), dtype=complex)
    if n > 1:
        vals = ew.pairs(nodes[iu], nodes[ju])
        mat[iu, ju] = vals
        mat[ju, iu] = vals
    diag = np.atleast_1d(ew.regularized_diag(nodes))
    if rule.surface is not None:
        if singular is None:
            singular = singular_part_matrix(rule)
        p_inv, p_lin = singular
        c_lin = -z / (8.0 * math.pi)
        model = np.zeros((n, n), dtype=complex)
        model[iu, ju] = 1.0 / (4.0 * math.pi * r_off) + c_lin * r_off
        model[ju, iu] = model[iu, ju]
        mat -= model
        mat[np.arange(n), np.arange(n)] = diag
        mat += (p_inv + c_lin * p_lin) / rule.weights[None, :]
    else:
        mat[np.arange(n), np.arange(n)] = diag
    return DiscreteKernelOperator(mat, rule.weights, rule)


def mode_vector(z: complex, n: int, rule: QuadratureRule, ctx: SheetContext) -> ModeVector:
    if rule.n_nodes == 0:
        return ModeVector(np.zeros(0, complex), n, complex(z), ctx)
    vals = np.asarray(omega_n(z, n, rule.nodes, ctx), dtype=complex)
    return ModeVector(vals, n, complex(z), ctx)


def default_mode_cutoff(rule: QuadratureRule, ctx: SheetContext,
                        tail_tol: float = 1e-12) -> int:
    """n_max = max(k + 40, ceil(-ln tail_tol / r_min)) for the rank sums."""
    if rule.surface is not None:
        rmin = geometry.r_min(rule.surface)
    elif rule.n_nodes:
        rmin = float(np.min(np.hypot(rule.nodes[:, 0], rule.nodes[:, 1])))
    else:
        rmin = 1.0
    if rmin <= 0.0:
        raise ValueError("surface touches the wire axis; mode sums diverge")
    return max(ctx.k + 40, int(math.ceil(-math.log(tail_tol) / rmin)))


def _rank_sum(z, rule, ctx, params, modes):
    n_nodes = rule.n_nodes
    mat = np.zeros((n_nodes, n_nodes), dtype=complex)
    for n in modes:
        g = gamma_n(z, n, ctx, params)
        if abs(g) < _GAMMA_FLOOR:
            raise PoleCollisionError(
                f"Gamma_{n}(z) = {g:.3e} at z = {z}; mode {n} sits on its eigenvalue")
        w = mode_vector(z, n, rule, ctx).values
        mat += np.multiply.outer(w, w) / g
    return mat


def assemble_A_l(z: complex, l: int, rule: QuadratureRule, ctx: SheetContext,
                 params: SpectralParams, n_cut: int | None = None,
                 tail_tol: float = 1e-12) -> DiscreteKernelOperator:
    """A_l(z) = sum_{n != l} Gamma_n(z)^(-1) <w_n, . > w_n, truncated rank sum."""
    if n_cut is None:
        n_cut = default_mode_cutoff(rule, ctx, tail_tol)
    modes = [n for n in range(1, n_cut + 1) if n != l]
    return DiscreteKernelOperator(_rank_sum(z, rule, ctx, params, modes),
                                  rule.weights, rule)


def assemble_alpha(z: complex, rule: QuadratureRule, ctx: SheetContext,
                   params: SpectralParams, n_cut: int | None = None,
                   tail_tol: float = 1e-12,
                   free: DiscreteKernelOperator | None = None) -> DiscreteKernelOperator:
    """Full wire-dressed operator R_alpha = R_SigmaSigma + sum_n Gamma_n^(-1) <w_n, .> w_n."""
    if n_cut is None:
        n_cut = default_mode_cutoff(rule, ctx, tail_tol)
    if free is None:
        free = assemble_free(z, rule, ctx)
    mat = free.matrix + _rank_sum(z, rule, ctx, params, range(1, n_cut + 1))
    return DiscreteKernelOperator(mat, rule.weights, rule)


def _guarded_lu(mat, what: str, diagnostics: dict | None = None):
    lu = lu_factor(mat)
    anorm = np.linalg.norm(mat, 1)
    rcond, info = zgecon(lu[0], anorm)
    if info != 0 or not np.isfinite(rcond) or rcond == 0.0 or 1.0 / rcond > _COND_LIMIT:
        cond = math.inf if rcond == 0.0 else 1.0 / rcond
        raise IllConditionedError(f"{what}: condition number {cond:.3e} exceeds 1e12")
    if diagnostics is not None:
        diagnostics[f"cond[{what}]"] = 1.0 / rcond
    return lu


def neumann_apply(op: DiscreteKernelOperator, beta: float, f: np.ndarray,
                  terms: int = 60) -> np.ndarray:
    """(I - beta K)^(-1) f via the Neumann series; cross-check for the solve."""
    acc = np.array(f, dtype=complex)
    cur = np.array(f, dtype=complex)
    for _ in range(terms):
        cur = beta * op.apply(cur)
        acc += cur
    return acc


@dataclass
class SystemState:
    """Everything needed to evaluate eta_l / the determinant at a point z.

    Caches the z-independent self-panel integrals and the mode cutoff; the
    kernel matrices themselves are reassembled per z.
    """

    params: SpectralParams
    rule: QuadratureRule
    ctx: SheetContext
    tail_tol: float = 1e-12
    n_cut: int | None = None
    _singular: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_cut is None:
            self.n_cut = default_mode_cutoff(self.rule, self.ctx, self.tail_tol)

    @property
    def singular(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Cached z-independent product-integration matrices (1/4 pi r and r)."""
        if self.rule.surface is None:
            return None
        if self._singular is None:
            self._singular = singular_part_matrix(self.rule)
        return self._singular

    def free_op(self, z: complex) -> DiscreteKernelOperator:
        return assemble_free(z, self.rule, self.ctx, self.singular)


def eta_l(z: complex, l: int, state: SystemState,
          free: DiscreteKernelOperator | None = None,
          diagnostics: dict | None = None) -> complex:
    """Resonance function eta_l(z, delta) = Gamma_l(z) - beta theta_l(z, delta).

    theta_l = <w_l, T_l w_l> with T_l = (I - beta G A_l)^(-1) G and
    G = (I - beta R_SigmaSigma)^(-1); both inverses are direct dense solves
    with condition-number guards.
    """
    params, rule, ctx = state.params, state.rule, state.ctx
    gl = gamma_n(z, l, ctx, params)
    if rule.n_nodes == 0:
        return gl
    beta = params.beta
    if free is None:
        free = state.free_op(z)
    n = rule.n_nodes
    eye = np.eye(n, dtype=complex)
    lu_b = _guarded_lu(eye - beta * free.weighted, "I - beta R_SigmaSigma", diagnostics)
    a_l = assemble_A_l(z, l, rule, ctx, params, state.n_cut, state.tail_tol)
    g_a = lu_solve(lu_b, a_l.weighted)
    lu_m = _guarded_lu(eye - beta * g_a, "I - beta G A_l", diagnostics)
    w_l = mode_vector(z, l, rule, ctx).values
    t_w = lu_solve(lu_m, lu_solve(lu_b, w_l))
    theta = complex(np.sum(rule.weights * w_l * t_w))
    return gl - beta * theta


def bs_determinant(z: complex, state: SystemState,
                   free: DiscreteKernelOperator | None = None) -> complex:
    """det(I - beta R_alpha,SigmaSigma(z)) of the weighted Nystrom matrix.

    Has poles at the eigenvalues eps_n of every retained mode; root finders
    should work with Gamma_l(z) * det(...) to cancel the l-pole.
    """
    rule = state.rule
    if rule.n_nodes == 0:
        return 1.0 + 0.0j
    if free is None:
        free = state.free_op(z)
    r_alpha = assemble_alpha(z, rule, state.ctx, state.params, state.n_cut,
                             state.tail_tol, free=free)
    eye = np.eye(rule.n_nodes, dtype=complex)
    return complex(np.linalg.det(eye - state.params.beta * r_alpha.weighted))
