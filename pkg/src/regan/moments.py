"""Circle quadrature and spherical-moment tables for coefficient fields.

The operator's coefficient matrices live in four 2x2 blocks

    A11 = [[a, 0], [0, 1]],   A12 = [[b, c-1], [0, 0]],
    A21 = [[0, 0], [a-1, b]], A22 = [[1, 0], [0, c]],

and everything downstream is a circle mean of these blocks against small
monomials in theta = (cos phi, sin phi).  The uniform trapezoid rule is
spectrally accurate for these periodic integrands; node counts are doubled
until two refinements agree.

All operations here are pure functions of immutable inputs and safe to
evaluate concurrently over radius grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coeff import CoefficientField
from .tails import EvaluationError


@dataclass(frozen=True)
class QuadratureSettings:
    base_nodes: int = 32
    max_nodes: int = 2**14
    rel_tol: float = 1e-13


DEFAULT_QUADRATURE = QuadratureSettings()

# positions that are identically zero in the assembled 4x4 moment matrix
MOMENT_MATRIX_ZEROS = ((0, 1), (1, 2), (2, 1), (3, 2))


def circle_mean(f: Callable, n_nodes: int = 16, *, rel_tol: float = 1e-13,
                max_nodes: int = 2**14) -> float:
    """Mean of f over the circle, phi in [0, 2pi), by uniform nodes.

    n_nodes must be a power of two >= 16.  The node count doubles until two
    successive values agree to rel_tol (relative, with floor 1) or the cap
    is reached; the converged value is returned.
    """
    if n_nodes < 16 or n_nodes & (n_nodes - 1):
        raise ValueError("n_nodes must be a power of two >= 16")

    def mean_at(n):
        phi = 2.0 * math.pi * np.arange(n) / n
        vals = np.asarray(f(phi), dtype=float)
        if vals.shape != phi.shape:
            vals = np.broadcast_to(vals, phi.shape)
        if not np.all(np.isfinite(vals)):
            phi_bad = float(phi[~np.isfinite(vals)][0])
            raise EvaluationError(f"circle integrand not finite at phi={phi_bad:.6g}")
        return float(vals.mean())

    prev = mean_at(n_nodes)
    n = n_nodes
    while n < max_nodes:
        n *= 2
        cur = mean_at(n)
        if abs(cur - prev) <= rel_tol * max(1.0, abs(cur)):
            return cur
        prev = cur
    return prev


@dataclass(frozen=True)
class MomentVector:
    """The six second-harmonic circle moments of (a, b, c) at radius r."""

    r: float
    a1: float
    a2: float
    b1: float
    b2: float
    c1: float
    c2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.b1, self.b2, self.c1, self.c2])


@dataclass(frozen=True)
class BlockTable:
    """Circle means of the coefficient blocks against theta monomials at radius r.

    theta2_mean          mean A_ij theta_i theta_j               (2x2, ~ I)
    theta3_mean[k]       mean A_ij theta_k theta_i theta_j       (2x2, ~ 0)
    theta1_col[k]        mean A_ik theta_i                       (2x2, ~ 0)
    theta1_row[k]        mean A_ki theta_i                       (2x2, ~ 0)
    theta4               mean A_ij theta_i theta_j theta_k theta_l, blocks (k,l)
    theta2_col           mean A_il theta_i theta_k, blocks (k,l)
    theta2_row           mean A_ki theta_i theta_l, blocks (k,l)
    plain                mean A_kl, blocks (k,l)

    The 4x4 tables stack the 2x2 blocks as [[(1,1), (1,2)], [(2,1), (2,2)]].
    `coefficient_blocks(x, y)` evaluates the raw A_ij pointwise and
    `identity_offset(x, y)` their deviation from delta_ij * I.
    """

    r: float
    theta2_mean: np.ndarray
    theta3_mean: np.ndarray
    theta1_col: np.ndarray
    theta1_row: np.ndarray
    theta4: np.ndarray
    theta2_col: np.ndarray
    theta2_row: np.ndarray
    plain: np.ndarray
    coefficient_blocks: Callable
    identity_offset: Callable


def coefficient_block_evaluator(field: CoefficientField):
    """Pointwise evaluator of the four 2x2 coefficient blocks A_ij.

    Returns an array of shape (2, 2, 2, 2) + broadcast shape, indexed
    [i, j, row, col].
    """

    def blocks(x, y):
        a, b, c = field.coefficients(x, y)
        a = np.asarray(a, dtype=float)
        shape = a.shape
        one = np.ones(shape)
        zero = np.zeros(shape)
        A = np.empty((2, 2, 2, 2) + shape)
        A[0, 0] = [[a, zero], [zero, one]]
        A[0, 1] = [[b, c - 1.0], [zero, zero]]
        A[1, 0] = [[zero, zero], [a - 1.0, b]]
        A[1, 1] = [[one, zero], [zero, c]]
        return A

    return blocks


def _tables_at(field: CoefficientField, r: float, n: int):
    """All moment tables from one shared set of circle samples."""
    phi = 2.0 * math.pi * np.arange(n) / n
    x, y = r * np.cos(phi), r * np.sin(phi)
    a, b, c = field.coefficients(x, y)
    for name, vals in (("a", a), ("b", b), ("c", c)):
        vals = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            phi_bad = float(phi[~np.isfinite(np.asarray(vals))][0])
            raise EvaluationError(
                f"coefficient {name} not finite at r={r:.6g}, phi={phi_bad:.6g}")
    t = np.vstack([np.cos(phi), np.sin(phi)])
    A = coefficient_block_evaluator(field)(x, y)

    w2 = t[1] ** 2 - t[0] ** 2
    wx = t[0] * t[1]
    m6 = np.array([
        float(np.mean(a * w2)), float(-2.0 * np.mean(a * wx)),
        float(np.mean(b * w2)), float(-2.0 * np.mean(b * wx)),
        float(np.mean(c * w2)), float(-2.0 * np.mean(c * wx)),
    ])

    theta2_mean = np.einsum("ijpqn,in,jn->pq", A, t, t) / n
    theta3_mean = np.einsum("ijpqn,kn,in,jn->kpq", A, t, t, t) / n
    theta1_col = np.einsum("ikpqn,in->kpq", A, t) / n
    theta1_row = np.einsum("kipqn,in->kpq", A, t) / n
    theta4_b = np.einsum("ijpqn,in,jn,kn,ln->klpq", A, t, t, t, t) / n
    theta2_col_b = np.einsum("ilpqn,in,kn->klpq", A, t, t) / n
    theta2_row_b = np.einsum("kipqn,in,ln->klpq", A, t, t) / n
    plain_b = np.mean(A, axis=-1).transpose(0, 1, 2, 3)  # [k,l,p,q]

    def to4(blocks):  # blocks[k,l,p,q] -> 4x4
        return blocks.transpose(0, 2, 1, 3).reshape(4, 4)

    return m6, (theta2_mean, theta3_mean, theta1_col, theta1_row,
                to4(theta4_b), to4(theta2_col_b), to4(theta2_row_b), to4(plain_b))


def _converged_tables(field: CoefficientField, r: float,
                      quad: QuadratureSettings):
    n = quad.base_nodes
    m6_prev, tabs_prev = _tables_at(field, r, n)
    while n < quad.max_nodes:
        n *= 2
        m6, tabs = _tables_at(field, r, n)
        delta = max(
            float(np.max(np.abs(m6 - m6_prev))),
            max(float(np.max(np.abs(t1 - t0))) for t0, t1 in zip(tabs_prev, tabs)),
        )
        scale = max(1.0, float(np.max(np.abs(m6))),
                    max(float(np.max(np.abs(t1))) for t1 in tabs))
        if delta <= quad.rel_tol * scale:
            return m6, tabs
        m6_prev, tabs_prev = m6, tabs
    return m6_prev, tabs_prev


def moment_vector(field: CoefficientField, r: float,
                  quad: QuadratureSettings = DEFAULT_QUADRATURE) -> MomentVector:
    """Second-harmonic circle moments of a, b, c at radius r.

    a1 = mean a*(theta2^2 - theta1^2), a2 = -2 mean a*theta1*theta2, and
    likewise for b and c.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError("radius must lie in (0, 1]")

    def light(n):
        phi = 2.0 * math.pi * np.arange(n) / n
        x, y = r * np.cos(phi), r * np.sin(phi)
        a, b, c = field.coefficients(x, y)
        for name, vals in (("a", a), ("b", b), ("c", c)):
            if not np.all(np.isfinite(np.asarray(vals))):
                raise EvaluationError(f"coefficient {name} not finite at r={r:.6g}")
        w2 = np.sin(phi) ** 2 - np.cos(phi) ** 2
        wx = np.cos(phi) * np.sin(phi)
        return np.array([
            np.mean(a * w2), -2.0 * np.mean(a * wx),
            np.mean(b * w2), -2.0 * np.mean(b * wx),
            np.mean(c * w2), -2.0 * np.mean(c * wx),
        ])

    n = quad.base_nodes
    prev = light(n)
    while n < quad.max_nodes:
        n *= 2
        cur = light(n)
        if np.max(np.abs(cur - prev)) <= quad.rel_tol * max(1.0, float(np.max(np.abs(cur)))):
            prev = cur
            break
        prev = cur
    return MomentVector(r, *map(float, prev))


def moment_matrix(m: MomentVector) -> np.ndarray:
    """Assemble the 4x4 drift matrix from the six second-harmonic moments."""
    return np.array([
        [m.a1, 0.0, m.b1, m.c1],
        [m.a2, m.b2, 0.0, m.c2],
        [m.a2, 0.0, m.b2, m.c2],
        [-m.a1, -m.b1, 0.0, -m.c1],
    ])


def block_table(field: CoefficientField, r: float,
                quad: QuadratureSettings = DEFAULT_QUADRATURE) -> BlockTable:
    """All quadrature blocks of the coefficient matrices at radius r."""
    if not 0.0 < r <= 1.0:
        raise ValueError("radius must lie in (0, 1]")
    _, tabs = _converged_tables(field, r, quad)
    blocks_eval = coefficient_block_evaluator(field)

    def identity_offset(x, y):
        A = blocks_eval(x, y)
        eye = np.zeros_like(A)
        for i in range(2):
            eye[i, i, 0, 0] = 1.0
            eye[i, i, 1, 1] = 1.0
        return A - eye

    return BlockTable(r, *tabs, coefficient_blocks=blocks_eval,
                      identity_offset=identity_offset)


def moment_matrix_residual(field: CoefficientField, r: float,
                           quad: QuadratureSettings = DEFAULT_QUADRATURE) -> float:
    """Max-entry residual between the assembled moment matrix and plain - 2*theta2_col.

    The two sides are algebraically identical, so the residual is pure
    quadrature error; it cross-checks two independent computation paths.
    """
    m6, tabs = _converged_tables(field, r, quad)
    R = moment_matrix(MomentVector(r, *map(float, m6)))
    theta2_col, plain = tabs[5], tabs[7]
    return float(np.max(np.abs(R - (plain - 2.0 * theta2_col))))


@dataclass(frozen=True)
class ForcingFunctionals:
    """Circle functionals of a remainder field W entering the radial systems.

    bound_ok is None when W fails the zero-mean / zero-first-moment
    conditions on the sampled circle (the bound is then not asserted).
    """

    r: float
    Lambda: np.ndarray          # 2-vector
    P: np.ndarray               # (2, 2): P_k components
    Q: np.ndarray               # (2, 2): Q_k components
    grad_mean: float            # mean |grad W| over the circle
    bound_rhs: float            # omega(r) * grad_mean
    projection_residual: float
    bound_ok: bool | None


def forcing_functionals(field: CoefficientField, r: float, w_field,
                        n_nodes: int = 256,
                        projection_tol: float = 1e-8) -> ForcingFunctionals:
    """Circle means Lambda, P_k, Q_k of the coefficient blocks against grad W.

    `w_field` provides value(x, y) -> (2, ...) and gradient(x, y) ->
    (2, 2, ...) with entries d W_p / d x_j at index [p, j].
    """
    phi = 2.0 * math.pi * np.arange(n_nodes) / n_nodes
    x, y = r * np.cos(phi), r * np.sin(phi)
    t = np.vstack([np.cos(phi), np.sin(phi)])
    A = coefficient_block_evaluator(field)(x, y)         # [i,j,p,q,n]
    W = np.asarray(w_field.value(x, y), dtype=float)     # [p,n]
    G = np.asarray(w_field.gradient(x, y), dtype=float)  # [p,j,n]

    lam = np.einsum("ijpqn,in,qjn->p", A, t, G) / n_nodes
    P = np.einsum("ijpqn,in,kn,qjn->kp", A, t, t, G) / n_nodes
    Q = np.einsum("kjpqn,qjn->kp", A, G) / n_nodes

    scale = max(1.0, float(np.max(np.abs(W))))
    moments = [float(np.mean(W[p])) for p in range(2)]
    moments += [float(np.mean(W[p] * t[i])) for p in range(2) for i in range(2)]
    proj_res = max(abs(v) for v in moments) / scale
    grad_mean = float(np.mean(np.sqrt(np.einsum("pjn,pjn->n", G, G))))
    rhs = float(field.modulus(r)) * grad_mean

    if proj_res > projection_tol:
        bound_ok = None
    else:
        norms = [float(np.linalg.norm(lam))]
        norms += [float(np.linalg.norm(P[k])) for k in range(2)]
        norms += [float(np.linalg.norm(Q[k])) for k in range(2)]
        bound_ok = bool(max(norms) <= rhs + 1e-10)
    return ForcingFunctionals(r, lam, P, Q, grad_mean, rhs, proj_res, bound_ok)


def write_moment_csv(path, field: CoefficientField, radii,
                     quad: QuadratureSettings = DEFAULT_QUADRATURE) -> None:
    """Moment table as CSV: r, a1, a2, b1, b2, c1, c2 (17 significant digits)."""
    rows = ["r,a1,a2,b1,b2,c1,c2"]
    for r in radii:
        m = moment_vector(field, float(r), quad)
        rows.append(",".join("%.17g" % v for v in
                             (m.r, m.a1, m.a2, m.b1, m.b2, m.c1, m.c2)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
