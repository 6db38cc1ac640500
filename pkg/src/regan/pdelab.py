"""Desk-scale finite-difference diagnostics for the nondivergence operator.

A Dirichlet problem is solved on a uniform Cartesian grid over a square
[-L, L]^2 contained in the unit disk (the origin is a grid node, so no
polar singularity enters).  The gradient field is decomposed on circles
into circle mean + first-moment part + higher-harmonic remainder, and the
profiles feed regularity indicators that mirror the dynamical-system
predictions.  Indicators are always read against a discretization floor
estimated from a constant-coefficient control run at the same mesh width:
a finite grid cannot see below its own resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coeff import CoefficientField
from .dynsys import FullSystem, propagate_dense


class SolveError(RuntimeError):
    """The sparse linear solve did not reach the requested residual."""


class EllipticityError(RuntimeError):
    """The discriminant 4ac - b^2 failed to be positive at a grid node."""


# ---------------------------------------------------------------------------
# Boundary data library.  All entries are harmonic polynomials, so the
# constant-coefficient control solution is known in closed form.
# ---------------------------------------------------------------------------

BOUNDARY_LIBRARY: dict[str, Callable] = {
    "quadratic_saddle": lambda x, y: x**2 - y**2,
    "quadratic_cross": lambda x, y: x * y,
    "harmonic_cubic": lambda x, y: x**3 - 3.0 * x * y**2,
    "harmonic_quartic": lambda x, y: x**4 - 6.0 * x**2 * y**2 + y**4,
    # first-harmonic-rich: excites the circle mean and the first moments,
    # with quartic content so the control run has a genuine h^2 error floor
    "v_rich_mix": lambda x, y: x + x**2 - y**2
    + 0.4 * (x**4 - 6.0 * x**2 * y**2 + y**4),
    # second-harmonic-rich: the gradient is a pure second harmonic
    "w_rich_mix": lambda x, y: x**3 - 3.0 * x * y**2 + 0.25 * (x**2 - y**2),
}


def boundary_evaluator(boundary) -> Callable:
    if callable(boundary):
        return boundary
    try:
        return BOUNDARY_LIBRARY[boundary]
    except KeyError:
        raise ValueError(f"unknown boundary data id {boundary!r}") from None


@dataclass
class GridSolution:
    """Nodal solution u[ix, iy] on x = -L + ix*h, y = -L + iy*h.

    residual_norm is the max-norm residual of the h^2-scaled stencil
    equations (the algebraic system actually solved).
    """

    h: float
    half_width: float
    u: np.ndarray
    boundary_id: str
    residual_norm: float
    field_label: str

    @property
    def n_cells(self) -> int:
        return self.u.shape[0] - 1

    def axis(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.u.shape[0])


def solve_dirichlet(field: CoefficientField, h: float, boundary,
                    half_width: float = 0.6875, tol: float = 1e-10,
                    boundary_id: Optional[str] = None) -> GridSolution:
    """Nine-point finite-difference solve of a u_xx + b u_xy + c u_yy = 0.

    Centered second differences for u_xx and u_yy, the four-point cross
    stencil for u_xy (no upwinding: the coefficients are near-identity).
    The mesh width must divide 2*half_width evenly with an even cell count
    so the origin is a node; it carries the normalized values (1, 0, 1).
    """
    L = float(half_width)
    if not 0.0 < L <= 1.0 / math.sqrt(2.0) + 1e-12:
        raise ValueError("half_width must lie in (0, 1/sqrt(2)]")
    n = 2.0 * L / h
    N = int(round(n))
    if abs(n - N) > 1e-9 or N < 8 or N % 2:
        raise ValueError(f"mesh width {h} must divide {2 * L} into an even "
                         f"number of cells (got {n})")
    data_fn = boundary_evaluator(boundary)
    if boundary_id is None:
        boundary_id = boundary if isinstance(boundary, str) else "custom"

    xs = -L + h * np.arange(N + 1)
    ix, iy = np.meshgrid(np.arange(1, N), np.arange(1, N), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    X, Y = xs[ix], xs[iy]
    a, b, c = field.coefficients(X, Y)
    a, b, c = (np.asarray(v, dtype=float).copy() for v in (a, b, c))
    origin = (np.abs(X) < 0.5 * h) & (np.abs(Y) < 0.5 * h)
    a[origin], b[origin], c[origin] = 1.0, 0.0, 1.0
    disc = 4.0 * a * c - b * b
    if np.min(disc) <= 0.0:
        k = int(np.argmin(disc))
        raise EllipticityError(
            f"4ac - b^2 = {disc[k]:.3g} <= 0 at node ({X[k]:.6g}, {Y[k]:.6g})")

    n_int = (N - 1) ** 2

    def int_index(jx, jy):
        return (jx - 1) * (N - 1) + (jy - 1)

    rows_list, cols_list, vals_list = [], [], []
    rhs = np.zeros(n_int)
    center_rows = int_index(ix, iy)
    rows_list.append(center_rows)
    cols_list.append(center_rows)
    vals_list.append(-2.0 * (a + c))

    stencil = (
        (1, 0, a), (-1, 0, a), (0, 1, c), (0, -1, c),
        (1, 1, 0.25 * b), (-1, -1, 0.25 * b),
        (1, -1, -0.25 * b), (-1, 1, -0.25 * b),
    )
    for dx, dy, w in stencil:
        jx, jy = ix + dx, iy + dy
        inside = (jx >= 1) & (jx <= N - 1) & (jy >= 1) & (jy <= N - 1)
        rows_list.append(center_rows[inside])
        cols_list.append(int_index(jx[inside], jy[inside]))
        w_arr = np.broadcast_to(w, ix.shape)
        vals_list.append(w_arr[inside])
        edge = ~inside
        if np.any(edge):
            contrib = w_arr[edge] * data_fn(xs[jx[edge]], xs[jy[edge]])
            np.subtract.at(rhs, center_rows[edge], contrib)

    A = sp.csr_matrix(
        (np.concatenate(vals_list),
         (np.concatenate(rows_list), np.concatenate(cols_list))),
        shape=(n_int, n_int))
    u_int = spla.spsolve(A, rhs)
    history = []
    residual = float(np.max(np.abs(A @ u_int - rhs)))
    history.append(residual)
    denom = float(np.max(np.abs(rhs))) + 1.0
    if residual > tol * denom:
        u_int = u_int + spla.spsolve(A, rhs - A @ u_int)
        residual = float(np.max(np.abs(A @ u_int - rhs)))
        history.append(residual)
        if residual > tol * denom:
            raise SolveError(f"linear solve stalled; residual history {history}")

    u = np.empty((N + 1, N + 1))
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    u[:, :] = data_fn(gx, gy)
    u[1:N, 1:N] = u_int.reshape(N - 1, N - 1)
    return GridSolution(h, L, u, boundary_id, residual, field.label)


def gradient_field(sol: GridSolution) -> np.ndarray:
    """Nodal gradient (u_x, u_y): centered interior, one-sided on the edge ring."""
    ux = np.gradient(sol.u, sol.h, axis=0, edge_order=2)
    uy = np.gradient(sol.u, sol.h, axis=1, edge_order=2)
    return np.stack([ux, uy])


def hessian_quotients(sol: GridSolution, steps) -> dict:
    """Second central difference quotients of u at the origin.

    steps are node multiples of h (>= 2).  Cauchy differences between
    consecutive steps indicate convergence of the discrete Hessian.
    """
    N = sol.n_cells
    i0 = N // 2
    rows = []
    for step in steps:
        m = int(step)
        if m != step:
            raise ValueError("steps are node multiples of h (integers)")
        if m < 2 or i0 + m > N:
            raise ValueError(f"step {step} outside [2h, L]")
        s = m * sol.h
        u = sol.u
        qxx = (u[i0 + m, i0] - 2.0 * u[i0, i0] + u[i0 - m, i0]) / s**2
        qyy = (u[i0, i0 + m] - 2.0 * u[i0, i0] + u[i0, i0 - m]) / s**2
        qxy = (u[i0 + m, i0 + m] - u[i0 + m, i0 - m]
               - u[i0 - m, i0 + m] + u[i0 - m, i0 - m]) / (4.0 * s**2)
        rows.append((s, float(qxx), float(qxy), float(qyy)))
    quot = np.array([[r[1], r[2], r[3]] for r in rows])
    cauchy = (np.max(np.abs(np.diff(quot, axis=0)), axis=1).tolist()
              if len(rows) > 1 else [])
    return {"rows": rows, "cauchy_differences": cauchy}


def bilinear_sample(values: np.ndarray, half_width: float, h: float,
                    x, y) -> np.ndarray:
    """Bilinear interpolation of nodal values[ix, iy] at points (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n_max = values.shape[0] - 2
    gx = np.clip((x + half_width) / h, 0.0, values.shape[0] - 1.0)
    gy = np.clip((y + half_width) / h, 0.0, values.shape[0] - 1.0)
    i = np.clip(gx.astype(int), 0, n_max)
    j = np.clip(gy.astype(int), 0, n_max)
    fx, fy = gx - i, gy - j
    return ((1 - fx) * (1 - fy) * values[i, j]
            + fx * (1 - fy) * values[i + 1, j]
            + (1 - fx) * fy * values[i, j + 1]
            + fx * fy * values[i + 1, j + 1])


@dataclass
class DecompositionProfile:
    """Per-radius circle decomposition of a gradient field.

    V rows hold the 4-vector (V1_1, V1_2, V2_1, V2_2); rVprime is its
    derivative against log r.  Mp_gradW and M1p_W are annulus means of the
    higher-harmonic remainder over r < |x| < 2r.
    """

    radii: np.ndarray
    U0: np.ndarray
    V: np.ndarray
    rVprime: np.ndarray
    Mp_gradW: np.ndarray
    M1p_W: np.ndarray
    p: float
    projection_residual: np.ndarray
    reconstruction_residual: np.ndarray


def _circle_split(U, half_width, h, r, phi):
    """Mean / first-moment / remainder split of U on the circle of radius r."""
    ct, st = np.cos(phi), np.sin(phi)
    x, y = r * ct, r * st
    vals = np.stack([bilinear_sample(U[0], half_width, h, x, y),
                     bilinear_sample(U[1], half_width, h, x, y)])
    u0 = vals.mean(axis=1)
    c1 = 2.0 * (vals * ct).mean(axis=1)
    c2 = 2.0 * (vals * st).mean(axis=1)
    v1, v2 = c1 / r, c2 / r
    w = vals - u0[:, None] - np.outer(v1, r * ct) - np.outer(v2, r * st)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    moments = [np.abs(w.mean(axis=1)), np.abs((w * ct).mean(axis=1)),
               np.abs((w * st).mean(axis=1))]
    proj_res = float(max(np.max(m) for m in moments)) / scale
    recon = vals - (u0[:, None] + np.outer(v1, x) + np.outer(v2, y) + w)
    recon_res = float(np.mean(np.abs(recon)))
    return u0, v1, v2, w, vals, proj_res, recon_res


def decompose(U: np.ndarray, h: float, half_width: float, radii,
              p: float = 4.0, nodes_per_circle: int = 256,
              n_radial: int = 17) -> DecompositionProfile:
    """Circle decomposition U = U0(r) + V1(r) x + V2(r) y + W over a radius list.

    Circle values come from bilinear interpolation; radii must stay inside
    (4h, L/2) so interpolation is trustworthy and the annulus r < |x| < 2r
    fits in the grid.  W has zero mean and first moments on every circle by
    construction; the achieved residuals are recorded.
    """
    if p <= 2:
        raise ValueError("p must exceed 2")
    radii = np.sort(np.asarray(radii, dtype=float))
    lo, hi = 4.0 * h, half_width / 2.0
    if np.any(radii <= lo) or np.any(radii >= hi):
        bad = radii[(radii <= lo) | (radii >= hi)][0]
        raise ValueError(f"radius {bad:.6g} outside the reliable band "
                         f"({lo:.6g}, {hi:.6g})")
    phi = 2.0 * math.pi * np.arange(nodes_per_circle) / nodes_per_circle
    n = radii.size
    U0 = np.empty((n, 2))
    V = np.empty((n, 4))
    Mp_gradW = np.empty(n)
    M1p_W = np.empty(n)
    proj = np.empty(n)
    recon = np.empty(n)
    dphi = 2.0 * math.pi / nodes_per_circle

    for k, r in enumerate(radii):
        u0, v1, v2, _, _, pr, rr = _circle_split(U, half_width, h, r, phi)
        U0[k] = u0
        V[k] = np.concatenate([v1, v2])
        proj[k], recon[k] = pr, rr

        rho = np.geomspace(r, 2.0 * r, n_radial)
        Wpatch = np.empty((2, n_radial, nodes_per_circle))
        for m, rm in enumerate(rho):
            _, _, _, w, _, _, _ = _circle_split(U, half_width, h, rm, phi)
            Wpatch[:, m, :] = w
        dW_drho = np.gradient(Wpatch, rho, axis=1, edge_order=2)
        dW_dphi = (np.roll(Wpatch, -1, axis=2) - np.roll(Wpatch, 1, axis=2)) / (2.0 * dphi)
        grad_sq = dW_drho**2 + (dW_dphi / rho[None, :, None]) ** 2
        grad_abs = np.sqrt(grad_sq.sum(axis=0))
        w_abs = np.sqrt((Wpatch**2).sum(axis=0))

        w_rho = np.zeros(n_radial)
        w_rho[1:-1] = 0.5 * (rho[2:] - rho[:-2])
        w_rho[0] = 0.5 * (rho[1] - rho[0])
        w_rho[-1] = 0.5 * (rho[-1] - rho[-2])
        area_w = rho * w_rho
        area = area_w.sum()

        def annulus_mean_p(f):
            return float((np.mean(f**p, axis=1) @ area_w) / area) ** (1.0 / p)

        Mp_gradW[k] = annulus_mean_p(grad_abs)
        M1p_W[k] = r * Mp_gradW[k] + annulus_mean_p(w_abs)

    log_r = np.log(radii)
    rVprime = np.gradient(V, log_r, axis=0, edge_order=2)
    return DecompositionProfile(radii, U0, V, rVprime, Mp_gradW, M1p_W,
                                float(p), proj, recon)


def geometric_radii(r_min: float, r_max: float, per_octave: int = 4) -> np.ndarray:
    """Radii descending from r_max by the factor 2^(-1/per_octave), above r_min."""
    out = []
    r = r_max
    ratio = 2.0 ** (-1.0 / per_octave)
    while r > r_min:
        out.append(r)
        r *= ratio
    return np.array(sorted(out))


# ---------------------------------------------------------------------------
# Regularity indicators and the dynamics cross-check.
# ---------------------------------------------------------------------------

BOUNDED = "bounded"
GROWING = "growing"
VANISHING = "vanishing"
PERSISTENT = "persistent"
INCONCLUSIVE = "inconclusive"


@dataclass
class RegularityDiagnostics:
    """Indicator tables plus threshold verdicts, all against a floor."""

    radii: np.ndarray
    lipschitz_table: np.ndarray       # |V| + |r V'|
    rvp_table: np.ndarray             # |r V'|
    w_ratio_table: np.ndarray         # M1p(W, r) / (omega(r) r)
    u0_ratio_table: np.ndarray        # |U0(r) - U0(r_min)| / (omega(r) r)
    verdicts: dict
    floor: dict
    hessian: Optional[dict] = None


def _per_radius_floor(floor, key, n):
    if floor is None or key not in floor:
        return np.zeros(n)
    val = np.asarray(floor[key], dtype=float)
    return np.broadcast_to(val, (n,)).copy()


def _trend_verdict(values, floors, grow_word=GROWING, ok_word=BOUNDED):
    """Classify the four smallest-radius samples (ordered larger r first)."""
    v = np.asarray(values, dtype=float)
    fl = np.asarray(floors, dtype=float)
    margin = 3.0 * fl + 1e-12
    if np.all(v <= margin):
        return ok_word
    rising = all(v[i + 1] > v[i] + margin[i + 1] for i in range(len(v) - 1))
    if rising and v[-1] > 2.0 * max(v[0], margin[0]):
        return grow_word
    if v[-1] <= 1.25 * v[0] + margin[-1]:
        return ok_word
    return INCONCLUSIVE


def regularity_diagnostics(prof: DecompositionProfile, modulus,
                           hessian: Optional[dict] = None,
                           floor: Optional[dict] = None) -> RegularityDiagnostics:
    """Threshold verdicts for the regularity indicators of a profile.

    Requires at least 8 radii.  Trends are judged on the 4 smallest radii
    against three times the per-key floor (the constant-coefficient control
    value at the same radii); everything below that is resolution, not
    signal.
    """
    n = prof.radii.size
    if n < 8:
        raise ValueError("profile must cover at least 8 radii")
    vnorm = np.linalg.norm(prof.V, axis=1)
    rvp = np.linalg.norm(prof.rVprime, axis=1)
    lip = vnorm + rvp
    omega_r = np.asarray(modulus(prof.radii), dtype=float) * prof.radii
    safe = np.where(omega_r > 1e-300, omega_r, np.inf)
    w_ratio = prof.M1p_W / safe
    u0_dev = np.linalg.norm(prof.U0 - prof.U0[0], axis=1)
    u0_ratio = u0_dev / safe

    # four smallest radii, ordered from larger to smaller r
    sel = slice(3, None, -1)
    floors = {key: _per_radius_floor(floor, key, n)
              for key in ("lip", "rvp", "w_ratio", "u0_ratio")}
    verdicts = {
        "lipschitz": _trend_verdict(lip[sel], floors["lip"][sel]),
        "differentiability": _trend_verdict(
            rvp[sel], floors["rvp"][sel], grow_word=PERSISTENT, ok_word=VANISHING),
        "w_growth": _trend_verdict(w_ratio[sel], floors["w_ratio"][sel]),
        "u0_growth": _trend_verdict(u0_ratio[sel], floors["u0_ratio"][sel]),
    }
    return RegularityDiagnostics(prof.radii, lip, rvp, w_ratio, u0_ratio,
                                 verdicts, floor or {}, hessian)


def compare_with_dynamics(prof: DecompositionProfile, system: FullSystem,
                          rtol: float = 1e-10) -> dict:
    """Propagate the measured (V, rV') inward and compare against the profile.

    The state at the largest radius is lifted to the 8-vector (V, U) with
    the exact elimination blocks (remainder forcing dropped) and pushed to
    each smaller radius; the table reports per-radius deviation of the
    predicted V relative to the measured V scale.
    """
    order = np.argsort(-prof.radii)              # largest radius first
    radii = prof.radii[order]
    V_meas = prof.V[order]
    rVp = prof.rVprime[order]
    ts = -np.log(radii)
    t0 = float(ts[0])
    v0 = V_meas[0]
    vt0 = -rVp[0]
    a_eff, b_eff, _, _ = system.eff_blocks(t0)
    u0 = -a_eff @ vt0 + b_eff @ v0
    y0 = np.concatenate([v0, u0])
    phis, _ = propagate_dense(system, t0, ts, rtol)
    V_pred = np.array([phi @ y0 for phi in phis])[:, :4]
    scale = max(float(np.max(np.linalg.norm(V_meas, axis=1))), 1e-300)
    dev = np.linalg.norm(V_pred - V_meas, axis=1)
    back = np.argsort(radii)
    return {
        "radii": radii[back].tolist(),
        "deviation": dev[back].tolist(),
        "relative_deviation": (dev[back] / scale).tolist(),
        "scale": scale,
    }


# ---------------------------------------------------------------------------
# Exports.
# ---------------------------------------------------------------------------


def write_profile_csv(path, prof: DecompositionProfile) -> None:
    cols = ("r,U0_1,U0_2,V1_1,V1_2,V2_1,V2_2,"
            "rVp_1,rVp_2,rVp_3,rVp_4,Mp_W,M1p_W")
    rows = [cols]
    for k in range(prof.radii.size):
        vals = [prof.radii[k], *prof.U0[k], *prof.V[k], *prof.rVprime[k],
                prof.Mp_gradW[k], prof.M1p_W[k]]
        rows.append(",".join("%.17g" % v for v in vals))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


def write_solution_csv(path, sol: GridSolution) -> None:
    """Nodal values, row-major by y then x, after a geometry header."""
    lines = [f"# L={sol.half_width!r} h={sol.h!r} ordering=row-major-y-then-x",
             "u"]
    N = sol.n_cells
    for iy in range(N + 1):
        for ix in range(N + 1):
            lines.append("%.17g" % sol.u[ix, iy])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
