"""Small dense QP and LP solvers for safety filtering, written for 2-3 control dimensions.

The QP is the projection of a reference command onto the intersection of
half-planes and a control box:

    min ||u - u_ref||^2   s.t.   a_r . u >= b_r  for every row,  lo <= u <= hi

With at most three variables and roughly a dozen constraints the optimal
active set can be found exactly by enumerating candidate sets in a fixed
deterministic order and checking the KKT conditions, which sidesteps pivot
cycling entirely.  The LP (used for worst-case own-contribution bounds) is a
classic two-phase tableau simplex with Bland's rule over the box-extended
polytope.

Both solvers have independent oracles used by the test suite and the CLI
self-test: a zoomed dense grid search for the QP and exhaustive vertex
enumeration for the LP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Hashable, Optional, Sequence

import numpy as np

from .dynamics import Box

# A row normal below this norm carries no direction: the row is vacuous when
# its offset asks for nothing (b <= 0) and unsatisfiable otherwise.
DEGENERATE_NORM_TOL = 1e-12

# Internal feasibility / dual tolerance and the reported activity tolerance.
FEAS_TOL = 1e-9
ACTIVE_TOL = 1e-8


class Infeasible(Exception):
    """The constraint set is empty inside the control box."""


@dataclass(frozen=True)
class ConstraintRow:
    """One linear constraint a . u >= b with a tag naming its source."""

    a: tuple[float, ...]
    b: float
    tag: Hashable = None

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", float(self.b))

    def normal(self) -> np.ndarray:
        return np.array(self.a)


@dataclass
class QPProblem:
    u_ref: np.ndarray
    rows: Sequence[ConstraintRow]
    box: Box


def _assemble(rows: Sequence[ConstraintRow], box: Box):
    """Stack user rows and box faces into one a.u >= b system.

    Degenerate user rows are dropped when vacuous; a degenerate row with b > 0
    is an immediate infeasibility.
    """
    A_list, b_list, tags = [], [], []
    for row in rows:
        a = row.normal()
        if float(np.linalg.norm(a)) < DEGENERATE_NORM_TOL:
            if row.b <= FEAS_TOL:
                continue
            raise Infeasible(f"row {row.tag!r} has a zero normal but demands b={row.b} > 0")
        A_list.append(a)
        b_list.append(row.b)
        tags.append(row.tag)
    n = box.dim
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        A_list.append(e.copy())
        b_list.append(box.lo[k])
        tags.append(f"box{k}lo")
        A_list.append(-e)
        b_list.append(-box.hi[k])
        tags.append(f"box{k}hi")
    return np.array(A_list), np.array(b_list), tags


def _kkt_candidate_search(r: np.ndarray, A: np.ndarray, b: np.ndarray, n: int,
                          tol: float) -> Optional[np.ndarray]:
    """Enumerate active sets of size 0..n in deterministic order; return the first KKT point."""
    m = len(b)
    if np.all(A @ r - b >= -tol):
        return r.copy()
    for k in range(1, n + 1):
        for S in combinations(range(m), k):
            As = A[list(S)]
            G = As @ As.T
            rhs = b[list(S)] - As @ r
            try:
                lam = np.linalg.solve(G, rhs)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(lam)):
                continue
            if float(np.linalg.norm(G @ lam - rhs)) > 1e-9 * (1.0 + float(np.linalg.norm(rhs))):
                continue  # normals dependent; a smaller or different set covers this case
            if np.any(lam < -tol):
                continue
            u = r + As.T @ lam
            if np.all(A @ u - b >= -tol):
                return u
    return None


def solve_qp(problem: QPProblem) -> tuple[np.ndarray, tuple]:
    """Project u_ref onto the feasible set; returns (u, tags of active constraints).

    Raises Infeasible when no point in the box satisfies every row.  The
    returned point satisfies every constraint to 1e-9 and the KKT residuals
    are below 1e-8 by construction.
    """
    r = np.asarray(problem.u_ref, dtype=float)
    A, b, tags = _assemble(problem.rows, problem.box)
    n = problem.box.dim
    for tol in (FEAS_TOL, 1e-7):
        u = _kkt_candidate_search(r, A, b, n, tol)
        if u is not None:
            resid = A @ u - b
            active = tuple(tags[i] for i in range(len(b)) if resid[i] <= ACTIVE_TOL)
            return u, active
    raise Infeasible("constraint rows admit no command inside the control box")


def qp_oracle(problem: QPProblem, resolution: float = 1e-3,
              refine_factor: float = 100.0) -> Optional[tuple[float, np.ndarray]]:
    """Dense-grid reference optimum, zoomed locally until the certification step.

    ``resolution`` is the coarsest step at which a feasible point must be
    found; the search then keeps zooming until the grid step drops below
    resolution / refine_factor, so the returned objective is accurate to a few
    parts in 1e-4 for unit-scale boxes.  Returns None when no feasible grid
    point exists at any refinement (used by tests to cross-check Infeasible).
    """
    box = problem.box
    n = box.dim
    r = np.asarray(problem.u_ref, dtype=float)
    try:
        A, b, _ = _assemble(problem.rows, box)
    except Infeasible:
        return None
    lo = np.array(box.lo)
    hi = np.array(box.hi)

    def grid_best(axes):
        grids = np.meshgrid(*axes, indexing="ij")
        P = np.stack([g.ravel() for g in grids], axis=1)
        mask = np.all(P @ A.T - b >= -1e-12, axis=1)
        if not mask.any():
            return None
        Pf = P[mask]
        d2 = np.einsum("ij,ij->i", Pf - r, Pf - r)
        i = int(np.argmin(d2))
        return float(d2[i]), Pf[i].copy()

    # Global coarse pass over the whole box, densifying until a feasible
    # point shows up (or the set is declared empty at the densest grid).
    pts = 41
    found = grid_best([np.linspace(lo[k], hi[k], pts) for k in range(n)])
    while found is None:
        if pts >= 800:
            return None
        pts = pts * 2 + 1
        found = grid_best([np.linspace(lo[k], hi[k], pts) for k in range(n)])
    best_val, best_u = found
    step = float(np.max((hi - lo) / (pts - 1)))

    # Local refinement, pattern-search style.  The grid argmin can sit far
    # from the true optimum along a constraint boundary (the objective is
    # nearly flat along it), so recentre at fixed spacing while the best
    # point keeps moving and only halve the spacing once the centre wins.
    target_step = resolution / refine_factor
    offsets = np.arange(-20.0, 21.0)
    while step > target_step:
        for _ in range(200):
            axes = [np.clip(best_u[k] + offsets * step, lo[k], hi[k])
                    for k in range(n)]
            found = grid_best(axes)
            if found is not None and found[0] < best_val - 1e-12 * max(1.0, best_val):
                best_val, best_u = found
            else:
                break
        step *= 0.5

    # 1-D sweeps along every constraint boundary.  A boundary tilted by less
    # than one cell per window height hides its optimum from an axis-aligned
    # grid at any spacing, while along the line itself the objective is
    # strictly convex, so a zoomed 1-D scan pins the minimiser reliably.
    if n == 2:
        centre = 0.5 * (lo + hi)
        half_span = 0.5 * float(np.linalg.norm(hi - lo))
        for i in range(A.shape[0]):
            a = A[i]
            nrm2 = float(a @ a)
            if nrm2 < DEGENERATE_NORM_TOL:
                continue
            p0 = a * (b[i] / nrm2)
            tang = np.array([-a[1], a[0]]) / float(np.sqrt(nrm2))
            span = half_span + float(np.linalg.norm(centre - p0))
            s_lo, s_hi = -span, span
            best_here = None
            while True:
                s = np.linspace(s_lo, s_hi, 2001)
                P = p0[None, :] + s[:, None] * tang[None, :]
                mask = np.all(P @ A.T - b >= -1e-12, axis=1)
                if not mask.any():
                    break
                Pf = P[mask]
                sf = s[mask]
                d2 = np.einsum("ij,ij->i", Pf - r, Pf - r)
                j = int(np.argmin(d2))
                best_here = (float(d2[j]), Pf[j].copy())
                cell = (s_hi - s_lo) / 2000.0
                if cell <= 1e-6:
                    break
                s_lo, s_hi = sf[j] - 2.0 * cell, sf[j] + 2.0 * cell
            if best_here is not None and best_here[0] < best_val:
                best_val, best_u = best_here
    return best_val, best_u


def _pivot(A: np.ndarray, b: np.ndarray, basis: list, row: int, col: int) -> None:
    piv = A[row, col]
    A[row] /= piv
    b[row] /= piv
    for i in range(len(b)):
        if i != row and A[i, col] != 0.0:
            f = A[i, col]
            A[i] -= f * A[row]
            b[i] -= f * b[row]
    basis[row] = col


def _simplex_iterate(obj: np.ndarray, A: np.ndarray, b: np.ndarray, basis: list,
                     tol: float, max_iter: int = 500):
    """Run simplex pivots to optimality with Bland's anti-cycling rule."""
    m, total = A.shape
    for _ in range(max_iter):
        cb = obj[basis]
        red = obj - cb @ A
        enter = -1
        for j in range(total):
            if j not in basis and red[j] > tol:
                enter = j
                break
        if enter < 0:
            return float(cb @ b)
        leave = -1
        best_ratio = math.inf
        for i in range(m):
            if A[i, enter] > tol:
                ratio = b[i] / A[i, enter]
                if ratio < best_ratio - 1e-12 or (
                    abs(ratio - best_ratio) <= 1e-12 and (leave < 0 or basis[i] < basis[leave])
                ):
                    best_ratio = ratio
                    leave = i
        if leave < 0:
            raise ArithmeticError("LP column unbounded; the box rows should prevent this")
        _pivot(A, b, basis, leave, enter)
    raise ArithmeticError("simplex failed to terminate")


def solve_lp(c: np.ndarray, rows: Sequence[ConstraintRow], box: Box) -> tuple[float, np.ndarray]:
    """Maximize c . u subject to constraint rows inside the box.

    Two-phase tableau simplex after shifting u to nonnegative variables.
    Returns (optimal value, maximizer); raises Infeasible when the rows admit
    no point in the box.
    """
    c = np.asarray(c, dtype=float)
    n = box.dim
    lo = np.array(box.lo)
    hi = np.array(box.hi)
    A_rows, b_rows, _ = _assemble(rows, box)
    # _assemble appended the box faces; strip them (the shift handles bounds).
    n_user = len(b_rows) - 2 * n
    A_user = A_rows[:n_user]
    b_user = b_rows[:n_user]
    if n_user == 0:
        # Pure box problem: optimum sits at the obvious corner.
        u = np.where(c > 0.0, hi, lo)
        return float(c @ u), u
    # Standard form in x = u - lo >= 0:
    #   user row a.u >= b       ->  -a.x <= a.lo - b
    #   upper bound u <= hi     ->   x <= hi - lo
    m = n_user + n
    G = np.zeros((m, n))
    h = np.zeros(m)
    G[:n_user] = -A_user
    h[:n_user] = A_user @ lo - b_user
    G[n_user:] = np.eye(n)
    h[n_user:] = hi - lo
    tol = FEAS_TOL
    T = np.hstack([G, np.eye(m)])
    rhs = h.copy()
    basis = list(range(n, n + m))
    art_rows = [i for i in range(m) if rhs[i] < 0.0]
    n_cols = n + m
    if art_rows:
        for i in art_rows:
            T[i] *= -1.0
            rhs[i] *= -1.0
        extra = np.zeros((m, len(art_rows)))
        for k, i in enumerate(art_rows):
            extra[i, k] = 1.0
            basis[i] = n_cols + k
        T = np.hstack([T, extra])
        obj1 = np.zeros(n_cols + len(art_rows))
        obj1[n_cols:] = -1.0
        value = _simplex_iterate(obj1, T, rhs, basis, tol)
        if value < -1e-8:
            raise Infeasible("constraint rows admit no command inside the control box")
        keep = []
        for i in range(m):
            if basis[i] >= n_cols:
                piv = -1
                for j in range(n_cols):
                    if abs(T[i, j]) > tol:
                        piv = j
                        break
                if piv < 0:
                    continue  # redundant 0 = 0 row
                _pivot(T, rhs, basis, i, piv)
            keep.append(i)
        T = T[keep, :n_cols]
        rhs = rhs[keep]
        basis = [basis[i] for i in keep]
    obj2 = np.zeros(n_cols)
    obj2[:n] = c
    _simplex_iterate(obj2, T, rhs, basis, tol)
    x = np.zeros(n_cols)
    for i, bi in enumerate(basis):
        x[bi] = rhs[i]
    u = lo + x[:n]
    return float(c @ u), u


def random_qp_instance(rng: np.random.Generator, n: int = 2, max_rows: int = 4,
                       box_half: float = 3.0) -> QPProblem:
    """Random projection problem whose feasible set contains a ball of radius >= 0.25.

    The margin ball keeps the grid oracle honest (a coarse grid always finds
    feasible points) while still letting rows and box faces go active.
    """
    box = Box((-box_half,) * n, (box_half,) * n)
    z = rng.uniform(-0.8 * box_half, 0.8 * box_half, n)
    rows = []
    for r in range(int(rng.integers(0, max_rows + 1))):
        a = rng.normal(size=n)
        na = float(np.linalg.norm(a))
        if na < 1e-6:
            a = np.eye(n)[0]
            na = 1.0
        a *= float(rng.uniform(0.5, 2.0)) / na
        slack = float(rng.uniform(0.25, 1.5))
        b = float(a @ z) - slack * float(np.linalg.norm(a))
        rows.append(ConstraintRow(a=tuple(a), b=b, tag=f"r{r}"))
    u_ref = rng.uniform(-1.2 * box_half, 1.2 * box_half, n)
    return QPProblem(u_ref=u_ref, rows=rows, box=box)


def random_lp_instance(rng: np.random.Generator, n: int = 2, max_rows: int = 4,
                       box_half: float = 3.0):
    """Random bounded LP with a nonempty interior, for simplex-vs-vertex checks."""
    p = random_qp_instance(rng, n=n, max_rows=max_rows, box_half=box_half)
    c = rng.normal(size=n)
    return c, p.rows, p.box


def lp_vertex_oracle(c: np.ndarray, rows: Sequence[ConstraintRow], box: Box,
                     tol: float = FEAS_TOL) -> tuple[float, np.ndarray]:
    """Exhaustive vertex enumeration over the box-extended polytope (test oracle).

    Solves every n-subset of tight constraints, filters feasible intersection
    points, and returns the best.  Exact for bounded feasible sets, which the
    box guarantees.
    """
    c = np.asarray(c, dtype=float)
    A, b, _ = _assemble(rows, box)
    n = box.dim
    m = len(b)
    best_val = -math.inf
    best_u: Optional[np.ndarray] = None
    for S in combinations(range(m), n):
        As = A[list(S)]
        bs = b[list(S)]
        try:
            u = np.linalg.solve(As, bs)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(u)):
            continue
        if float(np.linalg.norm(As @ u - bs)) > 1e-9 * (1.0 + float(np.linalg.norm(bs))):
            continue
        if np.all(A @ u - b >= -tol):
            val = float(c @ u)
            if val > best_val:
                best_val = val
                best_u = u
    if best_u is None:
        raise Infeasible("vertex enumeration found no feasible vertex")
    return best_val, best_u
