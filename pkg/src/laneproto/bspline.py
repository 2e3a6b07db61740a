"""Scalar B-spline curves: evaluation, polynomial conversion, knot insertion,
derivatives and the three-control-point boundary fit.

A curve of degree ``d`` with knots ``t_0 .. t_m`` owns ``n + 1 = m - d``
control points; its domain is ``[t_d, t_{n+1}]``.  Basis functions follow the
Cox-de Boor recursion with the ``0/0 = 0`` convention; half-open spans are
closed at the right end of the domain.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import DegreeError, DomainError, KnotMultiplicityError, SolverError

_TOL = 1e-12


@dataclass(frozen=True)
class BSplineCurve:
    degree: int
    knots: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        coeffs = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "coeffs", coeffs)
        if self.degree < 0:
            raise DegreeError("degree must be non-negative")
        if knots.size != coeffs.size + self.degree + 1:
            raise ValueError(
                f"need len(knots) == len(coeffs) + degree + 1, got {knots.size}, "
                f"{coeffs.size}, {self.degree}"
            )
        if np.any(np.diff(knots) < 0):
            raise ValueError("knot vector must be non-decreasing")

    @property
    def n(self) -> int:
        """Index of the last control point."""
        return self.coeffs.size - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[self.n + 1])

    def multiplicity(self, t: float) -> int:
        return int(np.sum(np.abs(self.knots - t) <= _TOL))

    def __call__(self, t):
        return evaluate(self, t)

    def to_dict(self) -> dict:
        return {"degree": self.degree, "knots": self.knots.tolist(), "coeffs": self.coeffs.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class PolynomialCurve:
    """Polynomial with ascending coefficients on ``domain``."""

    coeffs: np.ndarray
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, self.coeffs)

    def rescaled(self) -> "PolynomialCurve":
        """Same curve expressed in ``u = (t - a) / (b - a)`` on ``[0, 1]``."""
        a, b = self.domain
        u_poly = np.polynomial.Polynomial(self.coeffs)(np.polynomial.Polynomial([a, b - a]))
        c = np.zeros(self.coeffs.size)
        c[: u_poly.coef.size] = u_poly.coef
        return PolynomialCurve(c, (0.0, 1.0))


# --------------------------------------------------------------------------
# basis functions


def basis_functions(knots, degree: int, t) -> np.ndarray:
    """Every basis value ``N_{i,degree}(t)`` by the full recursion.

    Returns shape ``(len(t), n + 1)``.  Meant for inspection and property
    checks; :func:`evaluate` uses the equivalent span-local form.
    """
    knots = np.asarray(knots, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    m = knots.size - 1
    n = m - degree - 1
    hi = knots[n + 1]
    N = ((t[:, None] >= knots[:-1][None, :]) & (t[:, None] < knots[1:][None, :])).astype(float)
    at_end = np.abs(t - hi) <= _TOL
    if np.any(at_end):
        nonempty = np.nonzero(knots[1:] > knots[:-1])[0]
        last = nonempty[nonempty <= n][-1]
        N[at_end, :] = 0.0
        N[at_end, last] = 1.0
    for p in range(1, degree + 1):
        out = np.zeros((t.size, m - p))
        for i in range(m - p):
            den1 = knots[i + p] - knots[i]
            den2 = knots[i + p + 1] - knots[i + 1]
            if den1 > 0:
                out[:, i] += (t - knots[i]) / den1 * N[:, i]
            if den2 > 0:
                out[:, i] += (knots[i + p + 1] - t) / den2 * N[:, i + 1]
        N = out
    return N


def _spans(knots: np.ndarray, degree: int, n: int, t: np.ndarray) -> np.ndarray:
    """Span index ``s`` with ``t_s <= t < t_{s+1}``, clamped to ``[degree, n]``."""
    s = np.searchsorted(knots, t, side="right") - 1
    return np.clip(s, degree, n)


def _local_basis(knots: np.ndarray, degree: int, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """The ``degree + 1`` non-zero basis values ``N_{s-degree..s}`` at each ``t``."""
    N = np.zeros((t.size, degree + 1))
    N[:, 0] = 1.0
    left = np.zeros((t.size, degree + 1))
    right = np.zeros((t.size, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = t - knots[s + 1 - j]
        right[:, j] = knots[s + j] - t
        saved = np.zeros(t.size)
        for r in range(j):
            den = right[:, r + 1] + left[:, j - r]
            temp = np.divide(N[:, r], den, out=np.zeros(t.size), where=den > 0)
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N


def _basis_row(knots: np.ndarray, degree: int, n_ctrl: int, t: float) -> np.ndarray:
    """Dense row of all basis values at a single parameter."""
    tt = np.array([t])
    s = _spans(knots, degree, n_ctrl - 1, tt)
    row = np.zeros(n_ctrl)
    row[s[0] - degree : s[0] + 1] = _local_basis(knots, degree, s, tt)[0]
    return row


def _check_domain(curve: BSplineCurve, t: np.ndarray) -> np.ndarray:
    lo, hi = curve.domain
    if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
        raise DomainError(f"evaluation outside [{lo}, {hi}]")
    return np.clip(t, lo, hi)


def evaluate(curve: BSplineCurve, t):
    """Curve value ``sum_i P_i N_{i,d}(t)``; scalar in, scalar out."""
    scalar = np.ndim(t) == 0
    tt = _check_domain(curve, np.atleast_1d(np.asarray(t, dtype=float)))
    d = curve.degree
    s = _spans(curve.knots, d, curve.n, tt)
    N = _local_basis(curve.knots, d, s, tt)
    idx = s[:, None] - d + np.arange(d + 1)[None, :]
    vals = np.sum(N * curve.coeffs[idx], axis=1)
    return float(vals[0]) if scalar else vals


# --------------------------------------------------------------------------
# construction and manipulation


def poly_to_bspline(poly, degree: int) -> BSplineCurve:
    """Clamped Bezier-form B-spline of a polynomial on ``[0, 1]``.

    ``poly`` is a :class:`PolynomialCurve` (rescaled to ``[0, 1]`` first) or an
    ascending coefficient array already expressed on ``[0, 1]``.
    """
    a = poly.rescaled().coeffs if isinstance(poly, PolynomialCurve) else np.asarray(poly, dtype=float)
    nz = np.nonzero(a)[0]
    if nz.size and nz[-1] > degree:
        raise DegreeError(f"polynomial degree {nz[-1]} exceeds spline degree {degree}")
    a = np.pad(a[: degree + 1], (0, max(0, degree + 1 - a.size)))
    P = np.array([
        sum(comb(i, j) / comb(degree, j) * a[j] for j in range(i + 1))
        for i in range(degree + 1)
    ])
    knots = np.concatenate((np.zeros(degree + 1), np.ones(degree + 1)))
    return BSplineCurve(degree, knots, P)


def insert_knot(curve: BSplineCurve, t_hat: float) -> BSplineCurve:
    """Insert ``t_hat`` once without changing the curve's shape."""
    d, knots, P, n = curve.degree, curve.knots, curve.coeffs, curve.n
    if not knots[d] < t_hat < knots[n + 1]:
        raise DomainError(f"knot {t_hat} must lie strictly inside the domain {curve.domain}")
    if curve.multiplicity(t_hat) + 1 > d:
        raise KnotMultiplicityError(f"knot {t_hat} would exceed multiplicity {d}")
    s = int(_spans(knots, d, n, np.array([t_hat]))[0])
    Q = np.empty(n + 2)
    for i in range(n + 2):
        if i <= s - d:
            Q[i] = P[i]
        elif i <= s:
            alpha = (t_hat - knots[i]) / (knots[i + d] - knots[i])
            Q[i] = (1.0 - alpha) * P[i - 1] + alpha * P[i]
        else:
            Q[i] = P[i - 1]
    return BSplineCurve(d, np.insert(knots, s + 1, t_hat), Q)


def derivative_matrix(knots, degree: int, r: int) -> np.ndarray:
    """Linear map from control points to r-th derivative control points.

    Row ``i`` of step ``k`` encodes
    ``P^(k)_i = (d - k + 1) (P^(k-1)_{i+1} - P^(k-1)_i) / (t_{i+d+1} - t_{i+k})``
    with zero rows where the knot difference vanishes.
    """
    knots = np.asarray(knots, dtype=float)
    n_ctrl = knots.size - degree - 1
    M = np.eye(n_ctrl)
    for k in range(1, r + 1):
        nk = M.shape[0] - 1
        step = np.zeros((nk, nk + 1))
        for i in range(nk):
            den = knots[i + degree + 1] - knots[i + k]
            if den > 0:
                c = (degree - k + 1) / den
                step[i, i] = -c
                step[i, i + 1] = c
        M = step @ M
    return M


def derivative(curve: BSplineCurve, r: int = 1) -> BSplineCurve:
    """r-th derivative as a B-spline of degree ``d - r`` on knots ``t_r .. t_{m-r}``."""
    d = curve.degree
    if r < 0:
        raise ValueError("derivative order must be non-negative")
    if r > d:
        raise DegreeError(f"derivative order {r} exceeds degree {d}")
    m = curve.knots.size - 1
    P = derivative_matrix(curve.knots, d, r) @ curve.coeffs
    return BSplineCurve(d - r, curve.knots[r : m - r + 1], P)


def _jet_rows(curve: BSplineCurve, t: float) -> np.ndarray:
    """3 x (n+1) matrix mapping control points to value, slope and curvature at ``t``."""
    d, knots = curve.degree, curve.knots
    m = knots.size - 1
    n_ctrl = curve.coeffs.size
    rows = []
    for r in range(3):
        row = _basis_row(knots[r : m - r + 1], d - r, n_ctrl - r, t)
        rows.append(row @ derivative_matrix(knots, d, r))
    return np.array(rows)


def active_indices(curve: BSplineCurve, t_eval: float) -> list[int]:
    """Control points whose basis value or first two derivatives are non-zero at ``t_eval``."""
    J = _jet_rows(curve, t_eval)
    return [int(i) for i in np.nonzero(np.any(np.abs(J) > 1e-14, axis=0))[0]]


def boundary_fit(curve: BSplineCurve, x: float, x_dot: float, x_ddot: float, t_eval: float,
                 interval: tuple[float, float] | None = None,
                 multiplicity: int = 3) -> BSplineCurve:
    """Adjust three control points so value, slope and curvature at ``t_eval``
    equal ``(x, x_dot, x_ddot)``.

    When ``interval`` is given, knots are first inserted at both interval ends
    until they reach ``multiplicity``; ends that already have it, such as the
    clamped ends of the domain, are left alone.  The solved control points are
    the first three whose basis functions carry value or derivatives at
    ``t_eval``; every other control point keeps its value, so the curve only
    changes on the supports of those three basis functions.
    """
    if curve.degree < 2:
        raise DegreeError("boundary fit needs a curve of degree >= 2")
    if interval is not None:
        lo, hi = curve.domain
        for b in interval:
            if lo < b < hi:
                while curve.multiplicity(b) < multiplicity:
                    curve = insert_knot(curve, b)
    tt = float(_check_domain(curve, np.array([t_eval]))[0])
    J = _jet_rows(curve, tt)
    active = np.nonzero(np.any(np.abs(J) > 1e-14, axis=0))[0]
    if active.size < 3:
        raise SolverError(f"only {active.size} control points influence t={t_eval}")
    idx = active[:3]
    rest = np.setdiff1d(np.arange(curve.coeffs.size), idx)
    A = J[:, idx]
    rhs = np.array([x, x_dot, x_ddot], dtype=float) - J[:, rest] @ curve.coeffs[rest]
    scale = np.abs(A).max(axis=1)
    if np.any(scale == 0) or abs(np.linalg.det(A / scale[:, None])) < 1e-12:
        raise SolverError("singular boundary system (degenerate knot spacing)")
    P = curve.coeffs.copy()
    P[idx] = np.linalg.solve(A, rhs)
    return BSplineCurve(curve.degree, curve.knots, P)
