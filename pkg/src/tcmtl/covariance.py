"""Closed-form task covariance update and correlation extraction.

The covariance sub-problem (minimize tr(W U^-1 W^T) over PSD U with
tr(U) <= 1) has the closed-form solution

    U = (W^T W)^(1/2) / tr((W^T W)^(1/2))

computed here through a cyclic Jacobi eigendecomposition. A small ridge is
added before any downstream inversion of the learned U.
"""
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericError

RIDGE = 1e-8
EIG_FLOOR = -1e-10
_SYM_TOL = 1e-9


def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius norm drops below
    tol * max(1, ||a||_F); the scale factor keeps the threshold reachable in
    float64 for matrices with norms far above one. Returns (eigenvalues
    ascending, eigenvectors as columns).
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise NumericError(f"matrix must be square, got shape {a.shape}")
    if n == 1:
        return a.reshape(1).copy(), np.eye(1)
    v = np.eye(n)
    thresh = tol * max(1.0, float(np.linalg.norm(a)))
    skip = thresh / (10.0 * n)
    mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a[mask]))
        if off < thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < skip:
                    continue
                phi = 0.5 * np.arctan2(2.0 * apq, a[q, q] - a[p, p])
                c, s = np.cos(phi), np.sin(phi)
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    else:
        warnings.warn("Jacobi sweep cap reached before the off-diagonal tolerance")
    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals, kind="stable")
    return eigvals[order], v[:, order]


def _require_symmetric(a, what):
    a = np.asarray(a, dtype=np.float64)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > _SYM_TOL * scale:
        raise NumericError(f"{what} must be symmetric")
    return 0.5 * (a + a.T)


def psd_sqrt(a):
    """Symmetric PSD square root: S with S @ S = a.

    Eigenvalues slightly negative from roundoff (>= -1e-10 relative) are
    floored at zero; anything more negative raises.
    """
    a = _require_symmetric(a, "psd_sqrt input")
    eigvals, vecs = jacobi_eigh(a)
    scale = max(1.0, float(eigvals.max(initial=0.0)))
    if eigvals.min(initial=0.0) < EIG_FLOOR * scale:
        raise NumericError(f"matrix is not PSD: min eigenvalue {eigvals.min()}")
    root = vecs @ np.diag(np.sqrt(np.maximum(eigvals, 0.0))) @ vecs.T
    return 0.5 * (root + root.T)


@dataclass
class TaskCovariance:
    """Symmetric PSD task covariance with unit trace after each update."""
    upsilon: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.upsilon = _require_symmetric(self.upsilon, "task covariance")

    @property
    def n_tasks(self):
        return self.upsilon.shape[0]

    def ridged(self):
        """Covariance plus the inversion ridge; use this for any solve."""
        return self.upsilon + RIDGE * np.eye(self.n_tasks)

    def inverse(self):
        return np.linalg.inv(self.ridged())

    def decay_inverse(self, eta2):
        """Inverse used by the weight-decay step, with weak eigendirections
        floored at 4*eta2.

        The decay multiplies the component of W along eigendirection i by
        (1 - 2*eta2/lam_i) per step; for lam_i below 2*eta2 that factor flips
        sign and the plain ridged inverse turns rank-deficient task
        directions into an explosive oscillation. Flooring at 4*eta2 caps the
        per-step shrink at 50%, keeping the decay contractive.
        """
        if eta2 <= 0.0:
            return self.inverse()
        eigvals, vecs = jacobi_eigh(self.upsilon)
        floored = np.maximum(eigvals + RIDGE, 4.0 * eta2)
        return (vecs / floored) @ vecs.T

    def copy(self):
        return TaskCovariance(self.upsilon.copy(), self.degenerate)


def initial_covariance(n_tasks):
    """Maximally uninformative trace-1 start: I / (M+T)."""
    return TaskCovariance(np.eye(n_tasks) / n_tasks)


def update_covariance(w):
    """Closed-form minimizer of tr(W U^-1 W^T) over trace-1 PSD matrices.

    w is the D x (M+T) weight matrix (or a WeightMatrix). An all-zero w is
    degenerate; the update then falls back to I/(M+T) and flags it.
    """
    w = np.asarray(getattr(w, "data", w), dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NumericError("weight matrix contains non-finite values")
    n = w.shape[1]
    gram = w.T @ w
    root = psd_sqrt(0.5 * (gram + gram.T))
    trace = float(np.trace(root))
    if trace <= 0.0:
        warnings.warn("all-zero weight matrix: covariance update is degenerate")
        return TaskCovariance(np.eye(n) / n, degenerate=True)
    return TaskCovariance(root / trace)


def correlation_matrix(upsilon):
    """C_ij = U_ij / sqrt(U_ii U_jj), clipped to [-1, 1] with exact unit
    diagonal. Diagonal entries must be positive."""
    u = np.asarray(getattr(upsilon, "upsilon", upsilon), dtype=np.float64)
    d = np.diag(u)
    if np.any(d <= 0.0):
        raise NumericError("correlation undefined: nonpositive variance on the diagonal")
    s = np.sqrt(d)
    c = u / np.outer(s, s)
    c = np.clip(c, -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    return c


@dataclass
class GroupCorrelationReport:
    """Mean absolute correlation of each attribute group with each landmark
    point (a point's two coordinate columns are averaged)."""
    group_names: list
    point_labels: list
    values: np.ndarray   # (groups, points)

    def ranking_for_point(self, point):
        order = np.argsort(-self.values[:, point], kind="stable")
        return [self.group_names[g] for g in order]

    def rows(self):
        yield ["group"] + [str(p) for p in self.point_labels]
        for name, row in zip(self.group_names, self.values):
            yield [name] + [repr(float(v)) for v in row]


def group_correlation_report(corr, layout, normalize_per_attribute=False):
    """Average |correlation| between each attribute group and each landmark.

    corr is the full (M+T) x (M+T) correlation matrix. With
    normalize_per_attribute, each attribute's per-point values are scaled to
    sum to one across points before group averaging (attributes with no
    correlation at all are left at zero).
    """
    m = layout.n_landmark
    groups = layout.group_names()
    if layout.n_attr and not groups:
        raise NumericError("attribute layout has no group labels")
    points = layout.n_points
    per_attr = np.zeros((layout.n_attr, points))
    for t in range(layout.n_attr):
        col = np.abs(corr[m + t, :m])
        per_attr[t] = 0.5 * (col[0::2] + col[1::2])
        if normalize_per_attribute:
            total = per_attr[t].sum()
            if total > 0:
                per_attr[t] /= total
    values = np.zeros((len(groups), points))
    for g, name in enumerate(groups):
        members = layout.group_members(name)
        if not members:
            raise NumericError(f"attribute group {name!r} is empty")
        values[g] = per_attr[members].mean(axis=0)
    return GroupCorrelationReport(groups, list(range(points)), values)
