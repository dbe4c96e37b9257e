"""Rotations, orthographic projection and orthogonal Procrustes alignment.

Shapes are ``3 x N_p`` arrays (one column per point) and observations are
``2 x N_p``. Everything here works on plain numpy values; the differentiable
counterparts used in training live in :mod:`hypnrsfm.layout`.
"""

from dataclasses import dataclass

import numpy as np

from . import so3
from .errors import DegeneracyError, DimensionError, UsageError

ORTHOGRAPHIC = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

# smallest / largest singular value of the cross matrix below this is "degenerate"
DEGENERACY_RATIO = 1e-9
JACOBI_TOL = 1e-12


@dataclass(frozen=True)
class Camera:
    """Known 2x3 projection. Only the orthographic template is accepted."""

    pi: np.ndarray = None
    mode: str = "orthographic"

    def __post_init__(self):
        if self.mode != "orthographic":
            raise UsageError(f"unsupported camera mode {self.mode!r}")
        pi = ORTHOGRAPHIC.copy() if self.pi is None else np.asarray(self.pi, dtype=np.float64)
        if pi.shape != (2, 3) or not np.array_equal(pi, ORTHOGRAPHIC):
            raise UsageError("orthographic camera requires pi = [I_2 | 0]")
        object.__setattr__(self, "pi", pi)


def is_rotation(r, tol=1e-6):
    r = np.asarray(r)
    return (
        r.shape == (3, 3)
        and np.linalg.norm(r.T @ r - np.eye(3)) < tol
        and abs(np.linalg.det(r) - 1.0) < tol
    )


def rodrigues(omega):
    """Rotation matrix exp([omega]_x) for an axis-angle 3-vector."""
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    return so3.exp_map(omega[None])[0]


def random_rotation(rng):
    """Uniformly distributed rotation (Haar measure) via a unit quaternion."""
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def project(cam, rot, shape):
    """W = Pi R S."""
    shape = np.asarray(shape, dtype=np.float64)
    if shape.ndim != 2 or shape.shape[0] != 3:
        raise DimensionError(f"project: shape must be 3 x N_p, got {shape.shape}")
    if shape.shape[1] == 0:
        raise UsageError("project: shape has no points")
    return cam.pi @ (np.asarray(rot) @ shape)


def jacobi_svd_batch(a, tol=JACOBI_TOL, max_sweeps=60):
    """Thin SVD of a stack of small square matrices by one-sided Jacobi.

    ``a`` has shape (n, k, k). Column pairs of every matrix are rotated until
    mutually orthogonal to within ``tol`` relative to their norms. Returns
    ``u, s, vt`` with singular values in descending order, so that
    ``a[i] = u[i] @ diag(s[i]) @ vt[i]``.
    """
    work = np.array(a, dtype=np.float64)
    if work.ndim != 3 or work.shape[1] != work.shape[2]:
        raise DimensionError(f"jacobi_svd expects square matrices, got {work.shape}")
    n, k, _ = work.shape
    v = np.broadcast_to(np.eye(k), work.shape).copy()
    for _ in range(max_sweeps):
        rotated = False
        for i in range(k - 1):
            for j in range(i + 1, k):
                wi, wj = work[:, :, i], work[:, :, j]
                alpha = np.einsum("nr,nr->n", wi, wi)
                beta = np.einsum("nr,nr->n", wj, wj)
                gamma = np.einsum("nr,nr->n", wi, wj)
                active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
                if not active.any():
                    continue
                rotated = True
                g = np.where(active, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * g)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)[:, None]
                s = np.where(active, c[:, 0] * t, 0.0)[:, None]
                wi, wj = wi.copy(), wj.copy()
                work[:, :, i], work[:, :, j] = c * wi - s * wj, s * wi + c * wj
                vi, vj = v[:, :, i].copy(), v[:, :, j].copy()
                v[:, :, i], v[:, :, j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            break
    sv = np.linalg.norm(work, axis=1)
    order = np.argsort(-sv, axis=1, kind="stable")
    sv = np.take_along_axis(sv, order, axis=1)
    work = np.take_along_axis(work, order[:, None, :], axis=2)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    safe = np.where(sv > 0, sv, 1.0)
    u = np.where(sv[:, None, :] > 0, work / safe[:, None, :], 0.0)
    if k == 3:
        # complete the left basis; only reachable for exactly singular input
        missing = sv[:, 2] == 0.0
        u[missing, :, 2] = np.cross(u[missing, :, 0], u[missing, :, 1])
    return u, sv, np.transpose(v, (0, 2, 1))


def jacobi_svd(a, tol=JACOBI_TOL, max_sweeps=60):
    """Single-matrix form of :func:`jacobi_svd_batch`."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"jacobi_svd expects a square matrix, got {a.shape}")
    u, s, vt = jacobi_svd_batch(a[None], tol, max_sweeps)
    return u[0], s[0], vt[0]


def procrustes_rotations(s_i, s_j):
    """Batched orthogonal Procrustes for stacks of shapes (n, 3, N_p).

    Returns ``(rotations, valid)``; ``valid[k]`` is False where the cross
    matrix is degenerate, in which case the rotation is set to identity.
    """
    s_i = np.asarray(s_i, dtype=np.float64)
    s_j = np.asarray(s_j, dtype=np.float64)
    u, sv, vt = jacobi_svd_batch(s_i @ np.transpose(s_j, (0, 2, 1)))
    valid = (sv[:, 0] > 0) & (sv[:, -1] >= DEGENERACY_RATIO * sv[:, 0])
    v = np.transpose(vt, (0, 2, 1)).copy()
    ut = np.transpose(u, (0, 2, 1))
    flip = np.linalg.det(v @ ut) < 0
    v[flip, :, -1] *= -1
    r = v @ ut
    r[~valid] = np.eye(3)
    return r, valid


def _check_pair(s_i, s_j):
    s_i = np.asarray(s_i, dtype=np.float64)
    s_j = np.asarray(s_j, dtype=np.float64)
    if s_i.ndim != 2 or s_i.shape[0] != 3 or s_i.shape != s_j.shape:
        raise DimensionError(f"expected two 3 x N_p shapes, got {s_i.shape} and {s_j.shape}")
    return s_i, s_j


def procrustes_rotation(s_i, s_j):
    """Rotation R minimising ||R s_i - s_j||_F over SO(3).

    With ``s_i s_j^T = U S V^T`` the optimum is ``V U^T``; when that is a
    reflection the column of V paired with the smallest singular value is
    negated.
    """
    s_i, s_j = _check_pair(s_i, s_j)
    r, valid = procrustes_rotations(s_i[None], s_j[None])
    if not valid[0]:
        raise DegeneracyError("cross matrix s_i s_j^T is rank deficient")
    return r[0]


@dataclass(frozen=True)
class ProcrusteanDistances:
    delta_ori: float
    delta_pro: float
    delta_res: float
    delta_pro_norm: float
    delta_res_norm: float


def procrustean_distances(s_i, s_j):
    """Original, Procrustean and residual distances between two shapes."""
    s_i, s_j = _check_pair(s_i, s_j)
    scale = np.linalg.norm(s_j)
    if scale == 0.0:
        raise UsageError("reference shape has zero norm")
    r = procrustes_rotation(s_i, s_j)
    if np.array_equal(s_i, s_j):
        return ProcrusteanDistances(0.0, 0.0, 0.0, 0.0, 0.0)
    ori = float(np.linalg.norm(s_i - s_j))
    # R* is optimal, so any excess over ori is rounding
    pro = min(float(np.linalg.norm(r @ s_i - s_j)), ori)
    res = ori - pro
    return ProcrusteanDistances(ori, pro, res, float(pro / scale), float(res / scale))
