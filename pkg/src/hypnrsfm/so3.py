"""Vectorised exponential map so(3) -> SO(3) and its Jacobian.

Both the autodiff op and the plain geometry helpers call into this module,
so it depends on numpy only.
"""

import numpy as np

# below this angle the closed forms lose digits to cancellation
_SERIES_ANGLE = 0.2


def skew(omega):
    """Skew-symmetric matrices for a (n, 3) stack of vectors -> (n, 3, 3)."""
    omega = np.asarray(omega, dtype=np.float64)
    x, y, z = omega[:, 0], omega[:, 1], omega[:, 2]
    zero = np.zeros_like(x)
    return np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=1,
    )


def _coefficients(theta):
    """Return a, b, a'/theta, b'/theta for R = I + a K + b K^2."""
    t2 = theta * theta
    small = theta < _SERIES_ANGLE
    safe = np.where(small, 1.0, theta)
    s, c = np.sin(safe), np.cos(safe)

    a = np.where(small, 1 - t2 / 6 * (1 - t2 / 20 * (1 - t2 / 42 * (1 - t2 / 72))), s / safe)
    half = np.sin(safe / 2) / safe
    b = np.where(
        small, 0.5 - t2 / 24 + t2**2 / 720 - t2**3 / 40320 + t2**4 / 3628800, 2 * half * half
    )
    da = np.where(
        small,
        -1 / 3 + t2 / 30 - t2**2 / 840 + t2**3 / 45360 - t2**4 / 3991680,
        (safe * c - s) / safe**3,
    )
    db = np.where(
        small,
        -1 / 12 + t2 / 180 - t2**2 / 6720 + t2**3 / 453600 - t2**4 / 47900160,
        (safe * s + 2 * c - 2) / safe**4,
    )
    return a, b, da, db


_GENERATORS = skew(np.eye(3))


def exp_map(omega, jacobian=False):
    """Rodrigues' formula for a (n, 3) stack of axis-angle vectors.

    Returns rotations of shape (n, 3, 3). With ``jacobian=True`` also
    returns dR of shape (n, 3, 3, 3) where ``dR[i, :, :, k]`` is the
    derivative of the i-th rotation with respect to ``omega[i, k]``.
    """
    omega = np.asarray(omega, dtype=np.float64).reshape(-1, 3)
    theta = np.linalg.norm(omega, axis=1)
    a, b, da, db = _coefficients(theta)
    K = skew(omega)
    K2 = K @ K
    R = np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2
    if not jacobian:
        return R
    n = omega.shape[0]
    dR = np.empty((n, 3, 3, 3))
    for k in range(3):
        E = _GENERATORS[k]
        wk = omega[:, k][:, None, None]
        dR[..., k] = (
            da[:, None, None] * wk * K
            + a[:, None, None] * E
            + db[:, None, None] * wk * K2
            + b[:, None, None] * (E @ K + K @ E)
        )
    return R, dR
