"""Column-batched shape layout used by the differentiable model.

A batch of ``B`` shapes is a ``3*N_p x B`` matrix whose column ``b`` is the
row-major flattening of a ``3 x N_p`` shape: all x coordinates, then all y,
then all z. Observations use the same convention with two blocks. Per-column
rotations are ``9 x B`` blocks of row-major 3x3 matrices.
"""

import numpy as np

from .diffcore import Node, concat_rows, const


def flatten(shapes):
    """Stack a list of ``k x N_p`` arrays into a ``k*N_p x B`` matrix."""
    return np.stack([np.asarray(s, dtype=np.float64).reshape(-1) for s in shapes], axis=1)


def unflatten(columns, rows=3):
    """Inverse of :func:`flatten`; returns an array of shape (B, rows, N_p)."""
    columns = np.asarray(columns)
    return columns.T.reshape(columns.shape[1], rows, -1)


def rotations_to_rows(rotations):
    """(B, 3, 3) stack -> ``9 x B`` block."""
    return np.asarray(rotations, dtype=np.float64).reshape(-1, 9).T


def rotate(rot9, shapes, out_rows=3):
    """Apply per-column rotations to column-batched shapes.

    ``rot9`` is a ``9 x B`` Node or array, ``shapes`` a ``3*N_p x B`` Node.
    With ``out_rows=2`` only the first two rows of ``R S`` are formed, which
    is the orthographic projection.
    """
    if not isinstance(rot9, Node):
        rot9 = const(rot9)
    n_p = shapes.shape[0] // 3
    blocks = [shapes[k * n_p : (k + 1) * n_p] for k in range(3)]
    rows = []
    for r in range(out_rows):
        acc = None
        for k in range(3):
            term = blocks[k] * rot9[3 * r + k : 3 * r + k + 1]
            acc = term if acc is None else acc + term
        rows.append(acc)
    return rows[0] if out_rows == 1 else concat_rows(rows)


def rotate_values(rot9, shapes, out_rows=3):
    """numpy twin of :func:`rotate` for forward-only evaluation."""
    shapes = np.asarray(shapes)
    rot = np.asarray(rot9).T.reshape(-1, 3, 3)[:, :out_rows]
    out = np.einsum("bij,bjp->bip", rot, unflatten(shapes))
    return out.reshape(shapes.shape[1], -1).T
