"""Training objectives.

* data loss: reprojection error of the basis (intermediate term) plus that
  of one selected hypothesis,
* Procrustean residual loss between pairs of similar best hypotheses, with
  the aligning rotation held constant,
* canonicalization loss: an auxiliary network must undo a random rotation of
  each basis shape,
* total loss combining the three.

Per-frame functions take :class:`~hypnrsfm.model.HypothesisSet` objects; the
``batch_*`` functions take a :class:`~hypnrsfm.model.BatchForward` and are
what the trainer uses.
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import layout
from .diffcore import (
    Node,
    column_norms,
    concat_rows,
    const,
    frobenius_norm,
    leaky_relu,
    mean,
    reshape,
    transpose,
)
from .errors import ConfigError
from .geometry import procrustes_rotation, procrustes_rotations, random_rotation
from .model import as_nodes


class SelectionStrategy(str, enum.Enum):
    BEST = "best"
    WORST = "worst"
    MIXTURE_DENSITY = "mixture-density"


@dataclass(frozen=True)
class LossWeights:
    lambda_b: float = 0.8
    lambda_f: float = 0.2
    lambda_res: float = 0.1
    epsilon: float = 0.15
    lambda_cano: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.lambda_b <= 1.0:
            raise ConfigError("must lie in [0, 1]", "lambda_b")
        if not 0.0 <= self.lambda_f <= 1.0:
            raise ConfigError("must lie in [0, 1]", "lambda_f")
        if abs(self.lambda_b + self.lambda_f - 1.0) > 1e-12:
            raise ConfigError("lambda_b + lambda_f must equal 1", "lambda_f")
        if self.lambda_res < 0:
            raise ConfigError("must be nonnegative", "lambda_res")
        if self.lambda_cano < 0:
            raise ConfigError("must be nonnegative", "lambda_cano")
        if not self.epsilon > 0:
            raise ConfigError("must be positive", "epsilon")


def select_hypotheses(errors, strategy, rng=None):
    """Index of the trained hypothesis per frame.

    ``errors`` is ``n_m`` long, or ``n_m x B`` for a batch. Ties go to the
    lowest index. Mixture density samples uniformly and needs ``rng``.
    """
    errors = np.asarray(errors)
    strategy = SelectionStrategy(strategy)
    if strategy is SelectionStrategy.BEST:
        return np.argmin(errors, axis=0)
    if strategy is SelectionStrategy.WORST:
        return np.argmax(errors, axis=0)
    return rng.integers(errors.shape[0], size=errors.shape[1:])


def data_loss(w, cam, hyp, weights, strategy=SelectionStrategy.BEST, rng=None):
    """lambda_B ||w - PiR S^B|| + lambda_F ||w - PiR S^sel|| for one frame."""
    m = int(select_hypotheses(hyp.reproj_errors, strategy, rng))
    w = const(w)
    pr = const(cam.pi) @ hyp.rotation
    e_basis = frobenius_norm(w - pr @ hyp.basis)
    e_sel = frobenius_norm(w - pr @ hyp.hypotheses[m])
    return e_basis * weights.lambda_b + e_sel * weights.lambda_f


def residual_loss(s_a, s_b, epsilon):
    """Gated Procrustean residual between two 3 x N_p shape Nodes.

    The aligning rotation and the similarity gate are computed from values
    only; gradient flows through the two distances and the normaliser.
    """
    rot = procrustes_rotation(s_a.value, s_b.value)
    scale = frobenius_norm(s_b)
    pro = frobenius_norm(const(rot) @ s_a - s_b) / scale
    if not pro.value[0, 0] < epsilon:
        return const(0.0)
    return frobenius_norm(s_a - s_b) / scale - pro


def _canonicalize(p, cols):
    hidden = leaky_relu(p["canon.W1"] @ cols + p["canon.b1"])
    return cols + p["canon.W2"] @ hidden + p["canon.b2"]


def _as_columns(shapes):
    if isinstance(shapes, Node):
        return shapes
    rows = [reshape(s, 1, s.shape[0] * s.shape[1]) for s in shapes]
    return transpose(concat_rows(rows))


def canonicalization_loss(params, basis, rng=None, rotations=None):
    """Mean ||C(flatten(Q S^B)) - flatten(S^B)||_F over the batch.

    ``basis`` is a list of 3 x N_p Nodes or a column-batched Node.
    ``rotations`` (B x 3 x 3) overrides the random draw from ``rng``.
    """
    p = as_nodes(params)
    cols = _as_columns(basis)
    if rotations is None:
        rotations = np.stack([random_rotation(rng) for _ in range(cols.shape[1])])
    rotated = layout.rotate(layout.rotations_to_rows(rotations), cols)
    return mean(column_norms(_canonicalize(p, rotated) - cols))


# ---------------------------------------------------------------------------
# batched forms


def derangement(n, rng):
    """Uniform random permutation without fixed points (rejection sampling)."""
    if n < 2:
        raise ConfigError("pairing needs at least two frames", "batch_size")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def batch_data_loss(out, weights, strategy=SelectionStrategy.BEST, rng=None, errors=None):
    """Mean data loss over the frames of a :class:`BatchForward`.

    Returns ``(loss, selected_indices)``.
    """
    errors = out.reproj_errors() if errors is None else errors
    idx = select_hypotheses(errors, strategy, rng)
    w = const(out.w)
    chosen = out.basis + out.deform @ const(out.selector(idx))
    e_basis = column_norms(w - layout.rotate(out.rot9, out.basis, out_rows=2))
    e_sel = column_norms(w - layout.rotate(out.rot9, chosen, out_rows=2))
    loss = mean(e_basis * weights.lambda_b + e_sel * weights.lambda_f)
    return loss, idx


def batch_residual_loss(shapes, pairs, epsilon):
    """Mean gated residual loss over pairs ``(b, pairs[b])`` of columns.

    Degenerate pairs count as gated off. Returns ``(loss, pass_rate)``.
    """
    n = shapes.shape[1]
    perm = np.zeros((n, n))
    perm[pairs, np.arange(n)] = 1.0
    partner = shapes @ const(perm)
    vals = layout.unflatten(shapes.value)
    rots, valid = procrustes_rotations(vals, vals[pairs])
    rot9 = const(layout.rotations_to_rows(rots))
    scale = column_norms(partner)
    pro = column_norms(layout.rotate(rot9, shapes) - partner) / scale
    gate = valid & (pro.value[0] < epsilon)
    res = column_norms(shapes - partner) / scale - pro
    return mean(res * const(gate[None].astype(np.float64))), float(gate.mean())


def best_hypotheses(out, errors=None):
    errors = out.reproj_errors() if errors is None else errors
    return out.basis + out.deform @ const(out.selector(np.argmin(errors, axis=0)))


def total_loss(out, weights, strategy=SelectionStrategy.BEST, rng=None, pairs=None,
               cano_rotations=None, errors=None):
    """Data + canonicalization + weighted residual loss for one batch.

    Returns ``(loss, parts)`` where ``parts`` holds the float value of each
    component, the residual gate pass rate and the selected indices.
    Passing ``errors`` (``n_m x B``) fixes which hypotheses are selected.
    """
    if weights.lambda_res > 0 and out.batch < 2:
        raise ConfigError("residual loss needs a batch of at least 2 frames", "batch_size")
    errors = out.reproj_errors() if errors is None else errors
    loss, idx = batch_data_loss(out, weights, strategy, rng, errors)
    parts = {"data": loss.value[0, 0], "cano": 0.0, "res": 0.0, "pass_rate": 0.0, "selected": idx}
    if weights.lambda_cano > 0:
        cano = canonicalization_loss(out.params, out.basis, rng, cano_rotations)
        parts["cano"] = cano.value[0, 0]
        loss = loss + cano * weights.lambda_cano
    if weights.lambda_res > 0:
        if pairs is None:
            pairs = derangement(out.batch, rng)
        res, rate = batch_residual_loss(best_hypotheses(out, errors), pairs, weights.epsilon)
        parts["res"], parts["pass_rate"] = res.value[0, 0], rate
        loss = loss + res * weights.lambda_res
    return loss, parts
