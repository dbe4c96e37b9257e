"""Multi-hypothesis reconstruction network.

A backbone maps a centred 2D observation to a feature vector. From it the
network predicts one camera rotation, deterministic basis coefficients and,
for every noise draw, stochastic deformation coefficients. Basis and
deformation layers turn the coefficients into shapes and each hypothesis is
``basis + deformation``. The hypothesis with the smallest reprojection error
is the reconstruction.

Every head is a single affine map on feature vectors. The basis and
deformation layers have no bias, so their columns are the atom shapes; both
layers centre their output so that reconstructions have zero row means.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layout
from .diffcore import Node, concat_rows, const, leaky_relu, param, reshape, rodrigues, transpose
from .errors import DimensionError, UsageError
from .geometry import Camera

CENTER_TOL = 1e-9


@dataclass
class ModelParams:
    """Named weight matrices plus the sizes they were built for."""

    n_p: int
    k_b: int
    k_d: int
    dim_z: int
    width: int
    arrays: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.k_b < self.k_d:
            raise UsageError(f"k_b ({self.k_b}) must be smaller than k_d ({self.k_d})")
        expected = param_shapes(self.n_p, self.k_b, self.k_d, self.dim_z, self.width)
        if self.arrays:
            if set(self.arrays) != set(expected):
                raise DimensionError(f"parameter names {sorted(self.arrays)} do not match the model")
            for name, shape in expected.items():
                if self.arrays[name].shape != shape:
                    raise DimensionError(
                        f"{name}: expected shape {shape}, got {self.arrays[name].shape}"
                    )

    @property
    def names(self):
        return list(self.arrays)

    def as_nodes(self, requires_grad=False):
        wrap = param if requires_grad else const
        return {name: wrap(value, name=name) for name, value in self.arrays.items()}

    def replace(self, arrays):
        return ModelParams(self.n_p, self.k_b, self.k_d, self.dim_z, self.width, dict(arrays))

    def copy(self):
        return self.replace({k: v.copy() for k, v in self.arrays.items()})


def param_shapes(n_p, k_b, k_d, dim_z, width):
    """Name -> shape for every learnable matrix, in creation order."""
    shapes = {
        "backbone.in.W": (width, 2 * n_p),
        "backbone.in.b": (width, 1),
    }
    for blk in range(2):
        for layer in (1, 2):
            shapes[f"backbone.block{blk}.W{layer}"] = (width, width)
            shapes[f"backbone.block{blk}.b{layer}"] = (width, 1)
    shapes.update(
        {
            "rotation.W": (3, width),
            "rotation.b": (3, 1),
            "alpha.W": (k_b, width),
            "alpha.b": (k_b, 1),
            "beta.W": (k_d, width + k_b + dim_z),
            "beta.b": (k_d, 1),
            "basis.W": (3 * n_p, k_b),
            "deform.W": (3 * n_p, k_d),
            "canon.W1": (width, 3 * n_p),
            "canon.b1": (width, 1),
            "canon.W2": (3 * n_p, width),
            "canon.b2": (3 * n_p, 1),
        }
    )
    return shapes


def init_params(n_p, k_b, k_d, dim_z=32, width=256, rng=None):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, zero rotation head."""
    rng = np.random.default_rng(0) if rng is None else rng
    arrays = {}
    for name, shape in param_shapes(n_p, k_b, k_d, dim_z, width).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf.startswith("b") or name == "rotation.W":
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(n_p, k_b, k_d, dim_z, width, arrays)


def as_nodes(params):
    """Node dict for ``params``; a dict of Nodes passes through unchanged."""
    return params.as_nodes() if isinstance(params, ModelParams) else params


def centering_matrix(n_p):
    """Block-diagonal operator removing the mean of each coordinate row."""
    block = np.eye(n_p) - np.full((n_p, n_p), 1.0 / n_p)
    out = np.zeros((3 * n_p, 3 * n_p))
    for k in range(3):
        out[k * n_p : (k + 1) * n_p, k * n_p : (k + 1) * n_p] = block
    return out


def _affine(p, prefix, x):
    return p[f"{prefix}.W"] @ x + p[f"{prefix}.b"]


def _backbone(p, w_cols):
    h = leaky_relu(_affine(p, "backbone.in", w_cols))
    for blk in range(2):
        pre = f"backbone.block{blk}"
        inner = leaky_relu(p[f"{pre}.W1"] @ h + p[f"{pre}.b1"])
        h = h + leaky_relu(p[f"{pre}.W2"] @ inner + p[f"{pre}.b2"])
    return h


def _check_centered(w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != 2:
        raise DimensionError(f"observation must be 2 x N_p, got {w.shape}")
    if np.max(np.abs(w.mean(axis=1))) >= CENTER_TOL:
        raise UsageError("observation is not centred; run dataio.center_frames first")
    return w


# ---------------------------------------------------------------------------
# per-frame operations


@dataclass(frozen=True)
class NoiseBatch:
    vectors: np.ndarray  # n_m x dim_z
    seed: object = None

    @classmethod
    def draw(cls, n_m, dim_z, rng, seed=None):
        return cls(rng.standard_normal((n_m, dim_z)), seed)

    @property
    def n_m(self):
        return self.vectors.shape[0]


@dataclass
class HypothesisSet:
    """Reconstructions for one frame. Shape fields are 3 x N_p Nodes."""

    basis: Node
    deformations: list
    hypotheses: list
    rotation: Node
    reproj_errors: np.ndarray
    best_index: int

    @property
    def n_m(self):
        return len(self.hypotheses)

    @property
    def worst_index(self):
        return int(np.argmax(self.reproj_errors))

    @property
    def best(self):
        return self.hypotheses[self.best_index].value


def backbone_forward(params, w):
    """Feature column (width x 1) for a centred 2 x N_p observation."""
    w = _check_centered(w)
    return _backbone(as_nodes(params), const(w.reshape(-1, 1)))


def estimate_rotation(params, feature):
    """3x3 rotation Node from the axis-angle head."""
    p = as_nodes(params)
    return reshape(rodrigues(_affine(p, "rotation", feature)), 3, 3)


def estimate_coefficients(params, feature, noise):
    """Basis coefficients (k_b x 1) and one deformation column per noise vector."""
    p = as_nodes(params)
    vectors = noise.vectors if isinstance(noise, NoiseBatch) else np.asarray(noise)
    k_b = p["alpha.W"].shape[0]
    dim_z = p["beta.W"].shape[1] - feature.shape[0] - k_b
    if vectors.ndim != 2 or vectors.shape[1] != dim_z:
        raise UsageError(f"noise must be n_m x {dim_z}, got {vectors.shape}")
    alpha = _affine(p, "alpha", feature)
    ones = const(np.ones((1, vectors.shape[0])))
    beta_in = concat_rows([feature @ ones, alpha @ ones, const(vectors.T)])
    betas = _affine(p, "beta", beta_in)
    return alpha, betas


def synthesize_hypotheses(params, alpha, betas, rotation, cam, w):
    """Combine basis and deformations and rank them by reprojection error."""
    p = as_nodes(params)
    w = np.asarray(w, dtype=np.float64)
    n_p = p["basis.W"].shape[0] // 3
    if w.shape != (2, n_p):
        raise DimensionError(f"observation must be 2 x {n_p}, got {w.shape}")
    center = const(centering_matrix(n_p))
    basis = reshape((center @ p["basis.W"]) @ alpha, 3, n_p)
    deform_cols = transpose((center @ p["deform.W"]) @ betas)
    deformations, hypotheses, errors = [], [], []
    pr = cam.pi @ rotation.value
    for m in range(deform_cols.shape[0]):
        d = reshape(deform_cols[m : m + 1], 3, n_p)
        s = basis + d
        deformations.append(d)
        hypotheses.append(s)
        errors.append(np.linalg.norm(w - pr @ s.value))
    errors = np.array(errors)
    return HypothesisSet(basis, deformations, hypotheses, rotation, errors, int(np.argmin(errors)))


def reconstruct(params, w, cam=None, n_m=1, seed=0):
    """All hypotheses for one frame; deterministic given ``seed``."""
    if n_m < 1:
        raise UsageError("n_m must be at least 1")
    cam = Camera() if cam is None else cam
    p = as_nodes(params)
    feature = backbone_forward(p, w)
    rotation = estimate_rotation(p, feature)
    dim_z = p["beta.W"].shape[1] - feature.shape[0] - p["alpha.W"].shape[0]
    noise = NoiseBatch.draw(n_m, dim_z, np.random.default_rng(seed), seed)
    alpha, betas = estimate_coefficients(p, feature, noise)
    return synthesize_hypotheses(p, alpha, betas, rotation, cam, w)


# ---------------------------------------------------------------------------
# batched forward


@dataclass
class BatchForward:
    """Column-batched graph outputs for ``B`` frames and ``n_m`` draws.

    Hypothesis-indexed matrices have ``B * n_m`` columns ordered draw-major:
    column ``m * B + b`` belongs to frame ``b``, draw ``m``.
    """

    params: dict
    w: np.ndarray  # 2*N_p x B
    feature: Node
    rot9: Node  # 9 x B
    alpha: Node
    betas: Node
    basis: Node  # 3*N_p x B
    deform: Node  # 3*N_p x B*n_m
    n_m: int

    @property
    def batch(self):
        return self.w.shape[1]

    def replicate(self):
        """B x B*n_m matrix copying each frame column to all its draws."""
        return np.tile(np.eye(self.batch), self.n_m)

    def hypothesis_values(self):
        return self.basis.value @ self.replicate() + self.deform.value

    def reproj_errors(self):
        """n_m x B reprojection errors ||w - Pi R S^m||_F."""
        rep = self.replicate()
        proj = layout.rotate_values(self.rot9.value @ rep, self.hypothesis_values(), out_rows=2)
        return np.linalg.norm(self.w @ rep - proj, axis=0).reshape(self.n_m, self.batch)

    def selector(self, indices):
        """B*n_m x B matrix picking draw ``indices[b]`` for frame ``b``."""
        sel = np.zeros((self.batch * self.n_m, self.batch))
        cols = np.arange(self.batch)
        sel[np.asarray(indices) * self.batch + cols, cols] = 1.0
        return sel


def forward(params, w_cols, noise):
    """Batched forward pass.

    ``w_cols`` is ``2*N_p x B`` (see :mod:`hypnrsfm.layout`), ``noise`` is
    ``dim_z x B*n_m`` in draw-major column order.
    """
    p = as_nodes(params)
    w_cols = np.asarray(w_cols, dtype=np.float64)
    batch = w_cols.shape[1]
    if noise.shape[1] % batch:
        raise DimensionError(f"noise columns {noise.shape[1]} not a multiple of batch {batch}")
    n_m = noise.shape[1] // batch
    n_p = w_cols.shape[0] // 2
    feature = _backbone(p, const(w_cols))
    rot9 = rodrigues(_affine(p, "rotation", feature))
    alpha = _affine(p, "alpha", feature)
    rep = const(np.tile(np.eye(batch), n_m))
    betas = _affine(p, "beta", concat_rows([feature @ rep, alpha @ rep, const(noise)]))
    center = const(centering_matrix(n_p))
    basis = (center @ p["basis.W"]) @ alpha
    deform = (center @ p["deform.W"]) @ betas
    return BatchForward(p, w_cols, feature, rot9, alpha, betas, basis, deform, n_m)


def draw_noise(batch, n_m, dim_z, rng, deterministic=False):
    """Per-frame noise batches laid out draw-major (``dim_z x B*n_m``)."""
    if deterministic:
        return np.zeros((dim_z, batch * n_m))
    z = rng.standard_normal((batch, n_m, dim_z))
    return z.transpose(2, 1, 0).reshape(dim_z, n_m * batch)


@dataclass
class Reconstruction:
    """Forward-only outputs for a sequence of frames, as numpy arrays."""

    basis: np.ndarray  # F x 3 x N_p
    deformations: np.ndarray  # F x n_m x 3 x N_p
    rotations: np.ndarray  # F x 3 x 3
    reproj_errors: np.ndarray  # F x n_m

    @property
    def hypotheses(self):
        return self.basis[:, None] + self.deformations

    @property
    def best_index(self):
        return np.argmin(self.reproj_errors, axis=1)

    @property
    def worst_index(self):
        return np.argmax(self.reproj_errors, axis=1)

    def best(self):
        idx = self.best_index
        return self.hypotheses[np.arange(len(idx)), idx]


def reconstruct_batch(params, observations, n_m, seed=0, chunk=256, deterministic=False):
    """Reconstruct many frames at once. Noise comes from one seeded stream."""
    if n_m < 1:
        raise UsageError("n_m must be at least 1")
    p = as_nodes(params)
    dim_z = p["beta.W"].shape[1] - p["backbone.in.W"].shape[0] - p["alpha.W"].shape[0]
    rng = np.random.default_rng(seed)
    obs = [_check_centered(w) for w in observations]
    parts = []
    for start in range(0, len(obs), chunk):
        block = obs[start : start + chunk]
        noise = draw_noise(len(block), n_m, dim_z, rng, deterministic)
        out = forward(p, layout.flatten(block), noise)
        b = out.batch
        deform = layout.unflatten(out.deform.value).reshape(n_m, b, 3, -1).transpose(1, 0, 2, 3)
        parts.append(
            (
                layout.unflatten(out.basis.value),
                deform,
                out.rot9.value.T.reshape(-1, 3, 3),
                out.reproj_errors().T,
            )
        )
    return Reconstruction(*(np.concatenate(items) for items in zip(*parts)))
