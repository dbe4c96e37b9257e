"""Synthetic deforming sequences, centring, and the dataset text format.

Dataset file::

    nrsfm-dataset v1 n_p=<int> n_f=<int> has_gt=<0|1>
    frame <index>
    <n_p values: w row 0>
    <n_p values: w row 1>
    [<n_p values: s_gt row 0, 1, 2 on three lines>]
    [<9 values: r_gt row-major>]

Values are written with 17 significant digits so a load reproduces every
matrix bit for bit.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegeneracyError, ParseError, SchemaError
from .geometry import rodrigues, random_rotation

HEADER = "nrsfm-dataset"
VERSION = "v1"


@dataclass(frozen=True)
class Frame:
    w: np.ndarray
    s_gt: np.ndarray = None
    r_gt: np.ndarray = None

    @property
    def n_p(self):
        return self.w.shape[1]

    @property
    def has_gt(self):
        return self.s_gt is not None and self.r_gt is not None


@dataclass(frozen=True)
class SynthConfig:
    n_f: int = 500
    n_p: int = 15
    k_b: int = 4
    k_d: int = 8
    deformation_scale: float = 0.2
    rotation_walk_step: float = 0.05
    seed: int = 7
    # per-frame coefficient persistence and spread of the basis coefficients
    smoothness: float = 0.0
    basis_spread: float = 0.3

    def __post_init__(self):
        for name in ("n_f", "n_p", "k_b", "k_d"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be a positive integer", name)
        if self.n_p < 3:
            raise ConfigError("need at least 3 points for a full-rank shape", "n_p")
        if not 0.0 <= self.deformation_scale < 1.0:
            raise ConfigError("must lie in [0, 1)", "deformation_scale")
        if not self.rotation_walk_step > 0:
            raise ConfigError("must be positive", "rotation_walk_step")
        if not 0.0 <= self.smoothness < 1.0:
            raise ConfigError("must lie in [0, 1)", "smoothness")
        if self.basis_spread < 0:
            raise ConfigError("must be nonnegative", "basis_spread")


def _smooth_walk(rng, n_f, dim, rho, spread):
    """Stationary Gaussian AR(1) walk, one row per frame."""
    out = np.empty((n_f, dim))
    out[0] = spread * rng.standard_normal(dim)
    kick = spread * np.sqrt(1.0 - rho * rho)
    for i in range(1, n_f):
        out[i] = rho * out[i - 1] + kick * rng.standard_normal(dim)
    return out


def _centered(atoms):
    return atoms - atoms.mean(axis=-1, keepdims=True)


def _full_rank(shape):
    sv = np.linalg.svd(shape, compute_uv=False)
    return sv[-1] > 1e-9 * sv[0]


def _generate_once(cfg, rng):
    basis_atoms = _centered(rng.standard_normal((cfg.k_b, 3, cfg.n_p)))
    deform_atoms = _centered(rng.standard_normal((cfg.k_d, 3, cfg.n_p)))

    alpha = _smooth_walk(rng, cfg.n_f, cfg.k_b, cfg.smoothness, cfg.basis_spread)
    alpha[:, 0] += 1.0  # the first atom acts as a mean shape
    beta = _smooth_walk(rng, cfg.n_f, cfg.k_d, cfg.smoothness, 1.0)

    s_basis = np.einsum("fk,kdp->fdp", alpha, basis_atoms)
    s_deform = np.einsum("fk,kdp->fdp", beta, deform_atoms)
    if cfg.deformation_scale > 0:
        ratio = np.linalg.norm(s_basis, axis=(1, 2)) / np.linalg.norm(s_deform, axis=(1, 2))
        s_deform *= (cfg.deformation_scale * ratio)[:, None, None]
    else:
        s_deform[:] = 0.0
    shapes = _centered(s_basis + s_deform)

    rot = random_rotation(rng)
    frames = []
    for i in range(cfg.n_f):
        if i:
            axis = rng.standard_normal(3)
            rot = rodrigues(cfg.rotation_walk_step * axis / np.linalg.norm(axis)) @ rot
        s = shapes[i]
        if not _full_rank(s):
            return None
        frames.append(Frame(w=(rot @ s)[:2].copy(), s_gt=s.copy(), r_gt=rot.copy()))
    return frames


def generate_synthetic(cfg=None, max_attempts=10):
    """Low-rank basis plus scaled deformation shapes seen by a drifting camera.

    Shapes follow ``sum_k alpha_k B_k + sum_l beta_l D_l``. Coefficients come
    from an AR(1) walk whose persistence is ``smoothness``; the default 0 draws
    them independently per frame, while the camera still drifts. The deformation part is rescaled per frame to
    ``deformation_scale`` times the norm of the basis part. Every ground-truth
    shape has rank 3; if a draw is degenerate the next seed substream is used.
    """
    cfg = SynthConfig() if cfg is None else cfg
    streams = np.random.SeedSequence(cfg.seed).spawn(max_attempts)
    for stream in streams:
        frames = _generate_once(cfg, np.random.default_rng(stream))
        if frames is not None:
            return frames
    raise DegeneracyError(f"no full-rank draw after {max_attempts} attempts")


def center_frames(frames):
    """Subtract per-frame row means from ``w`` and, when present, ``s_gt``."""
    out = []
    for f in frames:
        w = f.w - f.w.mean(axis=1, keepdims=True)
        s = None if f.s_gt is None else f.s_gt - f.s_gt.mean(axis=1, keepdims=True)
        out.append(replace(f, w=w, s_gt=s))
    return out


# ---------------------------------------------------------------------------
# text format


def format_row(values):
    return " ".join(f"{v:.17g}" for v in np.asarray(values, dtype=np.float64).ravel())


def save_dataset(frames, path):
    if not frames:
        raise SchemaError("cannot save an empty dataset")
    n_p = frames[0].n_p
    gt_flags = {f.has_gt for f in frames}
    if len(gt_flags) != 1:
        raise SchemaError("ground truth must be present for all frames or none")
    has_gt = gt_flags.pop()
    lines = [f"{HEADER} {VERSION} n_p={n_p} n_f={len(frames)} has_gt={int(has_gt)}"]
    for i, f in enumerate(frames):
        if f.w.shape != (2, n_p):
            raise SchemaError(f"frame {i}: w has shape {f.w.shape}, expected (2, {n_p})")
        lines.append(f"frame {i}")
        lines.extend(format_row(row) for row in f.w)
        if has_gt:
            lines.extend(format_row(row) for row in f.s_gt)
            lines.append(format_row(f.r_gt))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(line):
    parts = line.split()
    if len(parts) != 5 or parts[0] != HEADER or parts[1] != VERSION:
        raise ParseError(f"expected '{HEADER} {VERSION} n_p=.. n_f=.. has_gt=..'", 1)
    fields = {}
    for item in parts[2:]:
        key, _, value = item.partition("=")
        try:
            fields[key] = int(value)
        except ValueError:
            raise ParseError(f"bad header field {item!r}", 1) from None
    if set(fields) != {"n_p", "n_f", "has_gt"} or fields["has_gt"] not in (0, 1):
        raise ParseError("header needs n_p, n_f and has_gt=0|1", 1)
    return fields["n_p"], fields["n_f"], bool(fields["has_gt"])


def load_dataset(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    n_p, n_f, has_gt = _parse_header(lines[0])
    pos = 1

    def take_values(frame, expected):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"frame {frame}: unexpected end of file", pos + 1)
        try:
            values = [float(tok) for tok in lines[pos].split()]
        except ValueError:
            raise ParseError(f"frame {frame}: non-numeric value", pos + 1) from None
        if len(values) != expected:
            raise SchemaError(
                f"frame {frame}: expected {expected} values, found {len(values)}", pos + 1
            )
        pos += 1
        return values

    frames = []
    for i in range(n_f):
        if pos >= len(lines) or lines[pos].split() != ["frame", str(i)]:
            raise ParseError(f"expected 'frame {i}'", pos + 1)
        pos += 1
        w = np.array([take_values(i, n_p) for _ in range(2)])
        s_gt = r_gt = None
        if has_gt:
            s_gt = np.array([take_values(i, n_p) for _ in range(3)])
            r_gt = np.array(take_values(i, 9)).reshape(3, 3)
        frames.append(Frame(w, s_gt, r_gt))
    if any(line.strip() for line in lines[pos:]):
        raise ParseError("trailing content after last frame", pos + 1)
    return frames
