"""Mini-batch Adam training, history bookkeeping and text checkpoints.

Checkpoint file::

    nrsfm-checkpoint v1
    epoch=<int>
    seed=<int>
    config.<field>=<value>      (one line per TrainConfig field)
    param <name> <rows> <cols>
    <cols values>                (one line per matrix row)
    ...
    end

Values carry 17 significant digits, so a reloaded model reproduces forward
outputs bit for bit.
"""

import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import layout
from .dataio import format_row
from .diffcore import backward
from .errors import ConfigError, NumericError, ParseError, SchemaError
from .losses import LossWeights, SelectionStrategy, total_loss
from .metrics import variation_from_deformations
from .model import ModelParams, draw_noise, forward, init_params, reconstruct_batch

log = logging.getLogger(__name__)

CHECKPOINT_HEADER = "nrsfm-checkpoint v1"


@dataclass(frozen=True)
class TrainConfig:
    n_p: int = 15
    k_b: int = 4
    k_d: int = 8
    n_m: int = 10
    dim_z: int = 32
    feature_width: int = 256
    lambda_b: float = 0.8
    lambda_f: float = 0.2
    lambda_res: float = 0.1
    lambda_cano: float = 0.1
    epsilon: float = 0.15
    strategy: str = "best"
    learning_rate: float = 5e-3
    final_lr_scale: float = 0.05  # cosine decay to this fraction by the last epoch
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    deterministic_deformation: bool = False
    cached_noise: bool = False

    def __post_init__(self):
        for name in ("n_p", "k_b", "k_d", "n_m", "dim_z", "feature_width", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be a positive integer", name)
        if self.epochs < 0:
            raise ConfigError("must be nonnegative", "epochs")
        if not self.k_b < self.k_d:
            raise ConfigError("k_b must be smaller than k_d", "k_b")
        try:
            SelectionStrategy(self.strategy)
        except ValueError:
            raise ConfigError(f"unknown strategy {self.strategy!r}", "strategy") from None
        if self.learning_rate < 0:
            raise ConfigError("must be nonnegative", "learning_rate")
        if not 0.0 < self.final_lr_scale <= 1.0:
            raise ConfigError("must lie in (0, 1]", "final_lr_scale")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError("must lie in [0, 1)", name)
        if not self.eps_opt > 0:
            raise ConfigError("must be positive", "eps_opt")
        if self.lambda_res > 0 and self.batch_size < 2:
            raise ConfigError("must be at least 2 when lambda_res > 0", "batch_size")
        self.weights  # validates the loss weights

    @property
    def weights(self):
        return LossWeights(
            self.lambda_b, self.lambda_f, self.lambda_res, self.epsilon, self.lambda_cano
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class Moments:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, array):
        return cls(np.zeros_like(array), np.zeros_like(array), 0)


def adam_update(param, grad, moments, config):
    """One bias-corrected Adam step. Returns ``(new_param, new_moments)``."""
    if param.shape != grad.shape:
        raise ConfigError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to adam_update")
    t = moments.t + 1
    m = config.beta1 * moments.m + (1 - config.beta1) * grad
    v = config.beta2 * moments.v + (1 - config.beta2) * grad * grad
    m_hat = m / (1 - config.beta1**t)
    v_hat = v / (1 - config.beta2**t)
    step = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps_opt)
    return param - step, Moments(m, v, t)


# ---------------------------------------------------------------------------
# training


def _check_batch(batch, config):
    for i, f in enumerate(batch):
        if f.w.shape != (2, config.n_p):
            raise ConfigError(f"frame {i} has shape {f.w.shape}, config expects n_p={config.n_p}")


def train_step(params, batch, config, rng, moments=None, noise=None):
    """Forward, loss, backward and Adam update on one mini-batch.

    Returns ``(new_params, new_moments, losses)``; ``losses`` holds the float
    value of every component plus the names of parameters whose gradient
    was nonzero.
    """
    _check_batch(batch, config)
    if moments is None:
        moments = {name: Moments.zeros_like(a) for name, a in params.arrays.items()}
    if noise is None:
        noise = draw_noise(
            len(batch), config.n_m, config.dim_z, rng, config.deterministic_deformation
        )
    nodes = params.as_nodes(requires_grad=True)
    try:
        out = forward(nodes, layout.flatten([f.w for f in batch]), noise)
        loss, parts = total_loss(out, config.weights, config.strategy, rng)
    except NumericError as exc:
        raise NumericError(f"forward pass failed: {exc}") from exc
    for key in ("data", "cano", "res"):
        if not np.isfinite(parts[key]):
            raise NumericError(f"loss component {key!r} is not finite")
    grads = backward(loss)
    new_arrays, new_moments, touched = {}, {}, []
    for name, node in nodes.items():
        g = grads.get(node)
        if g is None:
            g = np.zeros_like(node.value)
        elif np.any(g != 0):
            touched.append(name)
        new_arrays[name], new_moments[name] = adam_update(params.arrays[name], g, moments[name], config)
    losses = {
        "total": float(loss.value[0, 0]),
        "data": float(parts["data"]),
        "cano": float(parts["cano"]),
        "res": float(parts["res"]),
        "pass_rate": float(parts["pass_rate"]),
        "touched": touched,
    }
    return params.replace(new_arrays), new_moments, losses


@dataclass
class EpochRecord:
    epoch: int
    data: float
    cano: float
    res: float
    pass_rate: float
    deformation_variation: float
    wall_time: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    touched: list = field(default_factory=list)  # per epoch: parameter names with gradient

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_text(self):
        names = [f.name for f in dataclasses.fields(EpochRecord)]
        lines = [" ".join(names)]
        for r in self.records:
            lines.append(" ".join(f"{getattr(r, n):.17g}" if n != "epoch" else str(r.epoch) for n in names))
        return "\n".join(lines) + "\n"


def epoch_learning_rate(config, epoch):
    """Cosine schedule from ``learning_rate`` at epoch 1 to ``final_lr_scale`` times it."""
    if config.epochs <= 1 or config.final_lr_scale == 1.0:
        return config.learning_rate
    frac = (epoch - 1) / (config.epochs - 1)
    scale = config.final_lr_scale + (1 - config.final_lr_scale) * 0.5 * (1 + np.cos(np.pi * frac))
    return config.learning_rate * scale


def _epoch_batches(n, config, rng):
    order = rng.permutation(n)
    batches = [order[i : i + config.batch_size] for i in range(0, n, config.batch_size)]
    min_size = 2 if config.lambda_res > 0 else 1
    return [b for b in batches if len(b) >= min_size]


def _variation(params, frames, config):
    if config.n_m < 2 or config.deterministic_deformation:
        return 0.0
    rec = reconstruct_batch(params, [f.w for f in frames], config.n_m, seed=config.seed)
    return float(variation_from_deformations(rec.deformations).mean())


def fit(frames, config, checkpoint_dir=None, progress=None):
    """Train from scratch on ``frames``; returns ``(params, history)``.

    With ``checkpoint_dir`` the file ``last`` in it is rewritten atomically
    after every epoch. ``progress`` is called with each EpochRecord.
    """
    if not frames:
        raise ConfigError("dataset is empty")
    _check_batch(frames, config)
    init_ss, shuffle_ss, step_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(
        config.n_p, config.k_b, config.k_d, config.dim_z, config.feature_width,
        np.random.default_rng(init_ss),
    )
    shuffle_rng = np.random.default_rng(shuffle_ss)
    step_rng = np.random.default_rng(step_ss)
    history = TrainHistory()
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    cached = None
    if config.cached_noise:
        cached = draw_noise(len(frames), config.n_m, config.dim_z, step_rng,
                            config.deterministic_deformation)
    moments = None
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        sums = {"data": 0.0, "cano": 0.0, "res": 0.0, "pass_rate": 0.0}
        touched = set()
        batches = _epoch_batches(len(frames), config, shuffle_rng)
        step_config = config.replace(learning_rate=epoch_learning_rate(config, epoch))
        for idx in batches:
            noise = None
            if cached is not None:
                cols = (np.arange(config.n_m)[:, None] * len(frames) + idx[None]).ravel()
                noise = cached[:, cols]
            params, moments, losses = train_step(
                params, [frames[i] for i in idx], step_config, step_rng, moments, noise
            )
            for key in sums:
                sums[key] += losses[key]
            touched.update(losses["touched"])
        n = max(len(batches), 1)
        record = EpochRecord(
            epoch,
            sums["data"] / n,
            sums["cano"] / n,
            sums["res"] / n,
            sums["pass_rate"] / n,
            _variation(params, frames, config),
            time.perf_counter() - start,
        )
        history.records.append(record)
        history.touched.append(sorted(touched))
        log.info("epoch %d data=%.4f cano=%.4f res=%.4f", epoch, record.data, record.cano, record.res)
        if progress is not None:
            progress(record)
        if checkpoint_dir is not None:
            save_checkpoint(os.path.join(checkpoint_dir, "last"), params, config, epoch)
    return params, history


# ---------------------------------------------------------------------------
# checkpoints


def _format_value(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def save_checkpoint(path, params, config, epoch):
    lines = [CHECKPOINT_HEADER, f"epoch={epoch}", f"seed={config.seed}"]
    for f in dataclasses.fields(config):
        lines.append(f"config.{f.name}={_format_value(getattr(config, f.name))}")
    for name, array in params.arrays.items():
        rows, cols = array.shape
        lines.append(f"param {name} {rows} {cols}")
        lines.extend(format_row(row) for row in array)
    lines.append("end")
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _coerce(field_type, raw, name):
    try:
        if field_type in (bool, "bool"):
            if raw not in ("0", "1", "true", "false", "True", "False"):
                raise ValueError(raw)
            return raw in ("1", "true", "True")
        if field_type in (int, "int"):
            return int(raw)
        if field_type in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r}", name) from None


def config_from_mapping(mapping, base=None):
    """Build a TrainConfig from string values; unknown keys are rejected."""
    base = TrainConfig() if base is None else base
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    changes = {}
    for key, raw in mapping.items():
        if key not in types:
            raise ConfigError("unknown key", key)
        changes[key] = _coerce(types[key], raw, key)
    return dataclasses.replace(base, **changes)


def load_checkpoint(path):
    """Returns ``(params, config, epoch)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ParseError(f"expected '{CHECKPOINT_HEADER}'", 1)
    pos, epoch, raw_config = 1, None, {}
    while pos < len(lines) and not lines[pos].startswith("param ") and lines[pos] != "end":
        key, sep, value = lines[pos].partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {lines[pos]!r}", pos + 1)
        if key == "epoch":
            epoch = int(value)
        elif key.startswith("config."):
            raw_config[key[len("config."):]] = value
        elif key != "seed":
            raise ParseError(f"unknown key {key!r}", pos + 1)
        pos += 1
    config = config_from_mapping(raw_config)
    arrays = {}
    while pos < len(lines) and lines[pos] != "end":
        parts = lines[pos].split()
        if len(parts) != 4 or parts[0] != "param":
            raise ParseError(f"expected 'param <name> <rows> <cols>', got {lines[pos]!r}", pos + 1)
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        block = lines[pos + 1 : pos + 1 + rows]
        if len(block) != rows:
            raise ParseError(f"{name}: truncated matrix", pos + 1)
        try:
            array = np.array([[float(tok) for tok in row.split()] for row in block])
        except ValueError:
            raise ParseError(f"{name}: non-numeric value", pos + 1) from None
        if array.shape != (rows, cols):
            raise SchemaError(f"{name}: expected {rows}x{cols} values", pos + 1)
        arrays[name] = array
        pos += 1 + rows
    if pos >= len(lines):
        raise ParseError("missing 'end' marker", pos + 1)
    params = ModelParams(config.n_p, config.k_b, config.k_d, config.dim_z, config.feature_width, arrays)
    return params, config, epoch
