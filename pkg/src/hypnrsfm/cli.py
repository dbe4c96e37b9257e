"""Command line: ``gen-synth``, ``train``, ``eval`` and ``reconstruct``.

Config files are flat ``key=value`` text (``#`` starts a comment). Keys are
the :class:`~hypnrsfm.trainer.TrainConfig` fields plus the synthetic data
keys in :data:`SYNTH_KEYS`. Flags override the file.

Exit codes: 0 success, 1 usage or config error, 2 data or numeric error.

Hypotheses file written by ``reconstruct``::

    nrsfm-hypotheses v1 n_p=<int> n_f=<int> n_m=<int>
    frame <index> best=<m>
    rotation
    <9 values, row-major>
    basis
    <3 lines of n_p values>
    hypothesis <m>            (repeated n_m times)
    <3 lines>
    deformation <m>           (repeated n_m times)
    <3 lines>
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from .dataio import SynthConfig, center_frames, format_row, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigError, NRSfMError, ParseError, SchemaError, UsageError
from .metrics import evaluate_reconstruction
from .model import reconstruct_batch
from .trainer import config_from_mapping, fit, load_checkpoint, save_checkpoint

# config-file key -> SynthConfig field
SYNTH_KEYS = {
    "n_f": "n_f",
    "k_b_true": "k_b",
    "k_d_true": "k_d",
    "deformation_scale": "deformation_scale",
    "rotation_walk_step": "rotation_walk_step",
    "synth_seed": "seed",
    "smoothness": "smoothness",
    "basis_spread": "basis_spread",
}
HYP_HEADER = "nrsfm-hypotheses"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


def read_config_file(path):
    mapping = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            mapping[key.strip()] = value.strip()
    return mapping


def build_configs(mapping):
    """Split a flat mapping into ``(TrainConfig, SynthConfig)``.

    ``n_p`` is shared by both. Unknown keys raise ConfigError.
    """
    train_map = {k: v for k, v in mapping.items() if k not in SYNTH_KEYS}
    train = config_from_mapping(train_map)
    types = {f.name: f.type for f in dataclasses.fields(SynthConfig)}
    synth = {"n_p": train.n_p}
    for key, field_name in SYNTH_KEYS.items():
        if key in mapping:
            caster = int if types[field_name] in (int, "int") else float
            try:
                synth[field_name] = caster(mapping[key])
            except ValueError:
                raise ConfigError(f"cannot parse {mapping[key]!r}", key) from None
    return train, SynthConfig(**synth)


def _gather(args, seed_key):
    mapping = read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        mapping[key] = value
    if getattr(args, "epochs", None) is not None:
        mapping["epochs"] = str(args.epochs)
    if getattr(args, "n_m", None) is not None:
        mapping["n_m"] = str(args.n_m)
    if args.seed is not None:
        mapping[seed_key] = str(args.seed)
    return build_configs(mapping)


def _parser():
    parser = _Parser(prog="hypnrsfm", description="multi-hypothesis NRSfM toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="flat key=value config file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key")
        p.add_argument("--seed", type=int)

    g = sub.add_parser("gen-synth", help="write a synthetic dataset")
    common(g)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model on a dataset")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--epochs", type=int)
    t.add_argument("--n-m", type=int, dest="n_m")

    e = sub.add_parser("eval", help="score a checkpoint against ground truth")
    common(e, config=False)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--n-m", type=int, dest="n_m")
    e.add_argument("--out", help="report path (default: stdout)")
    e.add_argument("--table", help="per-point table path")

    r = sub.add_parser("reconstruct", help="export all hypotheses per frame")
    common(r, config=False)
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--n-m", type=int, dest="n_m")
    r.add_argument("--out", required=True)
    return parser


def _load_frames(path, n_p):
    frames = center_frames(load_dataset(path))
    if frames[0].n_p != n_p:
        raise SchemaError(f"dataset has n_p={frames[0].n_p}, model expects {n_p}")
    return frames


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_gen_synth(args):
    _, synth = _gather(args, "synth_seed")
    save_dataset(generate_synthetic(synth), args.out)


def cmd_train(args):
    config, _ = _gather(args, "seed")
    frames = _load_frames(args.data, config.n_p)
    params, history = fit(frames, config, checkpoint_dir=args.out)
    if config.epochs == 0:
        os.makedirs(args.out, exist_ok=True)
        save_checkpoint(os.path.join(args.out, "last"), params, config, 0)
    _write(os.path.join(args.out, "history.txt"), history.to_text())


def _reconstruct(args):
    params, config, _ = load_checkpoint(args.ckpt)
    n_m = config.n_m if args.n_m is None else args.n_m
    seed = 0 if args.seed is None else args.seed
    frames = _load_frames(args.data, config.n_p)
    return frames, reconstruct_batch(params, [f.w for f in frames], n_m, seed)


def cmd_eval(args):
    frames, rec = _reconstruct(args)
    report = evaluate_reconstruction(rec, frames)
    _write(args.out, report.to_text())
    if args.table:
        _write(args.table, report.point_table())


def format_hypotheses(rec):
    n_f, n_m, _, n_p = rec.deformations.shape
    lines = [f"{HYP_HEADER} v1 n_p={n_p} n_f={n_f} n_m={n_m}"]
    hyps = rec.hypotheses
    for i in range(n_f):
        lines.append(f"frame {i} best={rec.best_index[i]}")
        lines.append("rotation")
        lines.append(format_row(rec.rotations[i]))
        lines.append("basis")
        lines.extend(format_row(row) for row in rec.basis[i])
        for m in range(n_m):
            lines.append(f"hypothesis {m}")
            lines.extend(format_row(row) for row in hyps[i, m])
        for m in range(n_m):
            lines.append(f"deformation {m}")
            lines.extend(format_row(row) for row in rec.deformations[i, m])
    return "\n".join(lines) + "\n"


def load_hypotheses(path):
    """Parse a hypotheses file into a list of per-frame dicts."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 5 or head[0] != HYP_HEADER or head[1] != "v1":
        raise ParseError(f"expected '{HYP_HEADER} v1 n_p=.. n_f=.. n_m=..'", 1)
    sizes = {k: int(v) for k, v in (item.split("=") for item in head[2:])}
    n_p, n_f, n_m = sizes["n_p"], sizes["n_f"], sizes["n_m"]
    pos = 1

    def expect(label):
        nonlocal pos
        if pos >= len(lines) or lines[pos] != label:
            raise ParseError(f"expected {label!r}", pos + 1)
        pos += 1

    def matrix(rows, cols):
        nonlocal pos
        block = np.array([[float(t) for t in line.split()] for line in lines[pos : pos + rows]])
        if block.shape != (rows, cols):
            raise SchemaError(f"expected {rows}x{cols} values", pos + 1)
        pos += rows
        return block

    frames = []
    for i in range(n_f):
        parts = lines[pos].split() if pos < len(lines) else []
        if len(parts) != 3 or parts[:2] != ["frame", str(i)] or not parts[2].startswith("best="):
            raise ParseError(f"expected 'frame {i} best=<m>'", pos + 1)
        best = int(parts[2][5:])
        pos += 1
        expect("rotation")
        rotation = matrix(1, 9).reshape(3, 3)
        expect("basis")
        basis = matrix(3, n_p)
        hyps, defs = [], []
        for m in range(n_m):
            expect(f"hypothesis {m}")
            hyps.append(matrix(3, n_p))
        for m in range(n_m):
            expect(f"deformation {m}")
            defs.append(matrix(3, n_p))
        frames.append(
            {"best": best, "rotation": rotation, "basis": basis,
             "hypotheses": np.array(hyps), "deformations": np.array(defs)}
        )
    return frames


def cmd_reconstruct(args):
    _, rec = _reconstruct(args)
    _write(args.out, format_hypotheses(rec))


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
}


def run(argv=None):
    """Execute one subcommand and return its exit code."""
    try:
        args = _parser().parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NRSfMError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())
