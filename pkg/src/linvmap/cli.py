"""Command-line front end.

Subcommands: ``synth``, ``train``, ``match``, ``eval`` and ``corrupt``.  Settings
come from built-in defaults, then an optional ``key = value`` config file, then
command-line flags (flags win).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io, pipeline
from .errors import ContractError, LinvmapError
from .geometry import CORRUPTION_MODES, corrupt
from .network import load_checkpoint
from .plotting import plot_curves, plot_losses

log = logging.getLogger("linvmap")

EXIT_IO = 3


@dataclass
class CliConfig:
    # training (mirrors TrainConfig)
    k: int = 20
    p: int = 40
    n_points: int = 1000
    steps_stage1: int = 2000
    steps_stage2: int = 2000
    lr: float = 1e-3
    lr_stage2: float | None = None
    temperature: float = 1.0
    seed: int = 0
    template: str = "stick_figure"
    scale_min: float = 0.8
    scale_max: float = 1.2
    bend: float = 0.6
    rotation: float = 0.3
    through_adjoint: bool = False
    # paths
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    binary_checkpoints: bool = False
    # matching and corruption
    method: str = "invariant"
    k_basis: int | None = None  # None: one basis vector per probe
    n_pairs: int = 10
    noise_sigma: float | None = None
    outlier_frac: float | None = None
    fragment_frac: float | None = None

    def train_config(self) -> pipeline.TrainConfig:
        return pipeline.TrainConfig(
            k=self.k, p=self.p, n_points=self.n_points,
            steps_stage1=self.steps_stage1, steps_stage2=self.steps_stage2,
            lr=self.lr, lr_stage2=self.lr_stage2, temperature=self.temperature, seed=self.seed,
            template=self.template, scale_range=(self.scale_min, self.scale_max),
            bend=self.bend, rotation=self.rotation, through_adjoint=self.through_adjoint,
        )

    def checkpoint_path(self, role: str) -> Path:
        return Path(self.checkpoint_dir) / f"{role}.{'npz' if self.binary_checkpoints else 'json'}"


_FIELDS = {f.name: f for f in dataclasses.fields(CliConfig)}


def _convert(key: str, raw: str):
    kind = _FIELDS[key].type
    text = raw.strip()
    if "None" in kind and text.lower() in ("", "none"):
        return None
    try:
        if kind.startswith("bool"):
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return low in ("1", "true", "yes")
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ContractError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return text


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    ``steps`` is shorthand for both ``steps_stage1`` and ``steps_stage2``.
    """
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "steps":
            out["steps_stage1"] = out["steps_stage2"] = _convert("steps_stage1", value)
        elif key in _FIELDS:
            out[key] = _convert(key, value)
        else:
            raise ContractError(f"{path}:{lineno}: unknown config key {key!r}")
    return out


def resolve_config(args: argparse.Namespace) -> CliConfig:
    """Defaults, then the config file, then any flag that was given."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    flags = {
        "seed": args.seed, "k": args.k, "p": args.p, "temperature": args.temperature,
        "method": args.method, "noise_sigma": args.noise_sigma,
        "outlier_frac": args.outlier_frac, "fragment_frac": args.fragment_frac,
        "n_points": args.points, "template": args.template, "n_pairs": args.n_pairs,
        "data_dir": args.data_dir, "checkpoint_dir": args.checkpoint_dir, "report_dir": args.report_dir,
    }
    if args.steps is not None:
        flags["steps_stage1"] = flags["steps_stage2"] = args.steps
    if args.binary_checkpoints:
        flags["binary_checkpoints"] = True
    values.update({k: v for k, v in flags.items() if v is not None})
    return CliConfig(**values)


# -- commands --------------------------------------------------------------

def cmd_synth(cfg: CliConfig, args) -> int:
    tc = cfg.train_config()
    out = Path(cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(cfg.n_pairs):
        x, y, corr = pipeline.make_pair(tc, pipeline.TEST_STREAM, i)
        sample_seed, seed_a, seed_b = pipeline._stream_seeds(tc.seed, pipeline.TEST_STREAM, i)
        stem = f"pair{i:04d}"
        io.write_xyz(out / f"{stem}_x.xyz", x)
        io.write_xyz(out / f"{stem}_y.xyz", y)
        io.write_indices(out / f"{stem}_corr.txt", corr)
        rows.append((stem, f"{stem}_x.xyz", f"{stem}_y.xyz", f"{stem}_corr.txt", tc.template,
                     sample_seed, seed_a, seed_b))
    io.write_csv(out / "manifest.csv",
                 ["id", "x", "y", "corr", "template", "template_seed", "deform_seed_a", "deform_seed_b"], rows)
    print(f"wrote {cfg.n_pairs} pairs to {out}")
    return 0


def cmd_train(cfg: CliConfig, args) -> int:
    tc = cfg.train_config()
    ckpt_dir, rep = Path(cfg.checkpoint_dir), Path(cfg.report_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    rep.mkdir(parents=True, exist_ok=True)
    curves = {}
    if cfg.method == "universal":
        res = pipeline.train_universal(tc, rep / "loss_universal.csv", cfg.checkpoint_path("universal"))
        curves["universal"] = res.losses
    elif cfg.method == "invariant":
        args._stage = "train:stage1"
        s1 = pipeline.train_stage1(tc, rep / "loss_stage1.csv", cfg.checkpoint_path("basis"))
        curves["stage1"] = s1.losses
        # the stage-1 checkpoint is already on disk if stage 2 fails
        args._stage = "train:stage2"
        s2 = pipeline.train_stage2(tc, s1.net, rep / "loss_stage2.csv", cfg.checkpoint_path("probe"))
        curves["stage2"] = s2.losses
    else:
        raise ContractError(f"train supports --method invariant or universal, not {cfg.method!r}")
    plot_losses(curves, rep / "losses.png")
    for label, losses in curves.items():
        finite = [v for v in losses if np.isfinite(v)]
        last = f"{finite[-1]:.6g}" if finite else "n/a"
        print(f"{label}: {len(losses)} steps, last loss {last}")
    return 0


def _load(cfg: CliConfig, role: str):
    path = cfg.checkpoint_path(role)
    if not path.exists():
        raise FileNotFoundError(f"missing {role} checkpoint, expected at {path}")
    net, _ = load_checkpoint(path)
    return net


def cmd_match(cfg: CliConfig, args) -> int:
    x, y = io.read_cloud(args.x), io.read_cloud(args.y)
    if cfg.method == "invariant":
        res = pipeline.match(_load(cfg, "basis"), _load(cfg, "probe"), x, y)
    elif cfg.method == "universal":
        res = pipeline.match_universal(_load(cfg, "universal"), x, y)
    elif cfg.method == "laplacian":
        res = pipeline.match_laplacian(x, y, k_basis=cfg.k_basis)
    else:
        raise ContractError(f"unknown method {cfg.method!r}")
    rep = Path(cfg.report_dir)
    rep.mkdir(parents=True, exist_ok=True)
    corr_out = Path(args.out) if args.out else rep / "correspondence.txt"
    transform_out = Path(args.transform_out) if args.transform_out else rep / "transform.txt"
    io.write_indices(corr_out, res.corr)
    io.write_matrix(transform_out, res.adjoint)
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{cfg.method}: {res.corr.size} matches -> {corr_out}")
    return 0


def cmd_eval(cfg: CliConfig, args) -> int:
    if not (len(args.pred) == len(args.gt) == len(args.target)):
        raise ContractError(
            f"need matching counts of --pred/--gt/--target, got {len(args.pred)}/{len(args.gt)}/{len(args.target)}"
        )
    preds = []
    for i, (pp, gp, tp) in enumerate(zip(args.pred, args.gt, args.target)):
        target = io.read_cloud(tp)
        pred, gt = io.read_indices(pp), io.read_indices(gp)
        if pred.size != gt.size:
            raise ContractError(f"{pp}: {pred.size} predictions but {gp} has {gt.size} entries")
        preds.append(pipeline.PairPrediction(id=f"pair{i:04d}", pred=pred, gt=gt, target=pipeline._prepared(target)))
    reports = pipeline.evaluate({args.label: preds})
    rep = Path(cfg.report_dir)
    pipeline.write_reports(reports, rep, timing=False)
    plot_curves(reports, rep / "curves.png")
    for label, r in reports.items():
        print(f"{label}: mean error {r.mean_error:.6f} over {len(r.pair_means)} pairs")
    return 0


def cmd_corrupt(cfg: CliConfig, args) -> int:
    given = {
        "noise": cfg.noise_sigma, "outliers": cfg.outlier_frac, "fragments": cfg.fragment_frac,
    }
    chosen = [(m, v) for m, v in given.items() if v is not None]
    if len(chosen) != 1:
        raise ContractError("give exactly one of --noise-sigma, --outlier-frac, --fragment-frac")
    mode, magnitude = chosen[0]
    assert mode in CORRUPTION_MODES
    cloud = io.read_cloud(args.input)
    out, kept = corrupt(cloud, mode, magnitude, seed=cfg.seed)
    out_path = Path(args.out) if args.out else Path(args.input).with_name(Path(args.input).stem + f"_{mode}.xyz")
    io.write_cloud(out_path, out)
    msg = f"{mode} {magnitude}: {out.n} points -> {out_path}"
    if mode == "fragments":
        kept_path = out_path.with_name(out_path.stem + "_kept.txt")
        io.write_indices(kept_path, kept)
        msg += f", kept indices -> {kept_path}"
    print(msg)
    return 0


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "match": cmd_match, "eval": cmd_eval, "corrupt": cmd_corrupt,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--method", choices=("invariant", "universal", "laplacian"))
    common.add_argument("--k", type=int, help="embedding width")
    common.add_argument("--p", type=int, help="number of probe functions")
    common.add_argument("--steps", type=int, help="training steps per stage")
    common.add_argument("--temperature", type=float)
    common.add_argument("--points", type=int, help="points per synthetic cloud")
    common.add_argument("--template", choices=("stick_figure", "bumpy_sphere"))
    common.add_argument("--n-pairs", type=int, help="pairs written by synth")
    common.add_argument("--noise-sigma", type=float)
    common.add_argument("--outlier-frac", type=float)
    common.add_argument("--fragment-frac", type=float)
    common.add_argument("--data-dir")
    common.add_argument("--checkpoint-dir")
    common.add_argument("--report-dir")
    common.add_argument("--binary-checkpoints", action="store_true", help="write .npz checkpoints")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="linvmap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write synthetic pairs with ground truth")
    sub.add_parser("train", parents=[common], help="train the embedding and probe networks")
    m = sub.add_parser("match", parents=[common], help="match two clouds")
    m.add_argument("x")
    m.add_argument("y")
    m.add_argument("--out", help="correspondence file (one index per line)")
    m.add_argument("--transform-out", help="estimated k x k transform file")
    e = sub.add_parser("eval", parents=[common], help="score predicted correspondences")
    e.add_argument("--pred", nargs="+", required=True)
    e.add_argument("--gt", nargs="+", required=True)
    e.add_argument("--target", nargs="+", required=True, help="target clouds errors are measured on")
    e.add_argument("--label", default="method")
    c = sub.add_parser("corrupt", parents=[common], help="add noise, outliers or cut fragments")
    c.add_argument("input")
    c.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    args._stage = args.command
    try:
        cfg = resolve_config(args)
        t0 = time.perf_counter()
        code = COMMANDS[args.command](cfg, args)
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
        return code
    except LinvmapError as exc:
        print(f"error [{args._stage}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [{args._stage}]: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
