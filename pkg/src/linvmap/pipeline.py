"""Training loops, the test-phase matcher, baselines and evaluation reports."""
from __future__ import annotations

import dataclasses
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ContractError, RankWarning, SingularEmbeddingError, TrainingError
from .fmaps import estimate_adjoint, extract_map, graph_laplacian_basis, smallest_singular_value
from .geometry import (
    DeformationRanges,
    PointCloud,
    corrupt,
    cumulative_curve,
    deform,
    is_normalized,
    make_template,
    normalize,
    point_errors,
    sample_deformation,
    synth_pair,
)
from .network import AdamState, PointNetLite, adam_step, backward_stage1, backward_stage2, save_checkpoint

log = logging.getLogger(__name__)

MAX_CONSECUTIVE_FAILURES = 10

# stream tags keep training and held-out pairs disjoint
STAGE1_STREAM = 1
STAGE2_STREAM = 2
TEST_STREAM = 7


@dataclass(frozen=True)
class TrainConfig:
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
    scale_range: tuple[float, float] = (0.8, 1.2)
    bend: float = 0.6
    rotation: float = 0.3
    through_adjoint: bool = False
    fixed_pair: bool = False
    encoder: tuple[int, ...] = (64, 128)
    head: tuple[int, ...] = (128, 64)

    def __post_init__(self):
        if self.k < 1 or self.p < 1:
            raise ContractError(f"k and p must be >= 1, got k={self.k}, p={self.p}")
        if self.steps_stage1 < 0 or self.steps_stage2 < 0:
            raise ContractError("step counts must be >= 0")
        if self.n_points < 4:
            raise ContractError("clouds need at least 4 points")
        if self.lr <= 0 or self.temperature <= 0 or (self.lr_stage2 is not None and self.lr_stage2 <= 0):
            raise ContractError("lr and temperature must be positive")
        self.ranges  # validates the deformation ranges

    @property
    def ranges(self) -> DeformationRanges:
        return DeformationRanges(tuple(self.scale_range), self.bend, self.rotation)

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale preset: k=6, p=12, 256-point pairs, 500 steps per stage."""
        base = dict(k=6, p=12, n_points=256, steps_stage1=500, steps_stage2=500)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- data ------------------------------------------------------------------

def _stream_seeds(seed: int, stream: int, index: int, count: int = 3) -> list[int]:
    ss = np.random.SeedSequence([seed, stream, index])
    return [int(v) for v in ss.generate_state(count)]


def make_pair(config: TrainConfig, stream: int, index: int):
    """Deterministic pair ``(x, y, corr)`` number ``index`` of a stream.

    Both clouds are deformations of a freshly sampled template; the second is
    produced from the first by :func:`synth_pair`.
    """
    sample_seed, seed_a, seed_b = _stream_seeds(config.seed, stream, index)
    template = make_template(config.template, config.n_points, sample_seed)
    ranges = config.ranges
    base = normalize(template).points
    base = deform(base, sample_deformation(ranges, seed_a))
    src = PointCloud(base, id=f"{config.template}:{stream}:{index}")
    return synth_pair(src, sample_deformation(ranges, seed_b))


def test_pairs(config: TrainConfig, count: int):
    return [make_pair(config, TEST_STREAM, i) for i in range(count)]


# -- training --------------------------------------------------------------

@dataclass
class TrainResult:
    net: PointNetLite
    losses: list[float]
    skipped: int = 0

    def final_loss(self, window: float = 0.1) -> float:
        """Mean logged loss over the last ``window`` fraction of steps."""
        vals = np.asarray([v for v in self.losses if np.isfinite(v)])
        if vals.size == 0:
            return float("nan")
        tail = max(1, int(round(window * vals.size)))
        return float(vals[-tail:].mean())


def _train(config, net, stream, step_fn, steps, log_path=None, lr=None) -> TrainResult:
    state = AdamState(lr=config.lr if lr is None else lr)
    losses: list[float] = []
    failures = 0
    skipped = 0
    for step in range(steps):
        x, y, corr = make_pair(config, stream, 0 if config.fixed_pair else step)
        try:
            loss, grads = step_fn(net, x, y, corr)
        except SingularEmbeddingError as exc:
            failures += 1
            skipped += 1
            losses.append(float("nan"))
            log.warning("step %d skipped: %s", step, exc)
            if failures > MAX_CONSECUTIVE_FAILURES:
                raise TrainingError(
                    f"aborted at step {step}: {failures} consecutive rank failures ({exc})"
                ) from exc
            continue
        failures = 0
        net.params, state = adam_step(net.params, grads, state)
        losses.append(loss)
    if log_path is not None:
        io.write_csv(log_path, ["step", "loss"], [(i, float(v)) for i, v in enumerate(losses)])
    return TrainResult(net, losses, skipped)


def init_basis_net(config: TrainConfig) -> PointNetLite:
    return PointNetLite(config.k, config.encoder, config.head, seed=_stream_seeds(config.seed, 11, 0, 1)[0])


def init_probe_net(config: TrainConfig) -> PointNetLite:
    return PointNetLite(config.p, config.encoder, config.head, seed=_stream_seeds(config.seed, 12, 0, 1)[0])


def train_stage1(config: TrainConfig, log_path=None, checkpoint_path=None, universal: bool = False) -> TrainResult:
    """Train the embedding network (or the universal baseline with ``universal``)."""
    net = init_basis_net(config)

    def step_fn(net, x, y, corr):
        return backward_stage1(net, x, y, corr, config.temperature, config.through_adjoint, universal)

    result = _train(config, net, STAGE1_STREAM, step_fn, config.steps_stage1, log_path)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, result.net, "universal" if universal else "basis", config.as_dict())
    return result


def train_universal(config: TrainConfig, log_path=None, checkpoint_path=None) -> TrainResult:
    return train_stage1(config, log_path, checkpoint_path, universal=True)


def train_stage2(config: TrainConfig, basis: PointNetLite, log_path=None, checkpoint_path=None) -> TrainResult:
    """Train the probe network against a frozen embedding network."""
    if basis.out_width != config.k:
        raise ContractError(f"basis network width {basis.out_width} != k={config.k}")
    net = init_probe_net(config)

    def step_fn(net, x, y, corr):
        return backward_stage2(net, basis, x, y, corr)

    result = _train(config, net, STAGE2_STREAM, step_fn, config.steps_stage2, log_path, config.lr_stage2)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, result.net, "probe", config.as_dict())
    return result


# -- matching --------------------------------------------------------------

@dataclass
class MatchResult:
    corr: np.ndarray
    adjoint: np.ndarray
    trace: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    min_singular: dict = field(default_factory=dict)


def _prepared(cloud: PointCloud) -> PointCloud:
    return cloud if is_normalized(cloud) else normalize(cloud)


def match(basis: PointNetLite, probe: PointNetLite, x: PointCloud, y: PointCloud) -> MatchResult:
    """Four-step test phase: embed, probe, solve for the adjoint, nearest neighbors."""
    x, y = _prepared(x), _prepared(y)
    trace = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankWarning)
        phi_x, phi_y = basis.forward(x), basis.forward(y)
        trace.append("1:embed")
        g_x, g_y = probe.forward(x), probe.forward(y)
        trace.append("2:probe")
        a = estimate_adjoint(phi_x, phi_y, g_x, g_y)
        trace.append("3:adjoint")
        corr = extract_map(phi_x, a, phi_y)
        trace.append("4:extract")
    diag = {"phi_x": smallest_singular_value(phi_x), "phi_y": smallest_singular_value(phi_y)}
    return MatchResult(corr, a, trace, [str(w.message) for w in caught], diag)


def match_universal(basis: PointNetLite, x: PointCloud, y: PointCloud) -> MatchResult:
    """Nearest neighbors directly in the embedding (identity transform)."""
    x, y = _prepared(x), _prepared(y)
    phi_x, phi_y = basis.forward(x), basis.forward(y)
    a = np.eye(phi_x.shape[1])
    return MatchResult(extract_map(phi_x, a, phi_y), a, ["1:embed", "4:extract"])


def coordinate_probes(cloud: PointCloud) -> np.ndarray:
    """Coordinates, their squares and pairwise products (9 probe functions)."""
    p = cloud.points
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return np.column_stack([x, y, z, x * x, y * y, z * z, x * y, y * z, x * z])


def match_laplacian(x: PointCloud, y: PointCloud, g_x=None, g_y=None, k_basis: int | None = None,
                    k_neighbors: int = 8) -> MatchResult:
    """Graph-Laplacian eigenbasis + probe-estimated adjoint + nearest neighbors.

    ``k_basis`` defaults to the probe count: with fewer probes than basis
    vectors the adjoint is underdetermined and only its minimum-norm part is
    recovered.
    """
    x, y = _prepared(x), _prepared(y)
    g_x = coordinate_probes(x) if g_x is None else np.asarray(g_x, dtype=np.float64)
    g_y = coordinate_probes(y) if g_y is None else np.asarray(g_y, dtype=np.float64)
    if k_basis is None:
        k_basis = min(g_x.shape[1], x.n, y.n)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        phi_x, _ = graph_laplacian_basis(x, k_neighbors, k_basis)
        phi_y, _ = graph_laplacian_basis(y, k_neighbors, k_basis)
        a = estimate_adjoint(phi_x, phi_y, g_x, g_y)
        corr = extract_map(phi_x, a, phi_y)
    return MatchResult(corr, a, ["1:basis", "2:probe", "3:adjoint", "4:extract"], [str(w.message) for w in caught])


# -- evaluation ------------------------------------------------------------

@dataclass
class PairPrediction:
    id: str
    pred: np.ndarray
    gt: np.ndarray
    target: PointCloud
    seconds: float = 0.0
    warnings: int = 0


@dataclass
class MatchReport:
    label: str
    pair_means: dict[str, float]
    curve: np.ndarray
    seconds: float
    rank_warnings: int

    @property
    def mean_error(self) -> float:
        return float(np.mean(list(self.pair_means.values()))) if self.pair_means else 0.0


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("LINVMAP_THREADS", "1")))
    except ValueError:
        return 1


def evaluate(method_outputs: dict[str, list[PairPrediction]]) -> dict[str, MatchReport]:
    """Per-method error reports; pair errors are reduced in sorted-id order."""
    reports = {}
    for label, preds in method_outputs.items():
        preds = sorted(preds, key=lambda p: p.id)
        with ThreadPoolExecutor(max_workers=min(eval_threads(), max(1, len(preds)))) as pool:
            errs = list(pool.map(lambda p: point_errors(p.pred, p.gt, p.target), preds))
        pooled = np.concatenate(errs) if errs else np.zeros(0)
        reports[label] = MatchReport(
            label=label,
            pair_means={p.id: float(e.mean()) if e.size else 0.0 for p, e in zip(preds, errs)},
            curve=cumulative_curve(pooled),
            seconds=float(sum(p.seconds for p in preds)),
            rank_warnings=int(sum(p.warnings for p in preds)),
        )
    return reports


def write_reports(reports: dict[str, MatchReport], out_dir, prefix: str = "", timing: bool = True) -> list[Path]:
    """Write the curve and summary CSVs; returns the written paths.

    ``timing=False`` writes 0 in the seconds column so that repeated runs are
    byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = list(reports)
    curve_path = out / f"{prefix}curves.csv"
    summary_path = out / f"{prefix}summary.csv"
    if labels:
        thresholds = reports[labels[0]].curve[:, 0]
        rows = [[float(t)] + [float(reports[l].curve[i, 1]) for l in labels] for i, t in enumerate(thresholds)]
    else:
        rows = []
    io.write_csv(curve_path, ["threshold"] + [f"fraction_{l}" for l in labels], rows)
    io.write_csv(
        summary_path,
        ["method", "mean_error", "seconds"],
        [(l, reports[l].mean_error, reports[l].seconds if timing else 0.0) for l in labels],
    )
    return [curve_path, summary_path]


def read_summary(path) -> dict[str, float]:
    header, rows = io.read_csv(path)
    return {r[0]: float(r[1]) for r in rows}


# -- toy benchmark ---------------------------------------------------------

def predict_pairs(method: str, pairs, basis=None, probe=None, corruption=None, seed: int = 0,
                  k_basis: int | None = None) -> list[PairPrediction]:
    """Run a matcher over ``(x, y, corr)`` pairs, optionally corrupting both clouds.

    Corrupted clouds stay in the clean normalized frame for error measurement
    and only surviving original points of ``x`` are scored.
    """
    out = []
    for i, (x, y, corr) in enumerate(pairs):
        if corruption is None:
            xi, yi = x, y
            src_rows, gt = np.arange(x.n), np.asarray(corr)
        else:
            mode, mag = corruption
            xi, kept_x = corrupt(x, mode, mag, seed=_stream_seeds(seed, 21, i, 1)[0])
            yi, kept_y = corrupt(y, mode, mag, seed=_stream_seeds(seed, 22, i, 1)[0])
            # row r of a corrupted cloud holds original point kept[r]
            row_in_y = -np.ones(y.n, dtype=np.int64)
            row_in_y[kept_y] = np.arange(kept_y.size)
            gt_rows = row_in_y[np.asarray(corr)[kept_x]]
            valid = gt_rows >= 0
            src_rows, gt = np.arange(kept_x.size)[valid], gt_rows[valid]
        t0 = time.perf_counter()
        if method == "invariant":
            res = match(basis, probe, xi, yi)
        elif method == "universal":
            res = match_universal(basis, xi, yi)
        elif method == "laplacian":
            res = match_laplacian(xi, yi, k_basis=k_basis)
        else:
            raise ContractError(f"unknown method {method!r}")
        out.append(PairPrediction(
            id=f"pair{i:04d}", pred=res.corr[src_rows], gt=gt, target=yi,
            seconds=time.perf_counter() - t0, warnings=len(res.warnings),
        ))
    return out


@dataclass
class BenchmarkResult:
    invariant_final_loss: float
    universal_final_loss: float
    stage2_final_loss: float
    reports: dict[str, MatchReport]


def toy_benchmark(config: TrainConfig, n_test: int = 20, corruption=None, out_dir=None) -> BenchmarkResult:
    """Train invariant (two stages) and universal pipelines on the same budget and
    compare them on held-out pairs."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    s1 = train_stage1(config, log_path=out / "loss_stage1.csv" if out else None)
    s2 = train_stage2(config, s1.net, log_path=out / "loss_stage2.csv" if out else None)
    uni = train_universal(config, log_path=out / "loss_universal.csv" if out else None)
    pairs = test_pairs(config, n_test)
    outputs = {
        "invariant": predict_pairs("invariant", pairs, s1.net, s2.net, seed=config.seed),
        "universal": predict_pairs("universal", pairs, uni.net, seed=config.seed),
    }
    if corruption is not None:
        outputs["invariant_corrupted"] = predict_pairs("invariant", pairs, s1.net, s2.net, corruption, config.seed)
        outputs["universal_corrupted"] = predict_pairs("universal", pairs, uni.net, corruption=corruption, seed=config.seed)
    reports = evaluate(outputs)
    if out is not None:
        from .plotting import plot_curves, plot_losses

        write_reports(reports, out, timing=False)
        plot_curves(reports, out / "curves.png")
        plot_losses({"invariant": s1.losses, "universal": uni.losses, "probes": s2.losses}, out / "losses.png")
    return BenchmarkResult(s1.final_loss(), uni.final_loss(), s2.final_loss(), reports)
