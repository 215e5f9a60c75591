"""A small shared-weight point network with hand-written backpropagation.

The network maps an ``n x 3`` cloud to ``n x out_width`` per-point features:
a per-point MLP encoder, a max-pooled global feature concatenated back onto
every point, and a per-point MLP head.  Hidden layers use leaky-ReLU; the
output layer is linear.

The two training objectives are differentiated end to end here:

* stage 1 (embedding): network -> closed-form aligning transform -> soft map
  -> embedding loss;
* stage 2 (probes): probe network -> probe coefficients -> estimated adjoint
  -> descriptor loss against the adjoint of the frozen embedding.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError
from .fmaps import check_correspondence, gt_adjoint
from .geometry import PointCloud
from .linalg import lstsq, lstsq_vjp, require_full_column_rank
from .softmap import (
    descriptor_loss,
    descriptor_loss_vjp,
    embedding_loss,
    embedding_loss_vjp,
    soft_correspondence,
    soft_correspondence_vjp,
)

CHECKPOINT_VERSION = 1


def _points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64)


class PointNetLite:
    """Reduced PointNet segmentation network (no T-nets, no batch-norm)."""

    def __init__(
        self,
        out_width: int,
        encoder: tuple[int, ...] = (64, 128),
        head: tuple[int, ...] = (128, 64),
        slope: float = 0.01,
        in_width: int = 3,
        seed: int = 0,
        params: list[np.ndarray] | None = None,
    ):
        if out_width < 1 or not encoder:
            raise ContractError("network needs out_width >= 1 and at least one encoder layer")
        self.in_width = int(in_width)
        self.encoder = tuple(int(w) for w in encoder)
        self.head = tuple(int(w) for w in head)
        self.out_width = int(out_width)
        self.slope = float(slope)
        shapes = self.layer_shapes()
        if params is None:
            rng = np.random.default_rng(seed)
            params = []
            for fan_in, fan_out in shapes:
                limit = np.sqrt(6.0 / fan_in)
                params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
                params.append(np.zeros(fan_out))
        self.params = [np.asarray(p, dtype=np.float64) for p in params]
        expected = [s for fi, fo in shapes for s in ((fi, fo), (fo,))]
        if [p.shape for p in self.params] != expected:
            raise ContractError("parameter shapes do not match the architecture")

    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = (self.in_width,) + self.encoder
        shapes = list(zip(widths[:-1], widths[1:]))
        head = (2 * self.encoder[-1],) + self.head + (self.out_width,)
        return shapes + list(zip(head[:-1], head[1:]))

    @property
    def n_encoder(self) -> int:
        return len(self.encoder)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    def arch(self) -> dict:
        return {
            "in_width": self.in_width,
            "encoder": list(self.encoder),
            "head": list(self.head),
            "out_width": self.out_width,
            "slope": self.slope,
        }

    def copy(self, params: list[np.ndarray] | None = None) -> "PointNetLite":
        return PointNetLite(
            self.out_width, self.encoder, self.head, self.slope, self.in_width,
            params=[p.copy() for p in (self.params if params is None else params)],
        )

    @classmethod
    def zeros_like(cls, net: "PointNetLite") -> "PointNetLite":
        return net.copy([np.zeros_like(p) for p in net.params])

    # -- forward / backward -------------------------------------------------

    def _act(self, z):
        return np.where(z > 0, z, self.slope * z)

    def forward_cache(self, cloud):
        h = _points(cloud)
        if h.ndim != 2 or h.shape[1] != self.in_width:
            raise ContractError(f"network expects n x {self.in_width} input, got {h.shape}")
        acts = [h]
        pre = []
        ws = self.params[0::2]
        bs = self.params[1::2]
        for w, b in zip(ws[: self.n_encoder], bs[: self.n_encoder]):
            z = acts[-1] @ w + b
            pre.append(z)
            acts.append(self._act(z))
        local = acts[-1]
        arg = np.argmax(local, axis=0)
        glob = local[arg, np.arange(local.shape[1])]
        h = np.hstack([local, np.broadcast_to(glob, local.shape)])
        acts.append(h)
        head_ws = ws[self.n_encoder:]
        head_bs = bs[self.n_encoder:]
        for i, (w, b) in enumerate(zip(head_ws, head_bs)):
            z = acts[-1] @ w + b
            pre.append(z)
            acts.append(self._act(z) if i < len(head_ws) - 1 else z)
        return acts[-1], (acts, pre, arg)

    def forward(self, cloud) -> np.ndarray:
        return self.forward_cache(cloud)[0]

    def backward(self, cache, grad_out) -> list[np.ndarray]:
        acts, pre, arg = cache
        ws = self.params[0::2]
        n_layers = len(ws)
        grads: list[np.ndarray | None] = [None] * (2 * n_layers)
        g = np.asarray(grad_out, dtype=np.float64)
        # head: layers n_encoder .. n_layers-1 read acts[layer + 1]
        for layer in range(n_layers - 1, self.n_encoder - 1, -1):
            if layer < n_layers - 1:
                g = g * np.where(pre[layer] > 0, 1.0, self.slope)
            inp = acts[layer + 1]
            grads[2 * layer] = inp.T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ ws[layer].T
        c = self.encoder[-1]
        g_local = g[:, :c].copy()
        np.add.at(g_local, (arg, np.arange(c)), g[:, c:].sum(axis=0))
        g = g_local
        for layer in range(self.n_encoder - 1, -1, -1):
            g = g * np.where(pre[layer] > 0, 1.0, self.slope)
            grads[2 * layer] = acts[layer].T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            if layer > 0:
                g = g @ ws[layer].T
        return grads


def _add(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    return [x + y for x, y in zip(a, b)]


# -- stage 1 ---------------------------------------------------------------

def aligning_transform(phi_x, phi_y, corr) -> np.ndarray:
    """``A^T = lstsq(phi_x, Pi phi_y)``: the right factor with ``phi_x A^T ~ Pi phi_y``."""
    return gt_adjoint(phi_x, phi_y, corr).T


def stage1_loss(net, x, y, corr, temperature: float = 1.0, transform_t=None, universal: bool = False) -> float:
    """Forward-only stage-1 loss.

    ``transform_t`` pins ``A^T`` to a given matrix (the stop-gradient view of
    the closed-form transform); ``universal`` pins it to the identity.
    """
    px = _points(x)
    phi_x = net.forward(px)
    phi_y = net.forward(y)
    if universal:
        aligned = phi_x
    else:
        t = aligning_transform(phi_x, phi_y, corr) if transform_t is None else transform_t
        aligned = phi_x @ t
    return embedding_loss(soft_correspondence(aligned, phi_y, temperature), corr, px)


def backward_stage1(
    net: PointNetLite,
    x,
    y,
    corr,
    temperature: float = 1.0,
    through_adjoint: bool = False,
    universal: bool = False,
):
    """Stage-1 loss and parameter gradients for one pair.

    The loss compares ``S @ P_x`` with ``Pi @ P_x``; the training pairs have
    matching point counts.  By default the closed-form transform is treated
    as a constant for the step; ``through_adjoint`` also differentiates the
    least-squares solve that produces it.  ``universal`` fixes the transform
    to the identity.

    Returns ``(loss, grads)`` with ``grads`` parallel to ``net.params``.
    """
    px = _points(x)
    py = _points(y)
    phi_x, cache_x = net.forward_cache(px)
    phi_y, cache_y = net.forward_cache(py)
    corr = check_correspondence(corr, phi_x.shape[0], phi_y.shape[0])
    if universal:
        t = np.eye(phi_x.shape[1])
    else:
        require_full_column_rank(phi_x, "source embedding")
        target = phi_y[corr]
        t = lstsq(phi_x, target)
    aligned = phi_x @ t
    soft = soft_correspondence(aligned, phi_y, temperature)
    loss = embedding_loss(soft, corr, px)
    g_soft = embedding_loss_vjp(soft, corr, px)
    g_aligned, g_phi_y = soft_correspondence_vjp(aligned, phi_y, soft, g_soft)
    g_phi_x = g_aligned @ t.T
    if through_adjoint and not universal:
        g_t = phi_x.T @ g_aligned
        ga, gb = lstsq_vjp(phi_x, target, t, g_t)
        g_phi_x = g_phi_x + ga
        np.add.at(g_phi_y, corr, gb)
    grads = _add(net.backward(cache_x, g_phi_x), net.backward(cache_y, g_phi_y))
    return loss, grads


# -- stage 2 ---------------------------------------------------------------

def probe_adjoint(phi_x, phi_y, g_x, g_y) -> np.ndarray:
    """Adjoint from probes via three full-rank least-squares solves."""
    coef_x = lstsq(phi_x, g_x)
    coef_y = lstsq(phi_y, g_y)
    require_full_column_rank(coef_y.T, "probe coefficient system")
    return lstsq(coef_y.T, coef_x.T)


def descriptor_objective(phi_x, phi_y, g_x, g_y, a_gt):
    """Descriptor loss for given probes and its gradients w.r.t. the probes.

    Returns ``(loss, grad_g_x, grad_g_y)``.  The embeddings are constants.
    """
    require_full_column_rank(phi_x, "source embedding")
    require_full_column_rank(phi_y, "target embedding")
    coef_x = lstsq(phi_x, g_x)
    coef_y = lstsq(phi_y, g_y)
    design = coef_y.T
    rhs = coef_x.T
    require_full_column_rank(design, "probe coefficient system")
    a_hat = lstsq(design, rhs)
    loss = descriptor_loss(a_gt, a_hat)
    g_a = descriptor_loss_vjp(a_gt, a_hat)
    g_design, g_rhs = lstsq_vjp(design, rhs, a_hat, g_a)
    _, g_gx = lstsq_vjp(phi_x, g_x, coef_x, g_rhs.T)
    _, g_gy = lstsq_vjp(phi_y, g_y, coef_y, g_design.T)
    return loss, g_gx, g_gy


def stage2_loss(probe_net, basis_net, x, y, corr) -> float:
    px, py = _points(x), _points(y)
    phi_x, phi_y = basis_net.forward(px), basis_net.forward(py)
    a_gt = gt_adjoint(phi_x, phi_y, corr)
    return descriptor_loss(a_gt, probe_adjoint(phi_x, phi_y, probe_net.forward(px), probe_net.forward(py)))


def backward_stage2(probe_net: PointNetLite, basis_net: PointNetLite, x, y, corr):
    """Stage-2 loss and gradients for the probe network only.

    ``basis_net`` is only evaluated; its parameters are never modified.
    """
    px, py = _points(x), _points(y)
    phi_x, phi_y = basis_net.forward(px), basis_net.forward(py)
    a_gt = gt_adjoint(phi_x, phi_y, corr)
    g_x, cache_x = probe_net.forward_cache(px)
    g_y, cache_y = probe_net.forward_cache(py)
    loss, grad_gx, grad_gy = descriptor_objective(phi_x, phi_y, g_x, g_y, a_gt)
    grads = _add(probe_net.backward(cache_x, grad_gx), probe_net.backward(cache_y, grad_gy))
    return loss, grads


# -- optimizer -------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """One bias-corrected Adam update; returns ``(new_params, state)``."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ContractError("gradient shapes do not match parameters")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out, state


# -- checkpoints -----------------------------------------------------------

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, net: PointNetLite, role: str, config: dict | None = None) -> None:
    """Write an ASCII (JSON) checkpoint; a ``.npz`` suffix selects binary."""
    path = Path(path)
    meta = {
        "format": "linvmap-checkpoint",
        "version": CHECKPOINT_VERSION,
        "role": role,
        "arch": net.arch(),
        "config_hash": config_hash(config or {}),
        "config": config or {},
    }
    if path.suffix == ".npz":
        arrays = {f"p{i:03d}": p for i, p in enumerate(net.params)}
        with path.open("wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True, default=str)), **arrays)
        return
    meta["params"] = [p.tolist() for p in net.params]
    path.write_text(json.dumps(meta, sort_keys=True, default=str) + "\n")


def load_checkpoint(path) -> tuple[PointNetLite, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    if path.suffix == ".npz":
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            names = sorted(k for k in data.files if k.startswith("p"))
            params = [data[k].astype(np.float64) for k in names]
    else:
        meta = json.loads(path.read_text())
        params = [np.asarray(p, dtype=np.float64) for p in meta.pop("params")]
    if meta.get("format") != "linvmap-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: not a version-{CHECKPOINT_VERSION} linvmap checkpoint")
    arch = meta["arch"]
    net = PointNetLite(
        arch["out_width"], tuple(arch["encoder"]), tuple(arch["head"]), arch["slope"],
        arch["in_width"], params=params,
    )
    return net, meta
