"""Multistage converter from dense toy networks to lookup networks.

The pipeline replaces each dense layer with a lookup layer whose codebooks
are k-means-fit on that layer's calibration activations, then trains in two
stages: centroids only (everything else frozen), then centroids and weights
jointly. Everything runs in float64 with plain constant-rate SGD so runs are
bit-reproducible and gradients are checkable by finite differences.

Gradient rules for a lookup layer (forward output A_hat @ W + b, where A_hat
is the centroid reconstruction of the input A):

  * task gradients treat the quantizer as the identity: the upstream
    activation gradient is passed straight through, and W/b accumulate
    against the values the forward pass actually used (A_hat),
  * centroids receive gradients only through the reconstruction penalty
        L_re = ||sg(A_hat W) - A W||^2 + ||A_hat W - sg(A W)||^2
    (value 2*||A_hat W - A W||^2; sg = stop-gradient). Its first half drives
    the input path, its second half the centroids, and both halves touch W.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidInputError, TrainingDiverged
from .vq import Codebook, VQConfig, encode, fit_codebook
from . import container as _container


class Stage(str, Enum):
    CENTROID_ONLY = "centroid_only"
    JOINT = "joint"


@dataclass
class TrainConfig:
    stage: Stage
    lr: float = 0.1
    iterations: int = 100
    lam_re: float = 0.05
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidInputError("learning rate must be positive")
        if self.lam_re < 0:
            raise InvalidInputError("reconstruction penalty must be >= 0")
        if self.iterations < 1 or self.batch_size < 1:
            raise InvalidInputError("iterations and batch size must be >= 1")
        self.stage = Stage(self.stage)


@dataclass
class StageReport:
    task_loss: list = field(default_factory=list)
    re_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    wall_time: float = 0.0


@dataclass
class TrainData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray


def reconstruction_loss(a: np.ndarray, a_hat: np.ndarray, w: np.ndarray) -> float:
    """Stop-gradient-symmetrized squared error between A_hat W and A W."""
    d = a_hat @ w - a @ w
    return 2.0 * float((d * d).sum())


class Dense:
    trainable = True

    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self._x = None
        self.gw = None
        self.gb = None

    def forward(self, x):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy, lam_re=0.0):
        self.gw = self._x.T @ dy
        self.gb = dy.sum(axis=0)
        return dy @ self.w.T, 0.0

    def params(self, stage: Stage):
        if stage == Stage.CENTROID_ONLY:
            return []
        return [(self.w, lambda: self.gw), (self.b, lambda: self.gb)]


class Relu:
    trainable = False

    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy, lam_re=0.0):
        return dy * self._mask, 0.0

    def params(self, stage: Stage):
        return []


class LUTLinear:
    """Lookup layer: quantize the input per subspace, multiply by W.

    Keeps both the codebook (trainable) and the dense weights (trainable) so
    lookup tables can be rebuilt at any time; inputs are re-encoded on every
    forward pass.
    """

    trainable = True

    def __init__(self, codebook: Codebook, w: np.ndarray, b: np.ndarray, cfg: VQConfig):
        self.codebook = codebook
        self.w = np.asarray(w, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.cfg = cfg
        self._x = None
        self._x_hat = None
        self._idx = None
        self.gw = None
        self.gb = None
        self.gz = None
        self.last_re_loss = 0.0

    def forward(self, x):
        self._x = x
        self._idx = encode(x, self.codebook, self.cfg.metric, self.cfg.dist_precision)
        self._x_hat = self.codebook.reconstruct(self._idx)
        return self._x_hat @ self.w + self.b

    def backward(self, dy, lam_re=0.0):
        x, x_hat, idx = self._x, self._x_hat, self._idx
        self.gw = x_hat.T @ dy
        self.gb = dy.sum(axis=0)
        dx = dy @ self.w.T  # straight through the quantizer
        self.gz = np.zeros_like(self.codebook.centroids)
        d = x_hat @ self.w - x @ self.w
        # batch-mean so the penalty weight is batch-size invariant, matching
        # the averaged task loss
        scale = 1.0 / x.shape[0]
        self.last_re_loss = 2.0 * float((d * d).sum()) * scale
        if lam_re > 0.0:
            self.gw += lam_re * scale * 2.0 * (x_hat - x).T @ d
            dx += lam_re * scale * (-2.0) * (d @ self.w.T)
            d_hat = lam_re * scale * 2.0 * (d @ self.w.T)
            v, n_c = self.codebook.v, self.codebook.n_c
            pad = np.zeros((x.shape[0], n_c * v), dtype=np.float64)
            pad[:, : x.shape[1]] = d_hat
            for k in range(n_c):
                np.add.at(self.gz[k], idx[:, k], pad[:, k * v : (k + 1) * v])
        return dx, self.last_re_loss

    def params(self, stage: Stage):
        out = [(self.codebook.centroids, lambda: self.gz)]
        if stage == Stage.JOINT:
            out += [(self.w, lambda: self.gw), (self.b, lambda: self.gb)]
        return out


class TinyNet:
    """Ordered layer stack with a cross-entropy or mean-squared-error head."""

    def __init__(self, layers, head: str = "softmax_ce"):
        if head not in ("softmax_ce", "mse"):
            raise InvalidInputError(f"unknown loss head {head!r}")
        self.layers = list(layers)
        self.head = head

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def head_loss(self, out, y):
        if self.head == "softmax_ce":
            shifted = out - out.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            n = out.shape[0]
            loss = -logp[np.arange(n), y].mean()
            grad = np.exp(logp)
            grad[np.arange(n), y] -= 1.0
            return loss, grad / n
        diff = out - y
        return float((diff * diff).mean()), 2.0 * diff / diff.size

    def loss_and_grads(self, x, y, lam_re=0.0):
        """Forward, head loss, and a full backward sweep.

        Returns (task_loss, total_re_loss); parameter gradients are left on
        the layers. Aborts with diagnostics when the loss is not finite.
        """
        out = self.forward(x)
        task_loss, dy = self.head_loss(out, y)
        if not np.isfinite(task_loss):
            raise TrainingDiverged(f"non-finite task loss: {task_loss}")
        re_total = 0.0
        for layer in reversed(self.layers):
            dy, re_loss = layer.backward(dy, lam_re)
            re_total += re_loss
        return task_loss, re_total

    def predict(self, x):
        out = self.forward(x)
        return out.argmax(axis=1) if self.head == "softmax_ce" else out

    def accuracy(self, x, y) -> float:
        if self.head != "softmax_ce":
            raise InvalidInputError("accuracy needs a classification head")
        return float((self.predict(x) == y).mean())

    def clone(self) -> "TinyNet":
        return copy.deepcopy(self)

    def num_params(self) -> int:
        total = 0
        for layer in self.layers:
            if isinstance(layer, Dense):
                total += layer.w.size + layer.b.size
            elif isinstance(layer, LUTLinear):
                total += layer.w.size + layer.b.size + layer.codebook.centroids.size
        return total


def build_mlp(dims, seed: int = 0, head: str = "softmax_ce") -> TinyNet:
    """Small dense MLP with ReLU between layers; He-scaled random init."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = rng.normal(scale=np.sqrt(2.0 / d_in), size=(d_in, d_out))
        layers.append(Dense(w, np.zeros(d_out)))
        if i < len(dims) - 2:
            layers.append(Relu())
    return TinyNet(layers, head)


def substitute(
    net: TinyNet,
    cfg: VQConfig,
    calibration_x: np.ndarray,
    seed: int = 0,
    codebook_init: str = "kmeans",
) -> TinyNet:
    """Replace every dense layer with a lookup layer (stage one).

    Codebooks are fit on the activations each dense layer actually sees for
    the calibration batch ("kmeans"), or drawn at random with matched scale
    ("random", the from-scratch baseline). Weights are copied unchanged.
    """
    calibration_x = np.asarray(calibration_x, dtype=np.float64)
    if calibration_x.ndim != 2 or calibration_x.shape[0] < 1:
        raise InvalidInputError("calibration batch must be a non-empty 2-D matrix")
    if codebook_init not in ("kmeans", "random"):
        raise InvalidInputError(f"unknown codebook init {codebook_init!r}")
    new_net = net.clone()
    x = calibration_x
    rng = np.random.default_rng(seed)
    for li, layer in enumerate(new_net.layers):
        if isinstance(layer, Dense):
            if layer.w.shape[0] < 1:
                raise InvalidInputError(f"layer {li} has no input features")
            if codebook_init == "kmeans":
                codebook = fit_codebook(x, cfg, seed=seed + 1000 * li)
            else:
                n_c = cfg.num_subspaces(layer.w.shape[0])
                scale = max(float(x.std()), 1e-3)
                codebook = Codebook(
                    rng.normal(scale=scale, size=(n_c, cfg.c, cfg.v)),
                    input_dim=layer.w.shape[0],
                )
            new_net.layers[li] = LUTLinear(codebook, layer.w, layer.b, cfg)
        x = new_net.layers[li].forward(x)
    return new_net


def backward_ste(net: TinyNet, x: np.ndarray, targets: np.ndarray, lam_re: float = 0.0):
    """Forward plus straight-through backward sweep over the network.

    Returns (task_loss, reconstruction_loss, grads) where grads holds one
    dict per layer ("w"/"b" for dense-like layers, plus "centroids" for
    lookup layers). Task gradients bypass the quantizer; centroid gradients
    come only from the reconstruction penalty, so they are exactly zero at
    lam_re = 0. A non-finite loss aborts with diagnostics.
    """
    task_loss, re_loss = net.loss_and_grads(x, targets, lam_re)
    grads = []
    for layer in net.layers:
        if isinstance(layer, LUTLinear):
            grads.append({"w": layer.gw, "b": layer.gb, "centroids": layer.gz})
        elif isinstance(layer, Dense):
            grads.append({"w": layer.gw, "b": layer.gb})
        else:
            grads.append({})
    return task_loss, re_loss, grads


def train_stage(net: TinyNet, data: TrainData, cfg: TrainConfig) -> StageReport:
    """One SGD stage over the network (mutates it in place).

    CentroidOnly updates codebooks only; Joint updates codebooks, weights and
    biases. The total objective is task loss + lam_re * sum of per-layer
    reconstruction losses. Aborts via TrainingDiverged (carrying the partial
    report) if the loss exceeds 1e6 or turns non-finite.
    """
    report = StageReport()
    rng = np.random.default_rng(cfg.seed)
    n = data.x_train.shape[0]
    started = time.perf_counter()
    for _ in range(cfg.iterations):
        take = min(cfg.batch_size, n)
        batch = rng.choice(n, size=take, replace=False)
        try:
            task_loss, re_loss = net.loss_and_grads(
                data.x_train[batch], data.y_train[batch], cfg.lam_re
            )
        except TrainingDiverged as exc:
            exc.report = report
            raise
        total = task_loss + cfg.lam_re * re_loss
        if not np.isfinite(total) or total > 1e6:
            report.wall_time = time.perf_counter() - started
            raise TrainingDiverged(f"loss diverged to {total}", report=report)
        for layer in net.layers:
            for param, grad in layer.params(cfg.stage):
                param -= cfg.lr * grad()
        report.task_loss.append(float(task_loss))
        report.re_loss.append(float(re_loss))
        report.val_acc.append(net.accuracy(data.x_val, data.y_val))
    report.wall_time = time.perf_counter() - started
    return report


def quick_accuracy_probe(
    net: TinyNet,
    data: TrainData,
    budget: int,
    lr: float = 0.1,
    lam_re: float = 0.05,
    seed: int = 0,
) -> float:
    """Centroid-only training for `budget` iterations; returns val accuracy.

    Cheap stand-in for full conversion used by the co-design search to rank
    (v, c, metric) candidates. The probed network is left untouched.
    """
    if budget < 1:
        raise InvalidInputError("probe budget must be >= 1")
    clone = net.clone()
    cfg = TrainConfig(Stage.CENTROID_ONLY, lr=lr, iterations=budget, lam_re=lam_re, seed=seed)
    report = train_stage(clone, data, cfg)
    return report.val_acc[-1]


def save_checkpoint(path: str, net: TinyNet) -> None:
    meta_layers = []
    arrays = {}
    for i, layer in enumerate(net.layers):
        if isinstance(layer, LUTLinear):
            meta_layers.append(
                {
                    "type": "lutlinear",
                    "input_dim": layer.codebook.input_dim,
                    "v": layer.cfg.v,
                    "c": layer.cfg.c,
                    "metric": layer.cfg.metric.value,
                    "dist_precision": layer.cfg.dist_precision.value,
                    "lut_precision": layer.cfg.lut_precision.value,
                }
            )
            arrays[f"w{i}"] = layer.w
            arrays[f"b{i}"] = layer.b
            arrays[f"z{i}"] = layer.codebook.centroids
        elif isinstance(layer, Dense):
            meta_layers.append({"type": "dense"})
            arrays[f"w{i}"] = layer.w
            arrays[f"b{i}"] = layer.b
        elif isinstance(layer, Relu):
            meta_layers.append({"type": "relu"})
        else:
            raise InvalidInputError(f"cannot serialize layer {type(layer).__name__}")
    _container.save_container(
        path, "checkpoint", {"head": net.head, "layers": meta_layers}, arrays
    )


def load_checkpoint(path: str) -> TinyNet:
    kind, meta, arrays = _container.load_container(path)
    if kind != "checkpoint":
        raise InvalidInputError(f"{path}: not a checkpoint container")
    layers = []
    for i, spec in enumerate(meta["layers"]):
        if spec["type"] == "dense":
            layers.append(Dense(arrays[f"w{i}"], arrays[f"b{i}"]))
        elif spec["type"] == "relu":
            layers.append(Relu())
        elif spec["type"] == "lutlinear":
            cfg = VQConfig(
                v=spec["v"],
                c=spec["c"],
                metric=spec["metric"],
                dist_precision=spec["dist_precision"],
                lut_precision=spec["lut_precision"],
            )
            codebook = Codebook(arrays[f"z{i}"], input_dim=spec["input_dim"])
            layers.append(LUTLinear(codebook, arrays[f"w{i}"], arrays[f"b{i}"], cfg))
        else:
            raise InvalidInputError(f"unknown layer type {spec['type']!r}")
    return TinyNet(layers, meta["head"])
