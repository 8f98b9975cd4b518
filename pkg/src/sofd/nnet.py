"""Chebyshev GCN classifier with hand-written gradients and an Adam optimizer.

Each sample is an ``m x 1`` graph signal. The network is a stack of
Chebyshev convolutions (ReLU), a flatten of the node features, then fully
connected layers (ReLU on hidden layers, raw logits last) and a softmax.
Everything runs in float64.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sofd-gcn/1"
PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 64
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.eps <= 0:
            raise ValueError(f"invalid training config: {self}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class ForwardTrace:
    """Intermediate values of one forward pass, kept for backprop and feature fusion."""

    cheb_terms: list[np.ndarray] = field(default_factory=list)  # (b, order, m, c_in) per conv
    conv_pre: list[np.ndarray] = field(default_factory=list)  # (b, m, c_out)
    fc_inputs: list[np.ndarray] = field(default_factory=list)
    fc_pre: list[np.ndarray] = field(default_factory=list)
    fc_outputs: list[np.ndarray] = field(default_factory=list)  # hidden: post-ReLU, last: logits
    probs: np.ndarray | None = None

    @property
    def logits(self) -> np.ndarray:
        return self.fc_outputs[-1]

    @property
    def batch_size(self) -> int:
        return self.probs.shape[0]


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def ce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy with probabilities clamped to ``[1e-12, 1]``."""
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError(f"labels must lie in 0..{probs.shape[1] - 1}")
    p = np.clip(probs[np.arange(len(labels)), labels], PROB_FLOOR, 1.0)
    return float(-np.mean(np.log(p)))


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class GcnModel:
    """Chebyshev-convolution classifier.

    Parameters
    ----------
    basis : array (order, m, m)
        Chebyshev polynomials of the rescaled Laplacian, ``T_0 .. T_{order-1}``.
    conv_widths : channel widths of the convolution stack (input width is 1).
    fc_widths : widths of the fully connected layers; the last is the class count.
    """

    def __init__(self, basis: np.ndarray, conv_widths: Sequence[int] = (32, 32, 32),
                 fc_widths: Sequence[int] = (64, 16, 3), seed: int = 0):
        self.basis = np.asarray(basis, dtype=float)
        if self.basis.ndim != 3 or self.basis.shape[1] != self.basis.shape[2]:
            raise ValueError("basis must have shape (order, m, m)")
        if not conv_widths or not fc_widths:
            raise ValueError("need at least one conv and one fc layer")
        self.conv_widths = tuple(int(c) for c in conv_widths)
        self.fc_widths = tuple(int(c) for c in fc_widths)
        self.seed = seed
        self.params: dict[str, np.ndarray] = {}
        self._init_params(np.random.default_rng(seed))

    @property
    def order(self) -> int:
        return self.basis.shape[0]

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.fc_widths[-1]

    def _init_params(self, rng):
        c_in = 1
        for j, c_out in enumerate(self.conv_widths):
            self.params[f"conv{j}.theta"] = _glorot(rng, (self.order, c_in, c_out), self.order * c_in, c_out)
            self.params[f"conv{j}.bias"] = np.zeros(c_out)
            c_in = c_out
        n_in = self.m * c_in
        for j, n_out in enumerate(self.fc_widths):
            self.params[f"fc{j}.weight"] = _glorot(rng, (n_in, n_out), n_in, n_out)
            self.params[f"fc{j}.bias"] = np.zeros(n_out)
            n_in = n_out

    def with_outputs(self, n_outputs: int, seed: int | None = None) -> "GcnModel":
        """Fresh model with the same architecture and a different output width."""
        return GcnModel(self.basis, self.conv_widths, self.fc_widths[:-1] + (n_outputs,),
                        self.seed if seed is None else seed)

    def forward(self, x: np.ndarray) -> ForwardTrace:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.m:
            raise ValueError(f"sample dimension {x.shape[1]} does not match graph size {self.m}")
        b = x.shape[0]
        tr = ForwardTrace()
        h = x[:, :, None]
        for j in range(len(self.conv_widths)):
            theta = self.params[f"conv{j}.theta"]
            terms = np.matmul(self.basis[None], h[:, None])  # (b, k, m, c_in)
            flat = terms.transpose(0, 2, 1, 3).reshape(b * self.m, -1)
            pre = (flat @ theta.reshape(-1, theta.shape[2])).reshape(b, self.m, -1)
            pre += self.params[f"conv{j}.bias"]
            tr.cheb_terms.append(terms)
            tr.conv_pre.append(pre)
            h = relu(pre)
        a = h.reshape(b, -1)
        last = len(self.fc_widths) - 1
        for j in range(len(self.fc_widths)):
            tr.fc_inputs.append(a)
            pre = a @ self.params[f"fc{j}.weight"] + self.params[f"fc{j}.bias"]
            tr.fc_pre.append(pre)
            a = pre if j == last else relu(pre)
            tr.fc_outputs.append(a)
        tr.probs = softmax(a)
        return tr

    def backward(self, trace: ForwardTrace, labels: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the mean cross-entropy w.r.t. every parameter."""
        labels = np.asarray(labels, dtype=int)
        b = trace.batch_size
        grads: dict[str, np.ndarray] = {}
        d = trace.probs.copy()
        d[np.arange(b), labels] -= 1.0
        d /= b
        for j in reversed(range(len(self.fc_widths))):
            if j != len(self.fc_widths) - 1:
                d = d * (trace.fc_pre[j] > 0)
            grads[f"fc{j}.weight"] = trace.fc_inputs[j].T @ d
            grads[f"fc{j}.bias"] = d.sum(axis=0)
            d = d @ self.params[f"fc{j}.weight"].T
        d = d.reshape(b, self.m, -1)
        for j in reversed(range(len(self.conv_widths))):
            d = d * (trace.conv_pre[j] > 0)
            theta = self.params[f"conv{j}.theta"]
            terms = trace.cheb_terms[j]
            k, c_in, c_out = theta.shape
            flat_terms = terms.transpose(0, 2, 1, 3).reshape(b * self.m, k * c_in)
            flat_d = d.reshape(b * self.m, c_out)
            grads[f"conv{j}.theta"] = (flat_terms.T @ flat_d).reshape(theta.shape)
            grads[f"conv{j}.bias"] = flat_d.sum(axis=0)
            if j > 0:
                d_terms = (flat_d @ theta.reshape(k * c_in, c_out).T).reshape(b, self.m, k, c_in)
                # dH = sum_k T_k^T dT_k
                d = np.einsum("kij,bkic->bjc", self.basis, d_terms.transpose(0, 2, 1, 3))
        return grads

    def loss_and_grads(self, x, labels):
        tr = self.forward(x)
        return ce_loss(tr.probs, labels), self.backward(tr, labels)

    def predict_proba(self, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.vstack([self.forward(x[i:i + chunk]).probs for i in range(0, len(x), chunk)])

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Argmax labels (ties go to the lowest index) and softmax probabilities."""
        p = self.predict_proba(x)
        return np.argmax(p, axis=1), p

    def save(self, path: str | Path) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "conv_widths": list(self.conv_widths),
            "fc_widths": list(self.fc_widths),
            "seed": self.seed,
        }
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        with Path(path).open("wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), basis=self.basis, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "GcnModel":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
            model = cls(z["basis"], meta["conv_widths"], meta["fc_widths"], meta["seed"])
            for k in model.params:
                model.params[k] = z[f"param/{k}"].copy()
        return model


class Adam:
    """Bias-corrected Adam; the state is the moment dicts and the step counter."""

    def __init__(self, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Adam":
        return cls(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {params[k].shape}")
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def train(model: GcnModel, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> list[float]:
    """Mini-batch Adam training for a fixed number of epochs; returns per-epoch mean loss."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    n = len(x)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if y.min() < 0 or y.max() >= model.n_outputs:
        raise ValueError(f"labels must lie in 0..{model.n_outputs - 1}")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam.from_config(cfg)
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(x[idx], y[idx])
            opt.step(model.params, grads)
            total += loss * len(idx)
        history.append(total / n)
        log.debug("epoch %d loss %.6f", epoch + 1, history[-1])
    return history


def write_loss_history(history: Sequence[float], path: str | Path) -> None:
    rows = ["epoch,mean_loss"] + [f"{i + 1},{v:.17g}" for i, v in enumerate(history)]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")

