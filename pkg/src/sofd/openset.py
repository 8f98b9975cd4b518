"""Fused feature space, per-class Gaussian discriminants and statistical exclusion.

A test feature ``z`` is assigned to the class with the largest quadratic
discriminant ``g_k(z)``. It is excluded from every known class when the
winner's discriminant falls below its value on the Hotelling control
boundary, ``-L/2 + tau``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, special

from .dataio import Dataset
from .nnet import ForwardTrace


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


@dataclass
class RejectionConfig:
    alpha: float = 0.01
    reg: float = 1e-6  # ridge, scaled by trace(Sigma)/d
    layers: Sequence[int] | None = None  # fc layer indices to fuse; None = all
    priors: Sequence[float] | None = None  # default uniform
    positive_boundary: bool = False  # boundary at +L/2 + tau instead of -L/2 + tau
    dfn_equals_n: bool = False  # F(n, n-d) instead of F(d, n-d)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.reg < 0:
            raise ValueError("reg must be non-negative")


@dataclass
class ClassGaussian:
    label: int
    mu: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of sigma
    log_det: float
    prior: float
    n: int
    control_limit: float

    @property
    def d(self) -> int:
        return len(self.mu)

    @property
    def tau(self) -> float:
        """``ln(P(F_k) |Sigma_k|^(-1/2))``: the discriminant at the class mean."""
        return float(np.log(self.prior) - 0.5 * self.log_det)

    @property
    def sigma_inverse(self) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), np.eye(self.d))

    def mahalanobis2(self, z: np.ndarray) -> np.ndarray:
        diff = np.atleast_2d(z) - self.mu
        r = linalg.solve_triangular(self.chol, diff.T, lower=True)
        return np.einsum("ij,ij->j", r, r)

    def boundary(self, positive_boundary: bool = False) -> float:
        half = 0.5 * self.control_limit
        return (half if positive_boundary else -half) + self.tau


def fuse(trace: ForwardTrace, layers: Sequence[int] | None = None) -> np.ndarray:
    """Concatenate fully connected layer outputs in depth order."""
    outs = trace.fc_outputs
    if layers is None:
        layers = range(len(outs))
    idx = sorted({i % len(outs) for i in layers})
    if not idx:
        raise ValueError("empty layer selection")
    return np.concatenate([outs[i] for i in idx], axis=1)


def fused_features(model, x: np.ndarray, layers: Sequence[int] | None = None, chunk: int = 4096) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.vstack([fuse(model.forward(x[i:i + chunk]), layers) for i in range(0, len(x), chunk)])


def f_upper_quantile(alpha: float, dfn: float, dfd: float) -> float:
    """Value ``q`` with ``P(F > q) = alpha`` for an F(dfn, dfd) variable."""
    # F = (dfd/dfn) * B/(1-B) with B ~ Beta(dfn/2, dfd/2)
    b = special.betainccinv(dfn / 2.0, dfd / 2.0, alpha)
    return float(dfd / dfn * b / (1.0 - b))


def control_limit(d: int, n: int, alpha: float, dfn_equals_n: bool = False) -> float:
    """Hotelling T^2 control limit for a new observation against ``n`` training samples."""
    if not n > d >= 1:
        raise ValueError(f"control limit needs n > d >= 1, got n={n}, d={d}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    dfn = n if dfn_equals_n else d
    return d * (n * n - 1.0) / (n * (n - d)) * f_upper_quantile(alpha, dfn, n - d)


def fit_class_gaussians(features: np.ndarray, labels: np.ndarray, n_classes: int | None = None,
                        config: RejectionConfig | None = None) -> list[ClassGaussian]:
    """Mean, ridge-regularized sample covariance and control limit per class."""
    config = config or RejectionConfig()
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    priors = np.full(n_classes, 1.0 / n_classes) if config.priors is None else np.asarray(config.priors, float)
    if len(priors) != n_classes or np.any(priors <= 0) or abs(priors.sum() - 1.0) > 1e-9:
        raise ValueError("priors must be positive, one per class, and sum to 1")
    d = features.shape[1]
    out = []
    for k in range(n_classes):
        zk = features[labels == k]
        if len(zk) < 2:
            raise ValueError(f"class {k} has {len(zk)} samples; need at least 2")
        mu = zk.mean(axis=0)
        diff = zk - mu
        sigma = diff.T @ diff / (len(zk) - 1)
        sigma += config.reg * (np.trace(sigma) / d) * np.eye(d)
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise SingularCovarianceError(f"covariance of class {k} is singular") from None
        diag = np.diag(chol)
        if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
            raise SingularCovarianceError(f"covariance of class {k} is singular")
        log_det = 2.0 * float(np.sum(np.log(diag)))
        limit = control_limit(d, len(zk), config.alpha, config.dfn_equals_n)
        out.append(ClassGaussian(k, mu, sigma, chol, log_det, float(priors[k]), len(zk), limit))
    return out


def discriminant_g(z: np.ndarray, cls: ClassGaussian) -> np.ndarray | float:
    """``-1/2 (z-mu)' Sigma^-1 (z-mu) + ln P - 1/2 ln|Sigma|`` for one or many ``z``."""
    g = -0.5 * cls.mahalanobis2(z) + np.log(cls.prior) - 0.5 * cls.log_det
    return float(g[0]) if np.ndim(z) == 1 else g


@dataclass
class Scores:
    """Discriminant results for a batch of features (one row per sample)."""

    g: np.ndarray  # (n, K)
    winner: np.ndarray  # k*
    s: np.ndarray  # winner's softmax share of exp(g)
    zeta: np.ndarray  # same share with g_k* replaced by the boundary value
    g_boundary: np.ndarray
    excluded: np.ndarray

    def __len__(self) -> int:
        return len(self.winner)


def classify(g: np.ndarray, boundaries: Sequence[float] | None = None) -> Scores:
    """Winner, normalized score and exclusion threshold from discriminant values.

    ``boundaries[k]`` is class k's discriminant value on its control boundary.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    n = len(g)
    winner = np.argmax(g, axis=1)
    g_star = g[np.arange(n), winner]
    lse = np.log(np.exp(g - g_star[:, None]).sum(axis=1))  # ln sum_j exp(g_j - g*)
    s = np.exp(-lse)
    if boundaries is None:
        gb = np.full(n, -np.inf)
    else:
        gb = np.asarray(boundaries, dtype=float)[winner]
    with np.errstate(over="ignore"):
        zeta = np.exp(gb - g_star - lse)  # inf for far outliers
    return Scores(g, winner, s, zeta, gb, excluded=g_star < gb)


def score(features: np.ndarray, classes: Sequence[ClassGaussian], positive_boundary: bool = False) -> Scores:
    g = np.column_stack([np.atleast_1d(discriminant_g(np.atleast_2d(features), c)) for c in classes])
    return classify(g, [c.boundary(positive_boundary) for c in classes])


def rejection_threshold(g_values: np.ndarray, winner: ClassGaussian, positive_boundary: bool = False) -> float:
    """``zeta = 1 / sum_j exp(g_j - g_boundary)`` for a single sample."""
    gb = winner.boundary(positive_boundary)
    g_values = np.asarray(g_values, dtype=float)
    top = max(g_values.max(), gb)
    return float(np.exp(gb - top) / np.exp(g_values - top).sum())


def build_pseudo_set(unlabeled: Dataset, features: np.ndarray, classes: Sequence[ClassGaussian],
                     positive_boundary: bool = False) -> tuple[Dataset, Scores]:
    """Excluded test samples, pseudo-labeled as the unknown class ``K``."""
    sc = score(features, classes, positive_boundary)
    pseudo = unlabeled.subset(np.flatnonzero(sc.excluded), role="D_p", y=unlabeled.n_known)
    return pseudo, sc


def write_features(path: str | Path, ids: np.ndarray, features: np.ndarray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id"] + [f"z{i}" for i in range(features.shape[1])])
        for i, row in zip(ids, features):
            w.writerow([int(i), *(f"{v:.17g}" for v in row)])
