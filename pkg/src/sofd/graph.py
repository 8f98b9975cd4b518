"""Sensor graph construction and Chebyshev spectral filtering."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SensorGraph:
    """Weighted, undirected graph over the ``m`` measured variables."""

    weights: np.ndarray
    sigma2: float
    epsilon: float
    distances: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        return self.weights > 0

    def edges(self) -> list[tuple[int, int, float]]:
        i, j = np.nonzero(np.triu(self.weights, k=1))
        return [(int(a), int(b), float(self.weights[a, b])) for a, b in zip(i, j)]


@dataclass(frozen=True)
class LaplacianBundle:
    L: np.ndarray
    lambda_max: float
    L_tilde: np.ndarray

    @classmethod
    def from_graph(cls, graph: SensorGraph, use_weights: bool = True) -> "LaplacianBundle":
        L = normalized_laplacian(graph, use_weights)
        lam = max_eigenvalue(L)
        return cls(L, lam, rescale_laplacian(L, lam))

    def basis(self, order: int) -> np.ndarray:
        return chebyshev_basis(self.L_tilde, order)


def pairwise_distances(train: np.ndarray) -> np.ndarray:
    """Euclidean distances between the columns (sensor signals) of an n x m matrix."""
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or train.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    diff = train[:, :, None] - train[:, None, :]
    d = np.sqrt(np.einsum("nij,nij->ij", diff, diff))
    np.fill_diagonal(d, 0.0)
    return d


def gaussian_weights(distances: np.ndarray, sigma2: float = 10.0, epsilon: float = 0.5) -> SensorGraph:
    """Gaussian-kernel weights, sparsified at ``epsilon`` (inclusive)."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    d = np.asarray(distances, dtype=float)
    w = np.exp(-(d**2) / sigma2)
    w[w < epsilon] = 0.0
    np.fill_diagonal(w, 0.0)
    w = 0.5 * (w + w.T)
    return SensorGraph(w, sigma2, epsilon, d)


def build_graph(train: np.ndarray, sigma2: float = 10.0, epsilon: float = 0.5) -> SensorGraph:
    return gaussian_weights(pairwise_distances(train), sigma2, epsilon)


def normalized_laplacian(graph: SensorGraph, use_weights: bool = True) -> np.ndarray:
    """``I - D^-1/2 S D^-1/2`` with ``S`` the weights or the boolean adjacency.

    Isolated nodes keep an identity row.
    """
    s = graph.weights if use_weights else graph.adjacency.astype(float)
    deg = s.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    L = np.eye(graph.m) - inv_sqrt[:, None] * s * inv_sqrt[None, :]
    return 0.5 * (L + L.T)


def max_eigenvalue(L: np.ndarray, max_iter: int = 10_000, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric matrix by power iteration.

    The matrix is shifted by the smallest amount that makes it positive
    semidefinite (Gershgorin lower bound), so the wanted eigenvalue
    dominates without slowing convergence more than needed. A Laplacian
    needs no shift. The start vector is fixed, so the result is
    deterministic.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    if not np.any(L):
        return 0.0
    radius = np.abs(L).sum(axis=1) - np.abs(np.diag(L))
    shift = max(0.0, float(-(np.diag(L) - radius).min()))
    M = L + shift * np.eye(n)
    v = np.random.default_rng(12345).uniform(0.5, 1.5, size=n)
    v /= np.linalg.norm(v)
    lam = float(v @ M @ v)
    for _ in range(max_iter):
        w = M @ v
        v = w / np.linalg.norm(w)
        new = float(v @ M @ v)
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            # any Rayleigh quotient is a lower bound on the top eigenvalue,
            # so a refinement that lands lower has found a different one
            refined = _rayleigh_refine(M, v, new)
            return max(refined, new) - shift
        lam = new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def _rayleigh_refine(M: np.ndarray, v: np.ndarray, lam: float, steps: int = 3) -> float:
    # A small step between power iterates does not bound the eigenvalue
    # error when the top two eigenvalues are close. A few Rayleigh quotient
    # iterations from the converged estimate pin it to machine precision.
    eye = np.eye(len(M))
    for _ in range(steps):
        try:
            y = np.linalg.solve(M - lam * eye, v)
        except np.linalg.LinAlgError:
            break  # lam is already an eigenvalue to working precision
        norm = np.linalg.norm(y)
        if not np.isfinite(norm) or norm == 0.0:
            break
        v = y / norm
        lam = float(v @ M @ v)
    return lam


def rescale_laplacian(L: np.ndarray, lambda_max: float) -> np.ndarray:
    if not lambda_max > 0:
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")
    return 2.0 * np.asarray(L) / lambda_max - np.eye(L.shape[0])


def chebyshev_basis(L_tilde: np.ndarray, order: int) -> np.ndarray:
    """Stack ``T_0(L~) .. T_{order-1}(L~)`` via the three-term recurrence."""
    if order < 1:
        raise ValueError("order must be >= 1")
    m = L_tilde.shape[0]
    T = np.empty((order, m, m))
    T[0] = np.eye(m)
    if order > 1:
        T[1] = L_tilde
    for k in range(2, order):
        T[k] = 2.0 * L_tilde @ T[k - 1] - T[k - 2]
    return T


def cheb_conv(L_tilde: np.ndarray, X: np.ndarray, theta: Sequence[np.ndarray], order: int | None = None) -> np.ndarray:
    """Chebyshev graph convolution ``sum_k T_k(L~) X Theta_k``.

    ``X`` is ``m x c_in`` or batched ``b x m x c_in``.
    """
    order = len(theta) if order is None else order
    if order < 1 or len(theta) != order:
        raise ValueError(f"expected {order} filter matrices, got {len(theta)}")
    X = np.asarray(X, dtype=float)
    m = L_tilde.shape[0]
    if X.shape[-2] != m:
        raise ValueError(f"signal has {X.shape[-2]} nodes, graph has {m}")
    for t in theta:
        if t.shape[0] != X.shape[-1]:
            raise ValueError(f"filter expects {t.shape[0]} input channels, signal has {X.shape[-1]}")

    prev, cur = None, X
    out = cur @ theta[0]
    for k in range(1, order):
        if k == 1:
            nxt = np.matmul(L_tilde, cur)
        else:
            nxt = 2.0 * np.matmul(L_tilde, cur) - prev
        prev, cur = cur, nxt
        out = out + cur @ theta[k]
    return out


def write_edge_list(graph: SensorGraph, path: str | Path) -> None:
    lines = [f"m {graph.m}"] + [f"{i} {j} {w:.17g}" for i, j, w in graph.edges()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_edge_list(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    tag, m = lines[0].split()
    if tag != "m":
        raise ValueError("edge list must start with an 'm <count>' line")
    W = np.zeros((int(m), int(m)))
    for line in lines[1:]:
        if line.strip():
            i, j, w = line.split()
            W[int(i), int(j)] = W[int(j), int(i)] = float(w)
    return W
