"""Customer-level effects: PCA, K-means, inverse-distance cluster scores and the interacted final stage."""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA

from cidml.crossfit import CrossFitResult
from cidml.errors import ArgumentError, EstimationError
from cidml.final_stage import normal_ci, sandwich_covariance, weighted_ols
from cidml.models import Standardizer
from cidml.weighting import WeightedSample

EXACT_DISTANCE = 1e-12


@dataclass(frozen=True)
class PcaBasis:
    standardizer: Standardizer
    components: np.ndarray  # M x R, orthonormal columns
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    all_variance_ratio: np.ndarray  # every component, for the explained-variance curve
    pc_scale: np.ndarray
    scale_components: bool = True

    @property
    def n_components(self) -> int:
        return int(self.components.shape[1])

    def transform(self, x: np.ndarray) -> np.ndarray:
        return self.standardizer.transform(x) @ self.components

    def cluster_space(self, x: np.ndarray) -> np.ndarray:
        t = self.transform(x)
        return t / self.pc_scale if self.scale_components else t

    def curve_frame(self) -> pd.DataFrame:
        ratio = self.all_variance_ratio
        return pd.DataFrame(
            {
                "component": np.arange(1, ratio.size + 1),
                "explained_variance_ratio": ratio,
                "cumulative": np.cumsum(ratio),
            }
        )


def fit_pca(
    x: np.ndarray,
    target_variance: float | None = 0.80,
    *,
    n_components: int | None = None,
    standardize: bool = True,
    scale_components: bool = True,
) -> PcaBasis:
    """Keep the fewest components reaching `target_variance`, or exactly `n_components`."""
    x = np.asarray(x, dtype=float)
    n, m = x.shape
    if n < 2:
        raise ArgumentError("PCA needs more than one row")
    if n_components is None:
        if target_variance is None or not 0.0 < target_variance <= 1.0:
            raise ArgumentError(f"target_variance must be in (0, 1], got {target_variance}")
    elif not 1 <= n_components <= min(n, m):
        raise ArgumentError(f"n_components must be in [1, {min(n, m)}], got {n_components}")

    std = Standardizer.fit(x) if standardize else Standardizer(mean=x.mean(axis=0), scale=np.ones(m))
    z = std.transform(x)
    if not np.any(z.var(axis=0) > 0):
        raise EstimationError("feature matrix has zero variance; PCA is undefined")

    pca = PCA(svd_solver="full").fit(z)
    ratio = pca.explained_variance_ratio_
    if n_components is None:
        cum = np.cumsum(ratio)
        r = int(np.searchsorted(cum, target_variance - 1e-12) + 1)
        r = min(r, ratio.size)
    else:
        r = n_components

    ev = pca.explained_variance_[:r]
    scale = np.sqrt(ev)
    scale[scale == 0] = 1.0
    # sklearn centers z again; z is already centered so pca.mean_ is ~0
    std = Standardizer(mean=std.mean + pca.mean_ * std.scale, scale=std.scale)
    return PcaBasis(
        standardizer=std,
        components=pca.components_[:r].T.copy(),
        explained_variance=ev.copy(),
        explained_variance_ratio=ratio[:r].copy(),
        all_variance_ratio=ratio.copy(),
        pc_scale=scale,
        scale_components=scale_components,
    )


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    k: int
    inertia: float
    seed: int
    n_iter: int = 0

    def distances(self, z: np.ndarray) -> np.ndarray:
        return cdist(np.atleast_2d(z), self.centroids)


def fit_kmeans(
    z: np.ndarray, k: int, seed: int, *, max_iter: int = 300, n_init: int = 10
) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding, best of `n_init` restarts by inertia.

    Empty clusters are re-seeded at the points farthest from their centers.
    """
    z = np.asarray(z, dtype=float)
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if k > z.shape[0]:
        raise ArgumentError(f"k={k} exceeds the number of points ({z.shape[0]})")
    km = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=n_init,
        max_iter=max_iter,
        random_state=seed,
        algorithm="lloyd",
    ).fit(z)
    return ClusterModel(
        centroids=km.cluster_centers_.copy(),
        k=k,
        inertia=float(km.inertia_),
        seed=seed,
        n_iter=int(km.n_iter_),
    )


def _scores_from_distances(dist: np.ndarray) -> np.ndarray:
    dist = np.atleast_2d(dist)
    psi = np.empty_like(dist)
    exact = dist.min(axis=1) < EXACT_DISTANCE
    if np.any(exact):
        rows = np.flatnonzero(exact)
        psi[rows] = 0.0
        psi[rows, dist[rows].argmin(axis=1)] = 1.0
    rest = ~exact
    if np.any(rest):
        inv = 1.0 / dist[rest]
        psi[rest] = inv / inv.sum(axis=1, keepdims=True)
    return psi


def cluster_scores(z_row: np.ndarray, clusters: ClusterModel) -> np.ndarray:
    """psi_c = (1/d_c) / sum_k (1/d_k); indicator of the centroid when sitting on it."""
    return _scores_from_distances(clusters.distances(np.asarray(z_row, dtype=float)))[0]


def cluster_score_matrix(z: np.ndarray, clusters: ClusterModel) -> np.ndarray:
    return _scores_from_distances(clusters.distances(z))


@dataclass(frozen=True)
class HeteroModel:
    basis: PcaBasis | None
    clusters: ClusterModel | None
    beta: np.ndarray
    beta_cov_hc: np.ndarray
    beta_cov_homoscedastic: np.ndarray
    n_used: int = 0

    @property
    def k(self) -> int:
        return int(self.beta.size)

    def beta_cov(self, variance: str = "hc") -> np.ndarray:
        return self.beta_cov_hc if variance == "hc" else self.beta_cov_homoscedastic


def fit_hetero_stage(
    cf: CrossFitResult,
    ws: WeightedSample,
    psi_matrix: np.ndarray,
    *,
    basis: PcaBasis | None = None,
    clusters: ClusterModel | None = None,
    pinv: bool = False,
) -> HeteroModel:
    """Weighted OLS of y_res on psi(X) * d_res over the kept customers.

    `pinv=True` accepts a rank-deficient design and uses the minimum-norm solution.
    """
    psi = np.asarray(psi_matrix, dtype=float)
    if psi.ndim != 2 or psi.shape[0] != cf.n:
        raise ArgumentError(f"psi_matrix must be {cf.n} x K")
    if psi.shape[1] < 2 and not pinv:
        raise ArgumentError("heterogeneity stage needs K >= 2 clusters")
    idx = ws.kept_indices
    design = psi[idx] * cf.d_res[idx, None]
    y = cf.y_res[idx]
    beta = weighted_ols(design, y, ws.weights, pinv=pinv)
    cov_homo, cov_hc = sandwich_covariance(design, y, ws.weights, beta, pinv=pinv)
    return HeteroModel(
        basis=basis,
        clusters=clusters,
        beta=beta,
        beta_cov_hc=cov_hc,
        beta_cov_homoscedastic=cov_homo,
        n_used=int(idx.size),
    )


def expanded_variance(psi_row: np.ndarray, cov: np.ndarray) -> float:
    """sum_k psi_k^2 Var(b_k) + sum_{k != l} psi_k psi_l Cov(b_k, b_l)."""
    psi_row = np.asarray(psi_row, dtype=float)
    diag = float(np.sum(psi_row**2 * np.diag(cov)))
    outer = np.outer(psi_row, psi_row) * cov
    off = float(outer.sum() - np.trace(outer))
    return diag + off


@dataclass(frozen=True)
class CustomerEffect:
    customer_id: str
    h: float
    var_h: float
    ci: tuple[float, float]
    psi: np.ndarray

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var_h))


@dataclass(frozen=True)
class EffectTable:
    """Column-wise store of CustomerEffect rows."""

    customer_ids: tuple[str, ...]
    h: np.ndarray
    var_h: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    psi: np.ndarray
    level: float

    def __len__(self) -> int:
        return int(self.h.size)

    def __getitem__(self, i: int) -> CustomerEffect:
        return CustomerEffect(
            customer_id=self.customer_ids[i],
            h=float(self.h[i]),
            var_h=float(self.var_h[i]),
            ci=(float(self.ci_lo[i]), float(self.ci_hi[i])),
            psi=self.psi[i],
        )

    def __iter__(self) -> Iterator[CustomerEffect]:
        for i in range(len(self)):
            yield self[i]

    @property
    def crosses_zero(self) -> np.ndarray:
        return (self.ci_lo <= 0.0) & (self.ci_hi >= 0.0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "customer_id": list(self.customer_ids),
                "h": self.h,
                "se": np.sqrt(self.var_h),
                "ci_lo": self.ci_lo,
                "ci_hi": self.ci_hi,
            }
        )


def customer_effects(
    hm: HeteroModel,
    psi_matrix: np.ndarray,
    level: float = 0.95,
    *,
    customer_ids: tuple[str, ...] | None = None,
    variance: Literal["hc", "homoscedastic"] = "hc",
) -> EffectTable:
    """h = psi beta and Var(h) = psi Cov(beta) psi' for every row of psi."""
    psi = np.asarray(psi_matrix, dtype=float)
    if psi.shape[1] != hm.k:
        raise ArgumentError(f"psi has {psi.shape[1]} columns, model has K={hm.k}")
    cov = hm.beta_cov(variance)
    h = psi @ hm.beta
    var_h = np.maximum(np.einsum("ik,kl,il->i", psi, cov, psi), 0.0)
    lo, hi = normal_ci(h, var_h, level)
    ids = customer_ids if customer_ids is not None else tuple(str(i) for i in range(h.size))
    return EffectTable(
        customer_ids=tuple(ids),
        h=h,
        var_h=var_h,
        ci_lo=np.asarray(lo),
        ci_hi=np.asarray(hi),
        psi=psi,
        level=level,
    )


@dataclass(frozen=True)
class HeteroSummary:
    n: int
    mean_h: float
    pct_ci_crossing_zero: float
    hist_counts: tuple[int, ...]
    hist_edges: tuple[float, ...]
    population: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "mean_h": self.mean_h,
            "pct_ci_crossing_zero": self.pct_ci_crossing_zero,
            "population": self.population,
            "histogram": {"counts": list(self.hist_counts), "edges": list(self.hist_edges)},
        }


def summarize_effects(
    table: EffectTable,
    mask: np.ndarray,
    *,
    weights: np.ndarray | None = None,
    bins: int = 30,
    population: str = "treated",
) -> HeteroSummary:
    """Weighted mean of h, share of customer CIs crossing zero, and a histogram of h over `mask`."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EstimationError(f"no customers in the {population} population to summarize")
    h = table.h[mask]
    w = np.ones(h.size) if weights is None else np.asarray(weights, dtype=float)[mask]
    counts, edges = np.histogram(h, bins=bins)
    return HeteroSummary(
        n=int(h.size),
        mean_h=float(np.sum(w * h) / np.sum(w)),
        pct_ci_crossing_zero=float(100.0 * table.crosses_zero[mask].mean()),
        hist_counts=tuple(int(c) for c in counts),
        hist_edges=tuple(float(e) for e in edges),
        population=population,
    )
