"""Multi-setting k-means over augmented patch grids.

One clustering run = Lloyd's algorithm with k-means++ seeding on the flattened
patch embeddings of a single grid.  The ensemble driver repeats this for every
(resolution, k) pair in the config; later stages fuse the runs, so each run
must be exactly reproducible from (grid, k, seed) alone.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from capseg import rng as rng_mod
from capseg.backend import assign_points
from capseg.embedding_grid import PatchEmbeddingGrid
from capseg.errors import ConfigError, ValidationError

DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class RunMeta:
    """Identity of one clustering run within the ensemble."""

    resolution_tag: str
    k_initial: int
    seed: int


@dataclass
class ClusterAssignment:
    """Hard per-patch labels from one run, compacted to [0, k_effective).

    ``k_effective`` can be smaller than the requested k: clusters that lose
    all their members during Lloyd iteration are dropped and the remaining
    labels renumbered, so every index below ``k_effective`` occurs at least
    once.
    """

    height: int
    width: int
    k_effective: int
    run_meta: RunMeta
    labels: np.ndarray
    objective_history: list[float] = field(default_factory=list, repr=False)

    def validate(self) -> "ClusterAssignment":
        if self.labels.shape != (self.height, self.width):
            raise ValidationError(
                f"labels shape {self.labels.shape} != {(self.height, self.width)}"
            )
        if self.k_effective < 1:
            raise ValidationError("k_effective must be >= 1")
        present = np.unique(self.labels)
        if present[0] < 0 or present[-1] >= self.k_effective:
            raise ValidationError("labels outside [0, k_effective)")
        if len(present) != self.k_effective:
            raise ValidationError("some labels in [0, k_effective) are unused")
        return self

    def patch_sets(self) -> list[np.ndarray]:
        """Flat patch indices per cluster, in label order."""
        flat = self.labels.reshape(-1)
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(self.k_effective + 1))
        return [order[bounds[i] : bounds[i + 1]] for i in range(self.k_effective)]


@dataclass
class ClusterConfig:
    """Ensemble settings: which resolutions and k values to sweep."""

    resolutions: list[str] = field(default_factory=lambda: ["default_384", "large_512"])
    k_values: list[int] = field(default_factory=lambda: [2, 8])
    seed: int = 0
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL

    def validate(self) -> "ClusterConfig":
        if not self.resolutions:
            raise ConfigError("resolutions must be non-empty")
        if len(set(self.resolutions)) != len(self.resolutions):
            raise ConfigError(f"duplicate resolutions: {self.resolutions}")
        if not self.k_values:
            raise ConfigError("k_values must be non-empty")
        if len(set(self.k_values)) != len(self.k_values):
            raise ConfigError(f"duplicate k values: {self.k_values}")
        if any(k < 1 for k in self.k_values):
            raise ConfigError(f"k values must be >= 1: {self.k_values}")
        if self.max_iters < 1 or self.tol < 0:
            raise ConfigError("max_iters must be >= 1 and tol >= 0")
        return self

    def run_order(self) -> list[tuple[str, int]]:
        """Deterministic (resolution_tag, k) execution order."""
        return [(tag, k) for tag in self.resolutions for k in self.k_values]


def _sq_dists(x: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = x - center[None, :]
    return np.einsum("nd,nd->n", diff, diff)


def _plus_plus_init(x: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centers by squared-distance weight."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[gen.integers(n)]
    d2 = _sq_dists(x, centers[0])
    for i in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(gen.integers(n))
        else:
            idx = int(gen.choice(n, p=d2 / total))
        centers[i] = x[idx]
        np.minimum(d2, _sq_dists(x, centers[i]), out=d2)
    return centers


def _compact(labels: np.ndarray, k: int) -> tuple[np.ndarray, int]:
    """Renumber labels to [0, n_present), preserving relative order."""
    present = np.unique(labels)
    if len(present) == k and present[0] == 0 and present[-1] == k - 1:
        return labels, k
    lut = np.full(k, -1, dtype=np.int32)
    lut[present] = np.arange(len(present), dtype=np.int32)
    return lut[labels], len(present)


def kmeans(
    grid: PatchEmbeddingGrid,
    k: int,
    seed: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> ClusterAssignment:
    """Cluster a grid's patches into at most k groups.

    The generator is keyed by (seed, resolution_tag, k), so every ensemble
    member draws from its own stream and the result depends only on the
    arguments, never on execution order or thread count.

    Returns an assignment whose ``objective_history`` holds the clustering
    objective (sum of squared distances to the nearest center) recorded at
    every assignment step; Lloyd's algorithm guarantees it never increases.
    """
    grid.validate()
    n = grid.n_patches
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValidationError(f"k={k} exceeds patch count {n}")
    x = np.ascontiguousarray(grid.flat(), dtype=np.float64)
    gen = rng_mod.generator("kmeans", seed, grid.resolution_tag, k)
    centers = _plus_plus_init(x, k, gen)

    history: list[float] = []
    prev_labels: np.ndarray | None = None
    labels = np.zeros(n, dtype=np.int32)
    for _ in range(max_iters):
        labels, objective = assign_points(x, centers)
        labels, k_live = _compact(labels, centers.shape[0])
        history.append(objective)
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels
        new_centers = np.empty((k_live, x.shape[1]), dtype=np.float64)
        counts = np.bincount(labels, minlength=k_live).astype(np.float64)
        for d in range(x.shape[1]):
            new_centers[:, d] = np.bincount(labels, weights=x[:, d], minlength=k_live)
        new_centers /= counts[:, None]
        if centers.shape[0] == k_live:
            shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        else:
            shift = np.inf  # clusters were dropped; geometry changed
        centers = new_centers
        if shift < tol:
            break

    k_effective = int(labels.max()) + 1
    return ClusterAssignment(
        height=grid.height,
        width=grid.width,
        k_effective=k_effective,
        run_meta=RunMeta(grid.resolution_tag, k, seed),
        labels=labels.reshape(grid.height, grid.width),
        objective_history=history,
    ).validate()


def run_all(
    grids: dict[str, PatchEmbeddingGrid],
    cfg: ClusterConfig,
    jobs: int = 1,
) -> list[ClusterAssignment]:
    """Run the whole (resolution, k) ensemble.

    Results come back in ``cfg.run_order()`` order no matter how many worker
    threads execute them.
    """
    cfg.validate()
    for tag in cfg.resolutions:
        if tag not in grids:
            raise ConfigError(f"no grid provided for resolution {tag!r}")
    order = cfg.run_order()

    def one(item: tuple[str, int]) -> ClusterAssignment:
        tag, k = item
        return kmeans(grids[tag], k, cfg.seed, max_iters=cfg.max_iters, tol=cfg.tol)

    if jobs <= 1:
        return [one(item) for item in order]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, order))


def assignment_to_dict(a: ClusterAssignment) -> dict:
    """JSON-ready form: run identity plus flat row-major labels."""
    return {
        "height": a.height,
        "width": a.width,
        "k_effective": a.k_effective,
        "run_meta": {
            "resolution_tag": a.run_meta.resolution_tag,
            "k_initial": a.run_meta.k_initial,
            "seed": a.run_meta.seed,
        },
        "labels": [int(v) for v in a.labels.reshape(-1)],
    }


def assignment_from_dict(d: dict) -> ClusterAssignment:
    try:
        meta = RunMeta(
            d["run_meta"]["resolution_tag"],
            int(d["run_meta"]["k_initial"]),
            int(d["run_meta"]["seed"]),
        )
        labels = np.asarray(d["labels"], dtype=np.int32).reshape(d["height"], d["width"])
        a = ClusterAssignment(
            height=int(d["height"]),
            width=int(d["width"]),
            k_effective=int(d["k_effective"]),
            run_meta=meta,
            labels=labels,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad assignment record: {exc}") from exc
    return a.validate()
