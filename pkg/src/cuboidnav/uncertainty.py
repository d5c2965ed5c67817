"""Non-parametric error banks and perturbed-cuboid sample grids.

A bank holds raw perception-error samples (yaw, size, origin); no density
model is fit to them.  Grids resample the bank with replacement (bootstrap)
and apply the perturbations to a nominal cuboid along three independent
axes, so entry [i][j][k] shares its yaw with every entry of slice i.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Cuboid, CuboidSize, GroundPose2D

MIN_SIZE = 0.05


def _wrap(angles: np.ndarray) -> np.ndarray:
    wrapped = np.arctan2(np.sin(angles), np.cos(angles))
    return np.where(wrapped <= -np.pi, np.pi, wrapped)


@dataclass
class ErrorBank:
    """Empirical perturbation samples: yaw in radians, size/origin in meters.

    size rows are (length, height) deltas; origin rows are ground-plane
    (x, y) deltas.  Arrays may have different lengths.
    """

    yaw_samples: np.ndarray
    size_samples: np.ndarray
    origin_samples: np.ndarray

    def __post_init__(self):
        self.yaw_samples = np.asarray(self.yaw_samples, dtype=float).reshape(-1)
        self.size_samples = np.asarray(self.size_samples, dtype=float).reshape(-1, 2)
        self.origin_samples = np.asarray(self.origin_samples, dtype=float).reshape(-1, 2)
        for name in ("yaw_samples", "size_samples", "origin_samples"):
            arr = getattr(self, name)
            if arr.shape[0] == 0:
                raise ValueError(f"{name} must be non-empty")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")

    def to_dict(self) -> dict:
        return {
            "yaw": self.yaw_samples.tolist(),
            "size": self.size_samples.tolist(),
            "origin": self.origin_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ErrorBank":
        return cls(
            yaw_samples=np.asarray(data["yaw"], dtype=float),
            size_samples=np.asarray(data["size"], dtype=float),
            origin_samples=np.asarray(data["origin"], dtype=float),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ErrorBank":
        return cls.from_dict(json.loads(Path(path).read_text()))


def zero_bank() -> ErrorBank:
    """Single all-zero sample per axis; grids drawn from it reproduce the nominal."""
    return ErrorBank(np.zeros(1), np.zeros((1, 2)), np.zeros((1, 2)))


@dataclass
class UncertainCuboid:
    nominal: Cuboid
    bank: ErrorBank


@dataclass
class SampleGrid:
    """Product grid of perturbed cuboids stored as compact per-axis arrays.

    yaws[i], sizes[j] (length, height), origins[k] define entry [i][j][k];
    thickness is shared.  The object-array view is built lazily.
    """

    yaws: np.ndarray
    sizes: np.ndarray
    origins: np.ndarray
    thickness: float
    counts: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        self.yaws = np.asarray(self.yaws, dtype=float).reshape(-1)
        self.sizes = np.asarray(self.sizes, dtype=float).reshape(-1, 2)
        self.origins = np.asarray(self.origins, dtype=float).reshape(-1, 2)
        self.counts = (len(self.yaws), len(self.sizes), len(self.origins))

    @property
    def n_total(self) -> int:
        n_yaw, n_size, n_origin = self.counts
        return n_yaw * n_size * n_origin

    def cuboid(self, i: int, j: int, k: int) -> Cuboid:
        return Cuboid(
            pose=GroundPose2D(origin=self.origins[k], yaw=float(self.yaws[i])),
            size=CuboidSize(
                length=float(self.sizes[j, 0]),
                height=float(self.sizes[j, 1]),
                thickness=self.thickness,
            ),
        )

    @cached_property
    def cuboids(self) -> np.ndarray:
        n_yaw, n_size, n_origin = self.counts
        out = np.empty(self.counts, dtype=object)
        for i in range(n_yaw):
            for j in range(n_size):
                for k in range(n_origin):
                    out[i, j, k] = self.cuboid(i, j, k)
        return out

    def flat_cuboids(self) -> list[Cuboid]:
        """All entries in row-major [i][j][k] order."""
        return list(self.cuboids.ravel())


def draw_grid(u: UncertainCuboid, counts: Sequence[int], rng_seed: int) -> SampleGrid:
    """Bootstrap-draw a perturbation grid around the nominal cuboid.

    Each axis draws its count of samples i.i.d. with replacement from the
    matching bank array, in the fixed order yaw, size, origin so the result
    is a pure function of the seed.  Perturbed sizes are clamped to at
    least 0.05 m per component; yaw is wrapped to (-pi, pi].
    """
    n_yaw, n_size, n_origin = (int(c) for c in counts)
    if min(n_yaw, n_size, n_origin) < 1:
        raise ValueError(f"counts must all be >= 1, got {tuple(counts)}")
    bank = u.bank
    nominal = u.nominal
    rng = np.random.default_rng(rng_seed)
    yaw_idx = rng.integers(0, len(bank.yaw_samples), n_yaw)
    size_idx = rng.integers(0, len(bank.size_samples), n_size)
    origin_idx = rng.integers(0, len(bank.origin_samples), n_origin)
    yaws = _wrap(nominal.pose.yaw + bank.yaw_samples[yaw_idx])
    base_size = np.array([nominal.size.length, nominal.size.height])
    sizes = np.maximum(base_size + bank.size_samples[size_idx], MIN_SIZE)
    origins = np.asarray(nominal.pose.origin) + bank.origin_samples[origin_idx]
    return SampleGrid(yaws=yaws, sizes=sizes, origins=origins, thickness=nominal.size.thickness)


def draw_cuboids(u: UncertainCuboid, n: int, rng_seed: int) -> list[Cuboid]:
    """n i.i.d. fully perturbed cuboids (independent yaw/size/origin per draw).

    Unlike draw_grid this does not share perturbations across a product
    structure; used for containment audits and hull inflation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bank = u.bank
    nominal = u.nominal
    rng = np.random.default_rng(rng_seed)
    yaw_idx = rng.integers(0, len(bank.yaw_samples), n)
    size_idx = rng.integers(0, len(bank.size_samples), n)
    origin_idx = rng.integers(0, len(bank.origin_samples), n)
    yaws = _wrap(nominal.pose.yaw + bank.yaw_samples[yaw_idx])
    base_size = np.array([nominal.size.length, nominal.size.height])
    sizes = np.maximum(base_size + bank.size_samples[size_idx], MIN_SIZE)
    origins = np.asarray(nominal.pose.origin) + bank.origin_samples[origin_idx]
    return [
        Cuboid(
            pose=GroundPose2D(origin=origins[m], yaw=float(yaws[m])),
            size=CuboidSize(
                length=float(sizes[m, 0]),
                height=float(sizes[m, 1]),
                thickness=nominal.size.thickness,
            ),
        )
        for m in range(n)
    ]


@dataclass(frozen=True)
class Mixture1D:
    """Two-component (or longer) Gaussian mixture used to synthesize banks."""

    weights: tuple[float, ...]
    means: tuple[float, ...]
    sigmas: tuple[float, ...]

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        comp = rng.choice(len(w), size=shape, p=w / w.sum())
        means = np.asarray(self.means)[comp]
        sigmas = np.asarray(self.sigmas)[comp]
        return rng.normal(means, sigmas)


YAW_MIXTURE = Mixture1D(weights=(0.6, 0.4), means=(-0.05, 0.12), sigmas=(0.03, 0.05))
SIZE_MIXTURE = Mixture1D(weights=(0.7, 0.3), means=(-0.8, 1.5), sigmas=(0.5, 0.8))
ORIGIN_MIXTURE = Mixture1D(weights=(0.5, 0.5), means=(-0.6, 0.9), sigmas=(0.4, 0.6))


def default_bank(
    rng_seed: int,
    n: int,
    yaw_mixture: Mixture1D = YAW_MIXTURE,
    size_mixture: Mixture1D = SIZE_MIXTURE,
    origin_mixture: Mixture1D = ORIGIN_MIXTURE,
) -> ErrorBank:
    """Synthetic, deliberately skewed stand-in bank.

    Each channel is a bimodal Gaussian mixture, so moment tests can tell it
    apart from any single Gaussian.  Real deployments should replace this
    with calibrate_bank output on estimator-vs-truth pairs.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(rng_seed)
    yaw = yaw_mixture.sample(rng, n)
    size = size_mixture.sample(rng, (n, 2))
    origin = origin_mixture.sample(rng, (n, 2))
    return ErrorBank(yaw_samples=yaw, size_samples=size, origin_samples=origin)


def calibrate_bank(pairs: Sequence[tuple[Cuboid, Cuboid]]) -> ErrorBank:
    """Bank of estimated-minus-truth residuals over (estimated, truth) pairs.

    Yaw residuals are wrapped to (-pi, pi] so near-antipodal estimates give
    small signed errors rather than ~2*pi ones.
    """
    if len(pairs) == 0:
        raise ValueError("need at least one (estimated, truth) pair")
    yaw = np.empty(len(pairs))
    size = np.empty((len(pairs), 2))
    origin = np.empty((len(pairs), 2))
    for idx, (est, truth) in enumerate(pairs):
        yaw[idx] = est.pose.yaw - truth.pose.yaw
        size[idx] = (est.size.length - truth.size.length, est.size.height - truth.size.height)
        origin[idx] = np.asarray(est.pose.origin) - np.asarray(truth.pose.origin)
    return ErrorBank(yaw_samples=_wrap(yaw), size_samples=size, origin_samples=origin)
