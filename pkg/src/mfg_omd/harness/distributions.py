"""Seeded procedural generators for sets of initial distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import StateSpace, ValidationError, validate_distribution

KINDS = ("dirac", "gaussian", "random-support", "explicit")


@dataclass(frozen=True)
class DistributionSetSpec:
    """One or more generator kinds with a count each, e.g. 10/10/10 for a mixed set.

    ``histograms`` is only read for the ``explicit`` kind: one tuple of raw
    non-negative weights per distribution (normalized on generation).
    """

    kinds: tuple = ("dirac",)
    counts: tuple = (5,)
    blob_std: float = 1.0
    blob_components: int = 1
    support_size: int = 5
    histograms: tuple = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "histograms", tuple(tuple(float(v) for v in h) for h in self.histograms))
        self.validate()

    def validate(self) -> None:
        if not self.kinds or len(self.kinds) != len(self.counts):
            raise ValidationError("kinds and counts must be non-empty and of equal length")
        for kind, count in zip(self.kinds, self.counts):
            if kind not in KINDS:
                raise ValidationError(f"unknown distribution kind {kind!r}; expected one of {KINDS}")
            if count < 1:
                raise ValidationError("distribution counts must be >= 1")
            if kind == "explicit" and count != len(self.histograms):
                raise ValidationError("explicit count must equal the number of histograms")
        if self.blob_std <= 0:
            raise ValidationError("blob_std must be positive")
        if self.blob_components < 1 or self.support_size < 1:
            raise ValidationError("blob_components and support_size must be >= 1")

    @property
    def total(self) -> int:
        return sum(self.counts)


def composite_spec(seed: int = 0, per_kind: int = 10, **kwargs) -> DistributionSetSpec:
    """Equal numbers of fixed-point, Gaussian and random-support distributions."""
    return DistributionSetSpec(("dirac", "gaussian", "random-support"), (per_kind,) * 3, seed=seed, **kwargs)


def _coords(states: StateSpace) -> np.ndarray:
    return np.array(states.cells, dtype=float)


def gaussian_blob(states: StateSpace, centers, std: float) -> np.ndarray:
    """Equal-weight mixture of isotropic Gaussians centered on cells, restricted to free cells."""
    coords = _coords(states)
    density = np.zeros(states.size)
    for center in centers:
        center = np.asarray(center, dtype=float)
        if center.shape != coords.shape[1:]:
            raise ValidationError(f"blob center {tuple(center)} is not a cell of this state space")
        d2 = ((coords - center) ** 2).sum(axis=1)
        density += np.exp(-0.5 * d2 / std**2)
    return density / density.sum()


def generate_distribution_set(spec: DistributionSetSpec, states: StateSpace) -> list:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    X = states.size
    out = []
    for kind, count in zip(spec.kinds, spec.counts):
        if kind == "random-support" and spec.support_size > X:
            raise ValidationError(f"support_size {spec.support_size} exceeds {X} states")
        for i in range(count):
            if kind == "dirac":
                mu = np.zeros(X)
                mu[rng.integers(X)] = 1.0
            elif kind == "gaussian":
                centers = [states.cells[j] for j in rng.integers(X, size=spec.blob_components)]
                mu = gaussian_blob(states, centers, spec.blob_std)
            elif kind == "random-support":
                mu = np.zeros(X)
                mu[rng.choice(X, size=spec.support_size, replace=False)] = 1.0 / spec.support_size
            else:
                raw = np.asarray(spec.histograms[i], dtype=float)
                if raw.shape != (X,) or (raw < 0).any() or raw.sum() <= 0:
                    raise ValidationError(f"histogram {i} does not fit {X} states")
                mu = raw / raw.sum()
            out.append(validate_distribution(mu / mu.sum(), X))
    return out


def check_disjoint(train: DistributionSetSpec, test: DistributionSetSpec, states: StateSpace,
                   strict: bool = False) -> None:
    """Train and test specs must differ; ``strict`` also rejects any shared generated distribution.

    Small grids make coincident Diracs likely, so the default only compares specs.
    """
    if train == test:
        raise ValidationError("train and test distribution specs are identical")
    if strict:
        a = generate_distribution_set(train, states)
        b = generate_distribution_set(test, states)
        for mu in a:
            if any(np.allclose(mu, nu, atol=1e-12, rtol=0) for nu in b):
                raise ValidationError("train and test sets share a distribution")
