"""Synthetic cohorts with a planted group-related connectivity factor.

Each subject's edges are ``base + factor * loadings + noise`` clamped to
[0, 1]. The factor is shifted by ``+group_shift`` for ASD and
``-group_shift`` for NC, and full-scale IQ is ``iq_mean + iq_coupling *
factor + noise``. Draw order from a PCG64 generator seeded with ``seed``:
base edges, group assignment, factor, edge noise, ages, IQ, IQ missingness.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .atlas import N_REGIONS, regions_for
from .dataset import SubjectRecord
from .exceptions import ValidationError

FRONTAL = ("SFGdor", "MFG", "SFGmed")
PARIETAL = ("SPG", "IPL", "SMG", "ANG", "PCUN")


def frontoparietal_edges(frontal=FRONTAL, parietal=PARIETAL, n_regions=N_REGIONS):
    """Canonical edge indices joining any frontal node to any parietal node."""
    f = regions_for(frontal)
    p = regions_for(parietal)
    pairs = {(min(a, b), max(a, b)) for a in f for b in p}
    return sorted(edge_index(i, j, n_regions) for i, j in pairs)


def edge_index(i, j, n):
    """Position of pair (i, j), i < j, in the row-major upper triangle."""
    if not 0 <= i < j < n:
        raise ValidationError(f"invalid pair ({i}, {j}) for n={n}")
    return i * n - i * (i + 1) // 2 + (j - i - 1)


@dataclass
class SyntheticSpec:
    n_subjects: int = 600
    asd_fraction: float = 0.5
    group_shift: float = 1.0
    factor_sd: float = 1.0
    loading: float = -0.08
    planted_edges: list = field(default_factory=frontoparietal_edges)
    n_regions: int = N_REGIONS
    base_low: float = 0.2
    base_high: float = 0.6
    noise_sd: float = 0.05
    age_mean: float = 16.5
    age_sd: float = 7.5
    age_min: float = 6.5
    age_max: float = 58.0
    iq_mean: float = 108.0
    iq_sd: float = 12.0
    iq_coupling: float = -4.0
    iq_missing_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        n_asd = round(self.n_subjects * self.asd_fraction)
        if n_asd < 1 or n_asd >= self.n_subjects:
            raise ValidationError("both groups must be non-empty")
        if not 0 <= self.base_low <= self.base_high <= 1:
            raise ValidationError("base edge range must lie inside [0, 1]")
        if self.noise_sd < 0 or self.factor_sd < 0 or self.iq_sd < 0:
            raise ValidationError("standard deviations must be non-negative")
        if not 0 <= self.iq_missing_fraction < 1:
            raise ValidationError("iq_missing_fraction must lie in [0, 1)")
        n_edges = self.n_regions * (self.n_regions - 1) // 2
        self.planted_edges = sorted(int(e) for e in self.planted_edges)
        if any(not 0 <= e < n_edges for e in self.planted_edges):
            raise ValidationError("planted edge index out of range")

    @property
    def n_edges(self):
        return self.n_regions * (self.n_regions - 1) // 2

    def loadings(self):
        v = np.zeros(self.n_edges)
        v[self.planted_edges] = self.loading
        return v

    def to_dict(self):
        return asdict(self)


@dataclass
class SyntheticCohort:
    records: list
    factor: np.ndarray
    loadings: np.ndarray
    base: np.ndarray

    @property
    def edges(self):
        return np.vstack([r.edges for r in self.records])


def generate(spec):
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n, e = spec.n_subjects, spec.n_edges
    base = rng.uniform(spec.base_low, spec.base_high, size=e)
    n_asd = round(n * spec.asd_fraction)
    is_asd = np.zeros(n, dtype=bool)
    is_asd[rng.permutation(n)[:n_asd]] = True
    factor = np.where(is_asd, spec.group_shift, -spec.group_shift) + spec.factor_sd * rng.standard_normal(n)
    loadings = spec.loadings()
    noise = spec.noise_sd * rng.standard_normal((n, e))
    edges = np.clip(base + factor[:, None] * loadings + noise, 0.0, 1.0)
    ages = np.clip(rng.normal(spec.age_mean, spec.age_sd, n), spec.age_min, spec.age_max)
    ages = np.round(ages, 1)
    iq = spec.iq_mean + spec.iq_coupling * factor + spec.iq_sd * rng.standard_normal(n)
    iq = np.round(iq, 1)
    missing = rng.uniform(size=n) < spec.iq_missing_fraction
    records = [
        SubjectRecord(
            subject_id=f"sub{i + 1:04d}",
            group="ASD" if is_asd[i] else "NC",
            age=float(ages[i]),
            fiq=None if missing[i] else float(iq[i]),
            edges=edges[i],
        )
        for i in range(n)
    ]
    return SyntheticCohort(records, factor, loadings, base)
