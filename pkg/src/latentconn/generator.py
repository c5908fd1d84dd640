"""Virtual connectivity matrices decoded from latent coordinates.

Feature deltas shift one latent coordinate by a multiple of its cohort SD
(other coordinates held at their cohort mean) and subtract the matrix
decoded at the cohort mean. Manifold cells use absolute latent coordinates
and subtract the matrix decoded at the origin. Age defaults to the cohort
mean age stored in the model.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .atlas import N_REGIONS, REGIONS
from .connectome import devectorize, fcs
from .exceptions import ValidationError
from .vae import decode

DEFAULT_FCS_THRESHOLD = 1.5


def _resolve_age(model, age):
    if age is not None:
        return float(age)
    if model.mean_age is None:
        raise ValidationError("model has no cohort mean age; pass age explicitly")
    return model.mean_age


def generate_matrix(model, z, age=None):
    """Decoded connectivity matrix: symmetric, entries in (0, 1), zero diagonal."""
    return devectorize(decode(model, np.asarray(z, dtype=np.float64), _resolve_age(model, age)))


@dataclass
class DeltaMatrix:
    values: np.ndarray
    feature: int
    shift: float
    age: float
    reference: np.ndarray
    shifted: np.ndarray


def _require_cohort(model, feature):
    if not model.has_cohort_stats:
        raise ValidationError("model has no cohort latent statistics; train or load a fitted model")
    if not 0 <= feature < model.n_latent:
        raise ValidationError(f"feature index {feature} outside 0..{model.n_latent - 1}")


def feature_delta(model, feature, direction=1.0, age=None):
    """Matrix at ``mean + direction * sd`` on one feature minus the matrix at the mean."""
    _require_cohort(model, feature)
    age = _resolve_age(model, age)
    z_ref = np.array(model.cohort_mean, dtype=np.float64)
    z_shift = z_ref.copy()
    z_shift[feature] = z_ref[feature] + float(direction) * model.cohort_sd[feature]
    reference = generate_matrix(model, z_ref, age)
    shifted = generate_matrix(model, z_shift, age)
    return DeltaMatrix(shifted - reference, feature, float(direction), age, reference, shifted)


@dataclass
class ManifoldGrid:
    coords: np.ndarray
    cells: np.ndarray  # (steps, steps, n, n); cells[a, b] is at z = (coords[a], coords[b])
    age: float


def lattice(lo, hi, steps):
    if steps < 2:
        raise ValidationError("manifold needs steps >= 2")
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise ValidationError(f"invalid range [{lo}, {hi}]")
    coords = np.linspace(lo, hi, steps)
    coords[np.abs(coords) < 1e-12 * max(abs(lo), abs(hi))] = 0.0
    return coords


def manifold_grid(model, lo=-2.0, hi=2.0, steps=5, age=None):
    if model.n_latent != 2:
        raise ValidationError("manifold grid is defined for 2 latent features")
    age = _resolve_age(model, age)
    coords = lattice(lo, hi, steps)
    origin = generate_matrix(model, np.zeros(2), age)
    n = origin.shape[0]
    cells = np.empty((steps, steps, n, n))
    # one decode per cell (not batched) so each cell is bit-identical to a standalone call
    for a, za in enumerate(coords):
        for b, zb in enumerate(coords):
            cells[a, b] = generate_matrix(model, np.array([za, zb]), age) - origin
    return ManifoldGrid(coords, cells, age)


@dataclass
class FcsDelta:
    delta: np.ndarray
    annotated: list
    threshold: float
    feature: int
    shift: float


def fcs_delta(model, feature, direction=1.0, age=None, threshold=DEFAULT_FCS_THRESHOLD):
    """Change in node strength between the shifted and mean-feature matrices."""
    d = feature_delta(model, feature, direction, age)
    delta = fcs(d.shifted) - fcs(d.reference)
    annotated = [int(i) for i in np.flatnonzero(np.abs(delta) > threshold)]
    return FcsDelta(delta, annotated, float(threshold), feature, float(direction))


# -- output formats ---------------------------------------------------------

def write_fcs_delta_csv(path, result, labels=None):
    labels = labels or (REGIONS if result.delta.size == N_REGIONS else [str(i) for i in range(result.delta.size)])
    annotated = set(result.annotated)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "delta", "annotated"])
        for i, (label, value) in enumerate(zip(labels, result.delta)):
            w.writerow([label, f"{value:.9g}", int(i in annotated)])


def _colorize(values, vmin, vmax, colormap):
    v = np.asarray(values, dtype=np.float64)
    if colormap == "diverging":
        # blue (negative) -> white (0) -> red (positive), symmetric about 0
        bound = max(abs(vmin), abs(vmax)) or 1.0
        t = np.clip(v / bound, -1.0, 1.0)
        r = np.where(t < 0, 1.0 + t, 1.0)
        g = 1.0 - np.abs(t)
        b = np.where(t > 0, 1.0 - t, 1.0)
    elif colormap == "sequential":
        # white (vmin) -> black (vmax)
        span = (vmax - vmin) or 1.0
        t = np.clip((v - vmin) / span, 0.0, 1.0)
        r = g = b = 1.0 - t
    else:
        raise ValidationError(f"unknown colormap {colormap!r}")
    rgb = np.stack([r, g, b], axis=-1)
    return np.rint(rgb * 255.0).astype(np.uint8)


def _write_ppm_pixels(path, pixels):
    h, w, _ = pixels.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_heatmap(path, matrix, colormap="diverging", vmin=None, vmax=None, scale=4):
    """Binary PPM heatmap plus a ``<path>.json`` sidecar recording the scale."""
    m = np.asarray(matrix, dtype=np.float64)
    if colormap == "diverging":
        bound = float(np.max(np.abs(m))) if vmax is None else float(vmax)
        vmin, vmax = -bound, bound
    else:
        vmin = 0.0 if vmin is None else float(vmin)
        vmax = 1.0 if vmax is None else float(vmax)
    pixels = _colorize(m, vmin, vmax, colormap)
    pixels = np.repeat(np.repeat(pixels, scale, axis=0), scale, axis=1)
    _write_ppm_pixels(path, pixels)
    _write_sidecar(path, {"colormap": colormap, "vmin": vmin, "vmax": vmax,
                          "rows": m.shape[0], "cols": m.shape[1], "pixels_per_cell": scale})
    return vmin, vmax


def write_contact_sheet(path, grid, scale=2, gap=4):
    """All manifold cells tiled on one shared symmetric diverging scale."""
    steps, _, n, _ = grid.cells.shape
    bound = float(np.max(np.abs(grid.cells)))
    tile = n * scale
    size = steps * tile + (steps - 1) * gap
    sheet = np.full((size, size, 3), 255, dtype=np.uint8)
    for a in range(steps):
        for b in range(steps):
            px = _colorize(grid.cells[a, b], -bound, bound, "diverging")
            px = np.repeat(np.repeat(px, scale, axis=0), scale, axis=1)
            # rows run top-down from the highest first-feature value
            top = (steps - 1 - a) * (tile + gap)
            left = b * (tile + gap)
            sheet[top : top + tile, left : left + tile] = px
    _write_ppm_pixels(path, sheet)
    _write_sidecar(path, {"colormap": "diverging", "vmin": -bound, "vmax": bound,
                          "steps": steps, "coords": grid.coords.tolist(),
                          "pixels_per_cell": scale, "gap": gap,
                          "layout": "row = feature 1 (descending), column = feature 2 (ascending)"})


def _write_sidecar(path, meta):
    Path(f"{path}.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def read_ppm(path):
    """Parse a binary P6 file written by this module; returns (h, w, 3) uint8."""
    data = Path(path).read_bytes()
    header, _, rest = data.partition(b"\n")
    if header != b"P6":
        raise ValidationError(f"{path}: not a binary PPM")
    dims, _, rest = rest.partition(b"\n")
    maxval, _, pixels = rest.partition(b"\n")
    w, h = (int(x) for x in dims.split())
    if int(maxval) != 255 or len(pixels) != w * h * 3:
        raise ValidationError(f"{path}: truncated or unsupported PPM")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)
