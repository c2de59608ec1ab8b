"""Pixel-gain estimators for displacement readout.

A pixel gain distribution g(rho) turns camera frames into the linear motion
signal

    xhat(t) = sum_rho g(rho) * (n_t(rho) - n_ref(rho)),

and realizes the unit-norm detection mode v_g = g|u0| / ||g|u0|||.  The
projection <v_g, v> onto the derivative mode sets how much of the available
displacement information the gain captures: split (+/-1 half planes),
tracking (position weights, the barycenter readout) and the optimal gain
v/|u0| are the three members studied here.  The module also provides the
modulation depth and SNR bookkeeping, the Fisher information / CRB oracle,
direction fitting from 2D tracking traces, and the balanced-mask audit that
certifies shot-noise-limited operation.

Lengths are in the same units as the grids (waist units by default).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detection import Frame
from .errors import ConfigError, DegeneracyError
from .grid_optics import ComplexField, PixelGrid, RealField, energy, inner

__all__ = [
    "GainMap",
    "EstimatorReport",
    "NoiseAudit",
    "motion_signal",
    "split_gain",
    "tracking_gain",
    "optimal_gain",
    "normalize_gain",
    "detection_mode",
    "projection",
    "modulation_depth",
    "snr",
    "quantum_limit",
    "fisher_info",
    "crb",
    "barycenter",
    "motion_direction",
    "intensity_series",
    "balanced_masks",
    "default_audit_widths",
    "noise_audit",
    "gain_to_csv",
    "gain_from_csv",
    "audit_to_csv",
]


def _unit(direction: Sequence[float]) -> tuple[float, float]:
    dx, dy = float(direction[0]), float(direction[1])
    n = np.hypot(dx, dy)
    if n == 0:
        raise ConfigError("direction must be a nonzero 2-vector")
    return dx / n, dy / n


@dataclass(frozen=True)
class GainMap:
    """Per-pixel gain distribution g(rho)."""

    grid: PixelGrid
    g: np.ndarray
    label: str = ""

    def __post_init__(self):
        g = np.ascontiguousarray(self.g, dtype=np.float64)
        if g.shape != self.grid.shape:
            raise ConfigError(
                f"gain shape {g.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise ConfigError("gain values must be finite")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)


@dataclass(frozen=True)
class EstimatorReport:
    """Scalar summary of one gain evaluated on one acquisition."""

    label: str
    mu: float
    dmu2: float
    snr: float
    projection: float
    a_eps: float
    N: float
    notes: str = ""

    def __post_init__(self):
        if self.snr < 0:
            raise ConfigError("snr must be non-negative")
        if abs(self.projection) > 1 + 1e-9:
            raise ConfigError("projection outside [-1, 1]")

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "mu": self.mu,
            "dmu2": self.dmu2,
            "snr": self.snr,
            "projection": self.projection,
            "a_eps": self.a_eps,
            "N": self.N,
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# motion signals


def _counts_matrix(frames: Sequence[Frame], grid: PixelGrid) -> np.ndarray:
    if len(frames) == 0:
        raise ConfigError("no frames")
    for fr in frames:
        if fr.grid != grid:
            raise ConfigError("frame grid does not match the gain grid")
    out = np.empty((len(frames), grid.ny * grid.nx))
    for j, fr in enumerate(frames):
        out[j] = fr.counts.ravel()
    return out


def motion_signal(
    frames: Sequence[Frame], reference: RealField, gain: GainMap
) -> np.ndarray:
    """Linear motion signal xhat(t_j) = sum g * (counts_j - reference)."""
    if gain.grid != reference.grid:
        raise ConfigError("gain and reference grids differ")
    counts = _counts_matrix(frames, gain.grid)
    return (counts - reference.values.ravel()) @ gain.g.ravel()


def split_gain(grid: PixelGrid, direction: Sequence[float]) -> GainMap:
    """Half-plane +/-1 gain: -1 where rho . dir > 0, +1 otherwise, 0 on the
    dividing line (|rho . dir| < 1e-12)."""
    ex, ey = _unit(direction)
    xx, yy = grid.mesh()
    s = xx * ex + yy * ey
    g = np.where(s > 0, -1.0, 1.0)
    g[np.abs(s) < 1e-12] = 0.0
    return GainMap(grid, g, "split")


def tracking_gain(grid: PixelGrid, direction: Sequence[float]) -> GainMap:
    """Position-weight gain g = rho . dir; the barycenter readout."""
    ex, ey = _unit(direction)
    xx, yy = grid.mesh()
    return GainMap(grid, xx * ex + yy * ey, "tracking")


def detection_mode(gain: GainMap, u0_amp: RealField) -> RealField:
    """Unit-norm mode g|u0| realized by the gain on the rest field."""
    if gain.grid != u0_amp.grid:
        raise ConfigError("gain and field grids differ")
    v = RealField(gain.grid, gain.g * u0_amp.values)
    e = energy(v)
    if e <= 0:
        raise DegeneracyError("gain collects no light: detection mode is null")
    return RealField(gain.grid, v.values / np.sqrt(e))


def projection(gain: GainMap, u0_amp: RealField, v: RealField) -> float:
    """Signed overlap <v_g, v> of the gain's detection mode with a mode v."""
    return inner(detection_mode(gain, u0_amp), v)


def normalize_gain(gain: GainMap, u0_amp: RealField) -> GainMap:
    """Rescale so the attached detection mode g|u0| has unit norm."""
    if gain.grid != u0_amp.grid:
        raise ConfigError("gain and field grids differ")
    e = energy(RealField(gain.grid, gain.g * u0_amp.values))
    if e <= 0:
        raise DegeneracyError("gain collects no light: cannot normalize")
    return GainMap(gain.grid, gain.g / np.sqrt(e), gain.label)


def optimal_gain(u0_amp: RealField, v: RealField, floor: float = 1e-3) -> GainMap:
    """Gain g = v/|u0| on pixels with |u0| >= floor * max|u0|, zero below.

    The floor keeps dark pixels from amplifying noise without bound; the
    result is rescaled so its detection mode has unit norm, which makes the
    projection onto v exactly the retained fraction of the mode."""
    if u0_amp.grid != v.grid:
        raise ConfigError("field grids differ")
    if not 0 <= floor <= 1:
        raise ConfigError("floor must lie in [0, 1]")
    m = u0_amp.values
    peak = m.max()
    if peak <= 0:
        raise DegeneracyError("rest field carries no light")
    support = m >= floor * peak if floor > 0 else m > 0
    g = np.zeros(m.shape)
    g[support] = v.values[support] / m[support]
    mode = g * m
    e = float(np.sum(mode**2)) * u0_amp.grid.pitch**2
    if e <= 0:
        raise DegeneracyError(
            "derivative mode vanishes on the lit support: optimal gain undefined"
        )
    return GainMap(u0_amp.grid, g / np.sqrt(e), "optimal")


# ---------------------------------------------------------------------------
# contrast, SNR, information


def modulation_depth(series: np.ndarray, n_photons: float) -> float:
    """mu = sqrt(2) * std(series) / N."""
    s = np.asarray(series, dtype=np.float64)
    if s.size == 0:
        raise ConfigError("empty series")
    if not n_photons > 0:
        raise ConfigError("photon number must be positive")
    return float(np.sqrt(2.0) * s.std() / n_photons)


def snr(mu_signal: float, noise_series: np.ndarray, n_photons: float) -> float:
    """SNR = mu^2 / (2 dmu^2), with dmu^2 measured on a motion-free series."""
    dmu = modulation_depth(noise_series, n_photons)
    if dmu == 0:
        raise DegeneracyError("noiseless SNR undefined")
    return float(mu_signal**2 / (2.0 * dmu**2))


def quantum_limit(n_photons: float) -> float:
    """Coherent-state ceiling N/2 for the SNR of any linear-gain estimator."""
    if not n_photons > 0:
        raise ConfigError("photon number must be positive")
    return n_photons / 2.0


def fisher_info(
    model, eps, n_photons: float, h: float = 1e-3, floor: float = 1e-12
) -> float:
    """Poisson-pixel Fisher information F = sum (dI/dxi)^2 / I at xi = 0.

    I are the expected per-pixel counts for N photons; the derivative is a
    central difference with step h.  Pixels below floor * max(I) are
    excluded, which for a smooth mode changes F by a negligible amount while
    avoiding 0/0 at truly dark pixels."""
    if not n_photons > 0:
        raise ConfigError("photon number must be positive")
    u0 = model.transmit(eps, 0.0)
    p2 = u0.grid.pitch**2
    i0 = n_photons * u0.intensity * p2
    ip = n_photons * model.transmit(eps, +h).intensity * p2
    im = n_photons * model.transmit(eps, -h).intensity * p2
    di = (ip - im) / (2.0 * h)
    mask = i0 > floor * i0.max()
    f = float(np.sum(di[mask] ** 2 / i0[mask]))
    if f <= 0:
        raise DegeneracyError("insensitive configuration: zero Fisher information")
    return f


def crb(model, eps, n_photons: float, h: float = 1e-3, floor: float = 1e-12) -> float:
    """Cramer-Rao variance bound 1/F for a single frame."""
    return 1.0 / fisher_info(model, eps, n_photons, h=h, floor=floor)


# ---------------------------------------------------------------------------
# geometry


def barycenter(obj) -> np.ndarray:
    """Intensity barycenter sum(rho I) / sum(I) as an (x, y) pair."""
    if isinstance(obj, Frame):
        grid, weights = obj.grid, np.asarray(obj.counts, dtype=np.float64)
    elif isinstance(obj, ComplexField):
        grid, weights = obj.grid, obj.intensity
    elif isinstance(obj, RealField):
        grid, weights = obj.grid, obj.values
    else:
        raise ConfigError("barycenter takes a Frame or a field")
    total = weights.sum()
    if total <= 0:
        raise DegeneracyError("no intensity: barycenter undefined")
    xx, yy = grid.mesh()
    return np.array([np.sum(xx * weights), np.sum(yy * weights)]) / total


def motion_direction(frames: Sequence[Frame], reference: RealField) -> np.ndarray:
    """Principal axis of the (tracking-x, tracking-y) signal cloud.

    Returns a unit 2-vector, sign-fixed to the positive-x half plane."""
    grid = reference.grid
    sx = motion_signal(frames, reference, tracking_gain(grid, (1.0, 0.0)))
    sy = motion_signal(frames, reference, tracking_gain(grid, (0.0, 1.0)))
    cov = np.cov(np.stack([sx, sy]))
    evals, evecs = np.linalg.eigh(cov)
    lo, hi = max(float(evals[0]), 0.0), float(evals[1])
    if hi <= 0 or (lo > 0 and hi / lo < 1.2):
        raise DegeneracyError("direction ill-defined: signal cloud is isotropic")
    d = evecs[:, 1]
    if d[0] < 0 or (d[0] == 0 and d[1] < 0):
        d = -d
    return d


def intensity_series(frames: Sequence[Frame]) -> tuple[np.ndarray, float]:
    """Total counts per frame normalized by their mean, and the modulation
    depth of that normalized series."""
    if len(frames) == 0:
        raise ConfigError("no frames")
    totals = np.array([float(fr.counts.sum()) for fr in frames])
    mean = totals.mean()
    if mean <= 0:
        raise DegeneracyError("frames carry no light")
    series = totals / mean
    return series, modulation_depth(series, 1.0)


# ---------------------------------------------------------------------------
# balanced-mask shot-noise audit


def balanced_masks(
    grid: PixelGrid, direction: Sequence[float], widths: Sequence[float]
) -> list[GainMap]:
    """Split gains with a centered band of width Delta (along dir) zeroed."""
    ex, ey = _unit(direction)
    xx, yy = grid.mesh()
    s = xx * ex + yy * ey
    base = split_gain(grid, direction).g
    masks = []
    for w in widths:
        if not w >= 0:
            raise ConfigError("mask width must be non-negative")
        g = np.where(np.abs(s) <= w / 2.0, 0.0, base)
        if not np.any(g):
            raise DegeneracyError(
                f"band of width {w:g} discounts every pixel: empty mask"
            )
        masks.append(GainMap(grid, g, f"balanced {w:g}"))
    return masks


def default_audit_widths(grid: PixelGrid) -> np.ndarray:
    """Band widths in length units: about twelve integer pixel counts from
    1 px up to 60 px scaled by the grid size (60 at 64 pixels across)."""
    n = min(grid.nx, grid.ny)
    top = max(1, int(round(60 * n / 64)))
    px = np.unique(np.round(np.linspace(1, top, 12)).astype(int))
    return px * grid.pitch


@dataclass(frozen=True)
class NoiseAudit:
    """Per-mask audit pairs and the origin-constrained linear fit."""

    mean_sums: np.ndarray  # <N+> per mask
    var_diffs: np.ndarray  # Var(N-) per mask
    slope: float


def noise_audit(
    reference_frames: Sequence[Frame], masks: Sequence[GainMap]
) -> NoiseAudit:
    """Variance of the differential sums against the mean photon sums.

    Under pure shot noise Var(sum g n) = sum |g| mean(n) for g in {-1, 0, 1},
    so the points fall on the unit line through the origin; the fitted slope
    is the Poisson-limit certificate."""
    if len(masks) == 0:
        raise ConfigError("no masks")
    grid = masks[0].grid
    counts = _counts_matrix(reference_frames, grid)
    mean_sums = np.empty(len(masks))
    var_diffs = np.empty(len(masks))
    for i, mask in enumerate(masks):
        if mask.grid != grid:
            raise ConfigError("masks must share one grid")
        g = mask.g.ravel()
        var_diffs[i] = np.var(counts @ g, ddof=1)
        mean_sums[i] = np.mean(counts @ np.abs(g))
    denom = float(np.sum(mean_sums**2))
    if denom == 0:
        raise DegeneracyError("audit frames carry no light")
    slope = float(np.sum(mean_sums * var_diffs) / denom)
    return NoiseAudit(mean_sums, var_diffs, slope)


# ---------------------------------------------------------------------------
# serialization


def gain_to_csv(gain: GainMap, path) -> None:
    """One pixel per row, columns ix, iy, g."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ix", "iy", "g"])
        for j in range(gain.grid.ny):
            for i in range(gain.grid.nx):
                w.writerow([i, j, repr(float(gain.g[j, i]))])


def gain_from_csv(path, grid: PixelGrid, label: str = "") -> GainMap:
    g = np.zeros(grid.shape)
    seen = 0
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:3] != ["ix", "iy", "g"]:
            raise ConfigError("gain CSV must have columns ix, iy, g")
        for row in rd:
            g[int(row[1]), int(row[0])] = float(row[2])
            seen += 1
    if seen != grid.nx * grid.ny:
        raise ConfigError("gain CSV does not cover the full grid")
    return GainMap(grid, g, label)


def audit_to_csv(widths_px: Sequence[float], audit: NoiseAudit, path) -> None:
    """Audit pairs as delta_px, mean_sum, var_diff rows."""
    if len(widths_px) != len(audit.mean_sums):
        raise ConfigError("one width per audit point required")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta_px", "mean_sum", "var_diff"])
        for d, m, v in zip(widths_px, audit.mean_sums, audit.var_diffs):
            w.writerow([repr(float(d)), repr(float(m)), repr(float(v))])
