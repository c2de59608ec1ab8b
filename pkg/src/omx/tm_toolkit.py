"""Transmission-matrix calibration, speckle metrology and focusing.

Calibration drives the control segments with Hadamard patterns against a
co-propagating internal reference and phase-steps the two arms.  With
intensities I(theta) = |A + e^(i theta) B|^2 recorded at K evenly spaced
steps, the interferometric cross term is

    conj(A) * B = (1/K) * sum_k I(theta_k) exp(-i theta_k),

which for K = 4 reduces to (I(0) - I(pi))/4 + i (I(3pi/2) - I(pi/2))/4.
Rows of the recovered matrix therefore carry an extra factor conj(A_m),
the conjugate reference field at each output pixel.  That factor cancels
in phase conjugation onto a single output mode, so the observed matrix
focuses as well as the true one.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import hadamard as _hadamard

from .errors import ConfigError, DegeneracyError
from .grid_optics import ComplexField, PixelGrid, RealField

_TMX_MAGIC = b"TMX1"


@dataclass(frozen=True)
class TransmissionMatrix:
    """Complex linear map from control segments to camera pixels."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        if m.ndim != 2:
            raise ConfigError("transmission matrix must be 2-dimensional")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_out(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_in(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class CalibrationReport:
    n_out: int
    n_in: int
    phase_steps: int
    basis: str
    reference_floor: float
    n_dark_rows: int
    row_correlation_median: float | None = None
    row_correlation_min: float | None = None


def hadamard_patterns(n_in: int) -> np.ndarray:
    """Walsh-Hadamard probe set: n_in rows of +-1, encoded as phases {0, pi}."""
    if n_in < 1 or (n_in & (n_in - 1)) != 0:
        raise ConfigError("Hadamard patterns need a power-of-two segment count")
    return _hadamard(n_in).astype(np.complex128)


def measure_tm(
    system: Callable[[np.ndarray], np.ndarray],
    n_in: int,
    phase_steps: int = 4,
    basis: str = "hadamard",
    dark_floor: float = 1e-6,
    ground_truth: np.ndarray | None = None,
) -> tuple[TransmissionMatrix, CalibrationReport]:
    """Intensity-only calibration of a linear system at rest.

    system maps a stack of control patterns, shape (K, n_in), to the
    corresponding camera intensity frames, shape (K, n_pix).  Probes are
    (r + e^(i theta) b) / sqrt(2) with r the all-ones internal reference
    and b a basis vector, so both arms carry equal power.  Rows whose
    reference intensity falls below dark_floor times the maximum are
    flagged and zeroed: their phase against the reference is undefined.
    """
    if phase_steps < 3:
        raise ConfigError("phase stepping needs at least 3 steps")
    if basis == "hadamard":
        probes = hadamard_patterns(n_in)
    elif basis == "segment":
        probes = np.eye(n_in, dtype=np.complex128)
    else:
        raise ConfigError(f"unknown calibration basis {basis!r}")

    ref = np.ones(n_in, dtype=np.complex128)
    thetas = 2 * np.pi * np.arange(phase_steps) / phase_steps
    # one query per phase step, each a full basis sweep
    responses = None
    for theta in thetas:
        batch = (ref[None, :] + np.exp(1j * theta) * probes) / np.sqrt(2.0)
        I = np.asarray(system(batch), dtype=float)
        if I.ndim != 2 or I.shape[0] != n_in:
            raise ConfigError("system must return one intensity row per pattern")
        term = I * np.exp(-1j * theta)
        responses = term if responses is None else responses + term
    responses /= phase_steps  # (n_in, n_pix): conj(A_m) * (T b_k)_m / 2

    if basis == "hadamard":
        H = probes.real  # symmetric, H @ H = n_in * I
        observed = (responses.T @ H) / n_in
    else:
        observed = responses.T

    ref_I = np.asarray(system((ref / np.sqrt(2.0))[None, :]), dtype=float)[0]
    floor = dark_floor * float(ref_I.max())
    dark = ref_I < floor
    observed = np.where(dark[:, None], 0.0, observed)

    corr_median = corr_min = None
    if ground_truth is not None:
        gt = np.asarray(ground_truth, dtype=np.complex128)
        if gt.shape != observed.shape:
            raise ConfigError("ground truth shape does not match the observed TM")
        lit = ~dark
        num = np.abs(np.sum(np.conj(observed[lit]) * gt[lit], axis=1))
        den = np.linalg.norm(observed[lit], axis=1) * np.linalg.norm(gt[lit], axis=1)
        corr = num / np.where(den > 0, den, np.inf)
        corr_median = float(np.median(corr))
        corr_min = float(corr.min())

    report = CalibrationReport(
        n_out=observed.shape[0],
        n_in=n_in,
        phase_steps=phase_steps,
        basis=basis,
        reference_floor=floor,
        n_dark_rows=int(dark.sum()),
        row_correlation_median=corr_median,
        row_correlation_min=corr_min,
    )
    return TransmissionMatrix(observed), report


def _half_crossing(profile: np.ndarray) -> float:
    """Sub-pixel distance where a decaying profile falls to half its peak."""
    c0 = profile[0]
    half = c0 / 2.0
    below = np.nonzero(profile < half)[0]
    if below.size == 0:
        raise DegeneracyError("no autocorrelation peak: profile never falls to half")
    k = int(below[0])
    if k == 0:
        raise DegeneracyError("no autocorrelation peak: degenerate center")
    # quadratic through the three samples around the crossing
    i0 = max(0, min(k - 1, len(profile) - 3))
    xs = np.arange(i0, i0 + 3, dtype=float)
    ys = profile[i0 : i0 + 3]
    a, b, c = np.polyfit(xs, ys, 2)
    disc = b * b - 4 * a * (c - half)
    if a != 0 and disc >= 0:
        roots = [(-b + s * np.sqrt(disc)) / (2 * a) for s in (+1.0, -1.0)]
        valid = [r for r in roots if k - 1 <= r <= k]
        if valid:
            return float(valid[0])
    # fallback: linear between the bracketing samples
    p0, p1 = profile[k - 1], profile[k]
    return float(k - 1 + (p0 - half) / (p0 - p1))


def grain_size(intensity: RealField) -> float:
    """Half-width at half-maximum of the central intensity correlation peak.

    The 2D autocorrelation of the mean-subtracted intensity is evaluated
    by FFT; the half-maximum point is located along each axis with
    sub-pixel interpolation and the two widths combine as a geometric
    mean.  Returns a length in grid units.
    """
    I = intensity.values
    dI = I - I.mean()
    if np.max(np.abs(dI)) <= 0:
        raise DegeneracyError("no autocorrelation peak: flat intensity")
    F = np.fft.fft2(dI)
    C = np.fft.ifft2(np.abs(F) ** 2).real
    if C[0, 0] <= 0:
        raise DegeneracyError("no autocorrelation peak: zero variance")
    nx = intensity.grid.nx
    ny = intensity.grid.ny
    px = _half_crossing(C[0, : nx // 2])
    py = _half_crossing(C[: ny // 2, 0])
    return float(np.sqrt(px * py) * intensity.grid.pitch)


def target_spot(grid: PixelGrid, center: tuple[float, float], radius: float) -> ComplexField:
    """Unit-energy Gaussian focus target with 1/e amplitude radius."""
    if not radius > 0:
        raise ConfigError("target radius must be positive")
    X, Y = grid.mesh()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    amp = np.exp(-r2 / radius**2)
    n = np.sqrt(np.sum(amp**2) * grid.pitch**2)
    if n <= 0:
        raise DegeneracyError("target spot has no support on the grid")
    return ComplexField(grid, amp / n)


def phase_conjugate(tm: TransmissionMatrix, target, phase_only: bool = True) -> np.ndarray:
    """Control pattern focusing the system onto a target output mode.

    Computes eps = T^dagger u_target; with phase_only the segment
    amplitudes are flattened to pure phases, the hardware-friendly mode.
    The pattern is normalized to unit total input energy.
    """
    if isinstance(target, ComplexField):
        u = target.amp.ravel()
    else:
        u = np.asarray(target, dtype=np.complex128).ravel()
    if u.shape[0] != tm.n_out:
        raise ConfigError("target length does not match the matrix output count")
    eps = tm.matrix.conj().T @ u
    norm = np.linalg.norm(eps)
    if norm <= 0:
        raise DegeneracyError("phase conjugation produced a null pattern")
    if phase_only:
        eps = np.exp(1j * np.angle(eps))
    return eps / np.linalg.norm(eps)


def enhancement(
    intensity: RealField,
    reference: RealField,
    center: tuple[float, float],
    radius: float,
) -> float:
    """Focus gain: intensity at the pixel nearest center, divided by the
    mean of the reference frame over a disk of the given radius there."""
    if intensity.grid != reference.grid:
        raise ConfigError("enhancement requires frames on the same grid")
    g = intensity.grid
    i = int(np.argmin(np.abs(g.x - center[0])))
    j = int(np.argmin(np.abs(g.y - center[1])))
    X, Y = g.mesh()
    disk = (X - g.x[i]) ** 2 + (Y - g.y[j]) ** 2 <= radius**2
    if not disk.any():
        disk = np.zeros(g.shape, dtype=bool)
        disk[j, i] = True
    base = float(reference.values[disk].mean())
    if base <= 0:
        raise DegeneracyError("reference neighborhood carries no intensity")
    return float(intensity.values[j, i] / base)


# ---------------------------------------------------------------------------
# serialization

def save_tmx1(tm: TransmissionMatrix, path) -> None:
    """Binary matrix format: magic 'TMX1', u32 n_out, u32 n_in, then
    interleaved little-endian f64 (re, im), row-major."""
    with open(path, "wb") as fh:
        fh.write(_TMX_MAGIC)
        fh.write(struct.pack("<II", tm.n_out, tm.n_in))
        data = np.empty((tm.n_out, tm.n_in, 2), dtype="<f8")
        data[..., 0] = tm.matrix.real
        data[..., 1] = tm.matrix.imag
        fh.write(data.tobytes())


def load_tmx1(path) -> TransmissionMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _TMX_MAGIC:
            raise ConfigError(f"not a TMX1 file: bad magic {magic!r}")
        n_out, n_in = struct.unpack("<II", fh.read(8))
        raw = fh.read(n_out * n_in * 16)
        if len(raw) != n_out * n_in * 16:
            raise ConfigError("truncated TMX1 file")
        data = np.frombuffer(raw, dtype="<f8").reshape(n_out, n_in, 2)
    return TransmissionMatrix(data[..., 0] + 1j * data[..., 1])


def tm_to_csv(tm: TransmissionMatrix, path) -> None:
    """Plain-text mirror of TMX1: columns row, col, re, im."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "re", "im"])
        m = tm.matrix
        for r in range(tm.n_out):
            for c in range(tm.n_in):
                w.writerow([r, c, repr(float(m[r, c].real)), repr(float(m[r, c].imag))])
