"""Photon-counting camera model and acquisition sequences.

Frames are independent Poisson draws around the camera-plane expectation

    I(rho) = photons * |u(rho, xi)|^2 * pitch^2,

so a unit-energy field carries `photons` expected counts per frame.  The
displacement follows a sinusoidal drive xi(t) = xi0 sin(omega_m t + phase0)
sampled at the frame rate.  An optional multiplicative common-mode factor
(1 + eta(t)), with eta an AR(1) series of chosen RMS and correlation time,
stands in for classical laser intensity noise.

Randomness is organized in named substreams keyed by (master seed, role,
frame index), which makes every frame reproducible independently of how
many frames are drawn around it.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid_optics import PixelGrid, RealField

_FRM_MAGIC = b"FRM1"

_ROLE_FRAME = 1
_ROLE_CLASSICAL = 2
_ROLE_REFERENCE = 3


def substream(seed: int, role: int, index: int = 0) -> np.random.Generator:
    """Deterministic, order-independent child generator."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), role, index)))


@dataclass(frozen=True)
class DriveConfig:
    """Sinusoidal displacement drive, lengths in waist units."""

    omega_m: float = 2 * np.pi * 133.0  # rad/s
    xi0: float = 0.05
    frame_rate: float = 2660.0  # frames/s
    n_frames: int = 1000
    phase0: float = 0.0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("need at least one frame")
        if self.xi0 < 0:
            raise ConfigError("drive amplitude must be non-negative")
        if not self.frame_rate > 0:
            raise ConfigError("frame rate must be positive")
        if self.frame_rate <= self.omega_m / np.pi:
            raise ConfigError(
                "frame rate under twice the drive frequency: undersampled motion"
            )

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.frame_rate

    def xi_series(self) -> np.ndarray:
        return self.xi0 * np.sin(self.omega_m * self.times + self.phase0)


@dataclass(frozen=True)
class NoiseConfig:
    """Shot-noise switch plus common-mode classical intensity noise."""

    shot: bool = True
    classical_rms: float = 0.0
    classical_tau: float = 0.0  # seconds; 0 gives a white series

    def __post_init__(self):
        if self.classical_rms < 0 or self.classical_tau < 0:
            raise ConfigError("noise parameters must be non-negative")


@dataclass(frozen=True)
class Frame:
    """One acquired camera frame with its timestamp and true displacement."""

    grid: PixelGrid
    counts: np.ndarray
    t: float
    xi_true: float | None = None

    def __post_init__(self):
        c = np.ascontiguousarray(self.counts)
        if c.shape != self.grid.shape:
            raise ConfigError("frame shape does not match its grid")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)


def expected_intensity(model, eps, xi: float, photons: float) -> RealField:
    """Expected counts per pixel for one transmitted configuration."""
    if not photons > 0:
        raise ConfigError("photon number must be positive")
    u = model.transmit(eps, xi)
    return RealField(u.grid, photons * u.intensity * u.grid.pitch**2)


def sample_frame(expected: RealField, rng: np.random.Generator) -> np.ndarray:
    """Independent Poisson draw per pixel; returns uint32 counts."""
    lam = expected.values
    if np.any(lam < 0):
        raise ConfigError("negative expected intensity")
    return rng.poisson(lam).astype(np.uint32)

def classical_series(noise: NoiseConfig, drive: DriveConfig, seed: int) -> np.ndarray:
    """AR(1) common-mode relative fluctuation eta(t), stationary start."""
    n = drive.n_frames
    if noise.classical_rms == 0:
        return np.zeros(n)
    rng = substream(seed, _ROLE_CLASSICAL)
    dt = 1.0 / drive.frame_rate
    phi = np.exp(-dt / noise.classical_tau) if noise.classical_tau > 0 else 0.0
    eta = np.empty(n)
    eta[0] = noise.classical_rms * rng.standard_normal()
    sig = noise.classical_rms * np.sqrt(1.0 - phi * phi)
    innov = rng.standard_normal(n - 1) if n > 1 else np.empty(0)
    for j in range(1, n):
        eta[j] = phi * eta[j - 1] + sig * innov[j - 1]
    return eta


def _expected_stack(model, eps, xis: np.ndarray, photons: float) -> np.ndarray:
    """Per-frame expected counts, using the model's batch path when offered."""
    batch = getattr(model, "transmit_batch", None)
    if batch is not None and not hasattr(eps, "grid"):
        fields = batch(eps, xis)
        grid = model.camera_grid
        return photons * np.abs(fields) ** 2 * grid.pitch**2, grid
    first = model.transmit(eps, float(xis[0]))
    out = np.empty((len(xis), *first.grid.shape))
    out[0] = first.intensity
    for j in range(1, len(xis)):
        out[j] = model.transmit(eps, float(xis[j])).intensity
    return photons * out * first.grid.pitch**2, first.grid


def record_sequence(
    model,
    eps,
    drive: DriveConfig,
    noise: NoiseConfig,
    photons: float,
    seed: int,
) -> list[Frame]:
    """Acquire a full driven sequence of camera frames."""
    if not photons > 0:
        raise ConfigError("photon number must be positive")
    xis = drive.xi_series()
    ts = drive.times
    lam, grid = _expected_stack(model, eps, xis, photons)
    eta = classical_series(noise, drive, seed)
    factors = np.clip(1.0 + eta, 0.1, None)
    frames = []
    for j in range(drive.n_frames):
        lam_j = factors[j] * lam[j]
        if noise.shot:
            counts = substream(seed, _ROLE_FRAME, j).poisson(lam_j).astype(np.uint32)
        else:
            counts = lam_j
        frames.append(Frame(grid, counts, float(ts[j]), float(xis[j])))
    return frames


def reference_frame(
    model,
    eps,
    photons: float,
    m_frames: int = 200,
    seed: int = 0,
    noise: NoiseConfig = NoiseConfig(),
) -> RealField:
    """Motion-free reference: M-frame average at rest, or the exact
    expectation when m_frames = 0."""
    expected = expected_intensity(model, eps, 0.0, photons)
    if m_frames == 0:
        return expected
    if m_frames < 0:
        raise ConfigError("m_frames must be >= 0")
    drive = DriveConfig(xi0=0.0, n_frames=m_frames)
    eta = classical_series(noise, drive, seed)
    factors = np.clip(1.0 + eta, 0.1, None)
    acc = np.zeros(expected.grid.shape)
    for j in range(m_frames):
        lam_j = factors[j] * expected.values
        if noise.shot:
            acc += substream(seed, _ROLE_REFERENCE, j).poisson(lam_j)
        else:
            acc += lam_j
    return RealField(expected.grid, acc / m_frames)


# ---------------------------------------------------------------------------
# serialization

def save_frames_frm1(frames: list[Frame], path, sidecar_path=None) -> None:
    """Binary sequence format: magic 'FRM1', u32 n_frames, u32 nx, u32 ny,
    then u32 counts row-major per frame.  The per-frame timestamps and true
    displacements go to a sidecar CSV with columns frame, t, xi_true."""
    if not frames:
        raise ConfigError("refusing to write an empty sequence")
    g = frames[0].grid
    with open(path, "wb") as fh:
        fh.write(_FRM_MAGIC)
        fh.write(struct.pack("<III", len(frames), g.nx, g.ny))
        for fr in frames:
            if fr.grid != g:
                raise ConfigError("frames in one sequence must share a grid")
            counts = np.rint(fr.counts).astype("<u4")
            fh.write(counts.tobytes())
    if sidecar_path is not None:
        with open(sidecar_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "t", "xi_true"])
            for j, fr in enumerate(frames):
                xi = "" if fr.xi_true is None else repr(float(fr.xi_true))
                w.writerow([j, repr(float(fr.t)), xi])


def load_frames_frm1(path, pitch: float = 1.0, sidecar_path=None) -> list[Frame]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FRM_MAGIC:
            raise ConfigError(f"not a FRM1 file: bad magic {magic!r}")
        n_frames, nx, ny = struct.unpack("<III", fh.read(12))
        grid = PixelGrid(nx, ny, pitch)
        raw = fh.read(n_frames * nx * ny * 4)
        if len(raw) != n_frames * nx * ny * 4:
            raise ConfigError("truncated FRM1 file")
        data = np.frombuffer(raw, dtype="<u4").reshape(n_frames, ny, nx)
    ts = np.zeros(n_frames)
    xis: list[float | None] = [None] * n_frames
    if sidecar_path is not None:
        with open(sidecar_path, newline="") as fh:
            rd = csv.reader(fh)
            next(rd)
            for row in rd:
                j = int(row[0])
                ts[j] = float(row[1])
                xis[j] = float(row[2]) if row[2] != "" else None
    return [
        Frame(grid, data[j].astype(np.uint32), float(ts[j]), xis[j])
        for j in range(n_frames)
    ]


def frames_to_csv(frames: list[Frame], path) -> None:
    """Sparse text mirror of FRM1: frame, ix, iy, count with zeros omitted."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "ix", "iy", "count"])
        for n, fr in enumerate(frames):
            jj, ii = np.nonzero(fr.counts)
            for j, i in zip(jj, ii):
                w.writerow([n, int(i), int(j), int(round(float(fr.counts[j, i])))])
