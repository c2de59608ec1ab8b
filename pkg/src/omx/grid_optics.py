"""Pixel grids, Gaussian beams and displacement response modes.

Lengths are expressed in units of the beam waist w0 throughout, so the
default beam has w0 = 1.  A field is a complex amplitude sampled at pixel
centers; pixel (i, j) sits at

    x_i = (i - (nx - 1) / 2) * pitch,   y_j = (j - (ny - 1) / 2) * pitch,

which centers the grid on the optical axis.  Arrays are indexed [j, i]
(row = y, column = x).  Every generated field is renormalized to unit
discrete energy, sum(|amp|^2) * pitch^2 = 1, so photon numbers can be
attached later as a single multiplicative factor.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegeneracyError

_FLD_MAGIC = b"FLD1"


@dataclass(frozen=True)
class PixelGrid:
    """Uniform centered pixel grid.

    nx, ny : pixel counts along x and y
    pitch  : pixel spacing (waist units)
    """

    nx: int
    ny: int
    pitch: float

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ConfigError("grid needs at least 2 pixels per axis")
        if not self.pitch > 0:
            raise ConfigError("grid pitch must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) - (self.nx - 1) / 2.0) * self.pitch

    @property
    def y(self) -> np.ndarray:
        return (np.arange(self.ny) - (self.ny - 1) / 2.0) * self.pitch

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays (X, Y), each of shape (ny, nx)."""
        return np.meshgrid(self.x, self.y)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.nx * self.pitch, self.ny * self.pitch)


def _as_readonly(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out is arr:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ComplexField:
    """Complex amplitude on a grid; immutable after construction."""

    grid: PixelGrid
    amp: np.ndarray

    def __post_init__(self):
        amp = _as_readonly(self.amp, np.complex128)
        if amp.shape != self.grid.shape:
            raise ConfigError(
                f"field shape {amp.shape} does not match grid {self.grid.shape}"
            )
        object.__setattr__(self, "amp", amp)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amp) ** 2

    def modulus(self) -> "RealField":
        return RealField(self.grid, np.abs(self.amp))


@dataclass(frozen=True)
class RealField:
    """Real-valued map on a grid (modulus, mode, intensity, gain)."""

    grid: PixelGrid
    values: np.ndarray

    def __post_init__(self):
        v = _as_readonly(self.values, np.float64)
        if v.shape != self.grid.shape:
            raise ConfigError(
                f"field shape {v.shape} does not match grid {self.grid.shape}"
            )
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class BeamParams:
    """TEM00 beam parameters: waist w0, wavenumber k, plane position z.

    Derived quantities follow the standard Gaussian beam formulas,
        z_R    = k w0^2 / 2
        w(z)   = w0 sqrt(1 + (z/z_R)^2)
        1/R(z) = z / (z^2 + z_R^2)
        phi_G  = arctan(z / z_R)
    with the inverse radius kept finite (0 at focus).
    """

    w0: float = 1.0
    k: float = 2 * np.pi / 6.328e-4  # HeNe-like: waist 1 mm, wavelength 632.8 nm
    z: float = 0.0

    def __post_init__(self):
        if not (self.w0 > 0 and self.k > 0):
            raise ConfigError("w0 and k must be positive")

    @property
    def rayleigh_range(self) -> float:
        return self.k * self.w0**2 / 2.0

    @property
    def width(self) -> float:
        """Beam radius w(z)."""
        zr = self.rayleigh_range
        return self.w0 * np.sqrt(1.0 + (self.z / zr) ** 2)

    @property
    def inv_radius(self) -> float:
        """Inverse curvature radius 1/R(z); zero at the focus."""
        zr = self.rayleigh_range
        return self.z / (self.z**2 + zr**2)

    @property
    def gouy(self) -> float:
        return float(np.arctan2(self.z, self.rayleigh_range))


def energy(field: ComplexField | RealField) -> float:
    """Discrete energy sum(|amp|^2) * pitch^2."""
    arr = field.amp if isinstance(field, ComplexField) else field.values
    return float(np.sum(np.abs(arr) ** 2)) * field.grid.pitch**2


def inner(a: ComplexField | RealField, b: ComplexField | RealField):
    """Discrete inner product <a, b> = sum(conj(a) * b) * pitch^2.

    Returns a float when both arguments are real fields, complex otherwise.
    """
    if a.grid != b.grid:
        raise ConfigError("inner product requires matching grids")
    av = a.amp if isinstance(a, ComplexField) else a.values
    bv = b.amp if isinstance(b, ComplexField) else b.values
    s = np.sum(np.conj(av) * bv) * a.grid.pitch**2
    if isinstance(a, RealField) and isinstance(b, RealField):
        return float(s.real)
    return complex(s)


def normalized(field: ComplexField | RealField):
    """Rescale to unit energy."""
    e = energy(field)
    if e <= 0 or not np.isfinite(e):
        raise DegeneracyError("cannot normalize a zero or non-finite field")
    s = 1.0 / np.sqrt(e)
    if isinstance(field, ComplexField):
        return ComplexField(field.grid, field.amp * s)
    return RealField(field.grid, field.values * s)


def tem00(params: BeamParams, grid: PixelGrid) -> ComplexField:
    """Fundamental Gaussian mode at plane z, unit discrete energy.

    amp ~ exp(-r^2 / w(z)^2) * exp(-i k r^2 / (2 R(z))) * exp(-i phi_G)
    """
    X, Y = grid.mesh()
    r2 = X**2 + Y**2
    w = params.width
    envelope = np.exp(-r2 / w**2)
    phase = -0.5 * params.k * r2 * params.inv_radius - params.gouy
    amp = envelope * np.exp(1j * phase)
    return normalized(ComplexField(grid, amp))


def _translate_int(arr: np.ndarray, ax: int, ay: int) -> np.ndarray:
    """out[j, i] = arr[j + ay, i + ax], zero-filled outside the grid."""
    ny, nx = arr.shape
    out = np.zeros_like(arr)
    xs0, xs1 = max(0, ax), min(nx, nx + ax)
    ys0, ys1 = max(0, ay), min(ny, ny + ay)
    if xs0 >= xs1 or ys0 >= ys1:
        return out
    out[ys0 - ay : ys1 - ay, xs0 - ax : xs1 - ax] = arr[ys0:ys1, xs0:xs1]
    return out


def _translate_bilinear(arr: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Sample arr at (i + dx, j + dy) in pixel units, bilinear, zero-filled."""
    ax, ay = int(np.floor(dx)), int(np.floor(dy))
    fx, fy = dx - ax, dy - ay
    if fx == 0.0 and fy == 0.0:
        return _translate_int(arr, ax, ay)
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    out = w00 * _translate_int(arr, ax, ay)
    if w10:
        out += w10 * _translate_int(arr, ax + 1, ay)
    if w01:
        out += w01 * _translate_int(arr, ax, ay + 1)
    if w11:
        out += w11 * _translate_int(arr, ax + 1, ay + 1)
    return out


def unit_direction(angle_deg: float) -> tuple[float, float]:
    """In-plane unit vector at the given angle from the x axis."""
    t = np.deg2rad(angle_deg)
    return (float(np.cos(t)), float(np.sin(t)))


def shifted_field(
    field: ComplexField, xi: float, direction: Sequence[float]
) -> ComplexField:
    """Exact lateral resampling u(rho + xi * dir), bilinear between pixels.

    The intensity pattern moves by -xi * dir.  Energy is conserved up to
    interpolation error and edge clipping.
    """
    dx, dy = float(direction[0]), float(direction[1])
    ex, ey = field.grid.extent
    if abs(xi * dx) >= ex / 2 or abs(xi * dy) >= ey / 2:
        raise ConfigError("shift exceeds half the grid extent")
    p = field.grid.pitch
    amp = _translate_bilinear(field.amp, xi * dx / p, xi * dy / p)
    return ComplexField(field.grid, amp)


def first_order_displaced(
    params: BeamParams, grid: PixelGrid, xi: float, direction: Sequence[float]
) -> ComplexField:
    """First-order expansion of a TEM00 displaced by xi along direction:

        (1 + 2 (rho . dir) xi / w(z)^2) * tem00

    Agrees with shifted_field(tem00, -xi, dir) up to O(xi^2).
    """
    base = tem00(params, grid)
    X, Y = grid.mesh()
    proj = X * direction[0] + Y * direction[1]
    w = params.width
    amp = (1.0 + 2.0 * proj * xi / w**2) * base.amp
    return ComplexField(grid, amp)


def displaced_tem00(
    params: BeamParams, grid: PixelGrid, direction: Sequence[float]
) -> Callable[[float], ComplexField]:
    """Generator xi -> laterally resampled TEM00, for derivative probes."""
    base = tem00(params, grid)

    def gen(xi: float) -> ComplexField:
        return shifted_field(base, xi, direction)

    return gen


def derivative_mode(
    u_of_xi: Callable[[float], ComplexField], h: float = 1e-3
) -> tuple[RealField, float]:
    """Displacement response mode and response waist of an output field.

    Central difference of the modulus, d|u|/dxi ~ (|u(h)| - |u(-h)|) / 2h,
    evaluated at xi = 0.  Returns (v, a) with

        a = 1 / sqrt( sum (d|u|/dxi)^2 * pitch^2 ),    v = a * d|u|/dxi,

    so v has unit norm and a is the length scale over which the output
    decorrelates with displacement.  For a pure TEM00 displacement a = w0.
    """
    if not h > 0:
        raise ConfigError("step h must be positive")
    up = u_of_xi(+h)
    um = u_of_xi(-h)
    if up.grid != um.grid:
        raise ConfigError("generator returned fields on different grids")
    d = (np.abs(up.amp) - np.abs(um.amp)) / (2.0 * h)
    s = float(np.sum(d * d)) * up.grid.pitch**2
    if s < 1e-24:
        raise DegeneracyError("insensitive configuration: zero response to displacement")
    a = 1.0 / np.sqrt(s)
    return RealField(up.grid, a * d), a


def analytic_v00(grid: PixelGrid, w0: float = 1.0) -> RealField:
    """Closed-form displacement mode of a focused TEM00: v ~ x * |tem00|."""
    X, _ = grid.mesh()
    base = np.abs(tem00(BeamParams(w0=w0), grid).amp)
    v = X * base
    n = np.sqrt(np.sum(v * v) * grid.pitch**2)
    if n <= 0:
        raise DegeneracyError("degenerate grid for analytic mode")
    return RealField(grid, v / n)


# ---------------------------------------------------------------------------
# serialization

def save_field_fld1(field: ComplexField, path) -> None:
    """Binary field format: magic 'FLD1', u32 nx, u32 ny, f64 pitch, then
    nx*ny interleaved little-endian f64 (re, im) pairs, row-major with y as
    the outer index."""
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_FLD_MAGIC)
        fh.write(struct.pack("<IId", g.nx, g.ny, g.pitch))
        data = np.empty((g.ny, g.nx, 2), dtype="<f8")
        data[..., 0] = field.amp.real
        data[..., 1] = field.amp.imag
        fh.write(data.tobytes())


def load_field_fld1(path) -> ComplexField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FLD_MAGIC:
            raise ConfigError(f"not a FLD1 file: bad magic {magic!r}")
        nx, ny, pitch = struct.unpack("<IId", fh.read(16))
        raw = fh.read(nx * ny * 16)
        if len(raw) != nx * ny * 16:
            raise ConfigError("truncated FLD1 file")
        data = np.frombuffer(raw, dtype="<f8").reshape(ny, nx, 2)
        amp = data[..., 0] + 1j * data[..., 1]
    return ComplexField(PixelGrid(nx, ny, pitch), amp)


def field_to_csv(field: ComplexField, path) -> None:
    """Plain-text mirror of FLD1: one pixel per row, columns ix, iy, re, im."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ix", "iy", "re", "im"])
        amp = field.amp
        for j in range(field.grid.ny):
            for i in range(field.grid.nx):
                w.writerow([i, j, repr(float(amp[j, i].real)), repr(float(amp[j, i].imag))])


def field_from_csv(path, grid: PixelGrid) -> ComplexField:
    amp = np.zeros(grid.shape, dtype=np.complex128)
    seen = 0
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:4] != ["ix", "iy", "re", "im"]:
            raise ConfigError("field CSV must have columns ix, iy, re, im")
        for row in rd:
            i, j = int(row[0]), int(row[1])
            amp[j, i] = float(row[2]) + 1j * float(row[3])
            seen += 1
    if seen != grid.nx * grid.ny:
        raise ConfigError("field CSV does not cover the full grid")
    return ComplexField(grid, amp)
