"""Displacement-coupled optical systems.

Two models map an input field or control pattern to the camera-plane
field as a function of the probed displacement xi (waist units):

* PureDisplacement translates the field rigidly, the textbook case with
  a closed-form response mode.
* RandomMedium renders a segmented control pattern onto an intermediate
  scatterer plane, translates it there by xi along a fixed direction,
  and sends it through a frozen random transmission matrix to a camera.
  Output speckle then carries the motion in a spatially scrambled way.

Both are strictly linear in the input and deterministic for a fixed
seed.  A single normalization constant per model instance, fixed at
xi = 0 with the reference input, keeps outputs at unit discrete energy.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .grid_optics import (
    ComplexField,
    PixelGrid,
    RealField,
    _translate_bilinear,
    _translate_int,
    derivative_mode,
    shifted_field,
    unit_direction,
)


class PureDisplacement:
    """Rigid lateral translation of the input field along a fixed direction."""

    def __init__(self, direction: Sequence[float] = unit_direction(10.0)):
        self.direction = (float(direction[0]), float(direction[1]))

    def transmit(self, eps: ComplexField, xi: float) -> ComplexField:
        if not isinstance(eps, ComplexField):
            raise ConfigError("PureDisplacement expects a ComplexField input")
        return shifted_field(eps, xi, self.direction)


class RandomMedium:
    """Segmented input, moving scatterer plane, frozen random medium.

    n_in control segments (a square layout) are imaged onto the scatterer
    plane as uniform blocks under a Gaussian illumination envelope.  The
    plane moves with the probed displacement; a complex i.i.d. circular
    Gaussian matrix T0 maps it to the camera.

    Parameters
    ----------
    n_in : number of control segments, must be a perfect square
    scatter_n, camera_n : pixels per side of the scatterer and camera planes
    direction : unit vector of the motion in the scatterer plane
    seed : master seed for T0
    envelope_waist : 1/e^2 intensity radius of the illumination (waist units)
    scatter_extent, camera_extent : physical side lengths (waist units)
    """

    def __init__(
        self,
        n_in: int = 256,
        scatter_n: int = 128,
        camera_n: int = 64,
        direction: Sequence[float] = unit_direction(10.0),
        seed: int = 0,
        envelope_waist: float = 1.0,
        scatter_extent: float = 4.0,
        camera_extent: float = 4.0,
    ):
        side = int(round(np.sqrt(n_in)))
        if side * side != n_in:
            raise ConfigError("n_in must be a perfect square")
        if scatter_n % side != 0:
            raise ConfigError("scatter_n must be a multiple of sqrt(n_in)")
        self.n_in = n_in
        self._side = side
        self._block = scatter_n // side
        self.direction = (float(direction[0]), float(direction[1]))
        self.seed = int(seed)
        self.scatter_grid = PixelGrid(scatter_n, scatter_n, scatter_extent / scatter_n)
        self.camera_grid = PixelGrid(camera_n, camera_n, camera_extent / camera_n)

        X, Y = self.scatter_grid.mesh()
        self._envelope = np.exp(-(X**2 + Y**2) / envelope_waist**2)

        n_cam = camera_n * camera_n
        n_sc = scatter_n * scatter_n
        rng = np.random.default_rng(self.seed)
        # interleaved re/im draws viewed as complex, one allocation
        self._t0 = rng.standard_normal((n_cam, 2 * n_sc)).view(np.complex128)

        # per-segment columns of the xi = 0 map, for fast pattern transmits
        self._t_eff = self._build_effective_tm()

        ref = self.reference_pattern()
        u = self._t_eff @ ref
        norm = np.sqrt(np.sum(np.abs(u) ** 2) * self.camera_grid.pitch**2)
        if norm <= 0:
            raise ConfigError("degenerate medium: reference output has no energy")
        self._scale = 1.0 / norm

    def _build_effective_tm(self) -> np.ndarray:
        s, b, n = self._side, self._block, self.scatter_grid.nx
        env = self._envelope
        # columns of the scatter-plane render, shaped for one big GEMM
        cols = np.zeros((n * n, self.n_in), dtype=np.complex128)
        for sy in range(s):
            for sx in range(s):
                block = np.zeros((n, n))
                block[sy * b : (sy + 1) * b, sx * b : (sx + 1) * b] = env[
                    sy * b : (sy + 1) * b, sx * b : (sx + 1) * b
                ]
                cols[:, sy * s + sx] = block.ravel()
        return self._t0 @ cols

    def reference_pattern(self) -> np.ndarray:
        """Flat drive of all segments at equal amplitude, unit total energy."""
        return np.full(self.n_in, 1.0 / np.sqrt(self.n_in), dtype=np.complex128)

    def render(self, pattern: np.ndarray) -> np.ndarray:
        """Scatter-plane field for a control pattern."""
        p = np.asarray(pattern, dtype=np.complex128)
        if p.shape != (self.n_in,):
            raise ConfigError(f"pattern must have shape ({self.n_in},)")
        up = np.kron(p.reshape(self._side, self._side), np.ones((self._block, self._block)))
        return self._envelope * up

    def effective_tm(self) -> np.ndarray:
        """Ground-truth segment-to-camera matrix at rest, shape (n_pix, n_in)."""
        return self._t_eff.copy()

    def _scatter_plane(self, eps) -> np.ndarray:
        if isinstance(eps, ComplexField):
            if eps.grid != self.scatter_grid:
                raise ConfigError("field input must live on the scatterer grid")
            return np.array(eps.amp)
        return self.render(eps)

    def _shift_px(self, xi: float) -> tuple[float, float]:
        p = self.scatter_grid.pitch
        dx = xi * self.direction[0] / p
        dy = xi * self.direction[1] / p
        if abs(dx) >= self.scatter_grid.nx / 2 or abs(dy) >= self.scatter_grid.ny / 2:
            raise ConfigError("displacement exceeds half the scatterer plane")
        return dx, dy

    def transmit(self, eps, xi: float) -> ComplexField:
        cam = self.camera_grid
        if xi == 0.0 and not isinstance(eps, ComplexField):
            p = np.asarray(eps, dtype=np.complex128)
            if p.shape != (self.n_in,):
                raise ConfigError(f"pattern must have shape ({self.n_in},)")
            u = self._t_eff @ p
        else:
            w = self._scatter_plane(eps)
            dx, dy = self._shift_px(xi)
            u = self._t0 @ _translate_bilinear(w, dx, dy).ravel()
        return ComplexField(cam, (self._scale * u).reshape(cam.shape))

    def transmit_batch(self, eps, xis: np.ndarray) -> np.ndarray:
        """Camera fields for one input over many displacements.

        Bilinear translation mixes at most four integer translates of the
        rendered plane, so the medium is applied once per distinct integer
        offset and the frames are cheap linear blends.  Returns a complex
        array of shape (len(xis), camera_n, camera_n) identical (up to
        rounding) to stacking transmit() calls.
        """
        w = self._scatter_plane(eps)
        xis = np.asarray(xis, dtype=float)
        shifts = [self._shift_px(x) for x in xis]
        basis: dict[tuple[int, int], np.ndarray] = {}
        for dx, dy in shifts:
            ax, ay = int(np.floor(dx)), int(np.floor(dy))
            for off in ((ax, ay), (ax + 1, ay), (ax, ay + 1), (ax + 1, ay + 1)):
                if off not in basis:
                    basis[off] = self._t0 @ _translate_int(w, off[0], off[1]).ravel()
        cam = self.camera_grid
        out = np.empty((len(xis), cam.ny, cam.nx), dtype=np.complex128)
        for n, (dx, dy) in enumerate(shifts):
            ax, ay = int(np.floor(dx)), int(np.floor(dy))
            fx, fy = dx - ax, dy - ay
            u = (
                (1 - fx) * (1 - fy) * basis[(ax, ay)]
                + fx * (1 - fy) * basis[(ax + 1, ay)]
                + (1 - fx) * fy * basis[(ax, ay + 1)]
                + fx * fy * basis[(ax + 1, ay + 1)]
            )
            out[n] = (self._scale * u).reshape(cam.shape)
        return out

    def intensity_batch(self, patterns: np.ndarray) -> np.ndarray:
        """Noiseless camera intensities |u|^2 for a stack of patterns at rest.

        patterns: (n_patterns, n_in) -> (n_patterns, n_pix), the probe
        interface used by transmission-matrix calibration.
        """
        P = np.asarray(patterns, dtype=np.complex128)
        if P.ndim != 2 or P.shape[1] != self.n_in:
            raise ConfigError(f"patterns must have shape (K, {self.n_in})")
        fields = self._t_eff @ P.T
        return np.abs(self._scale * fields.T) ** 2


def true_derivative(model, eps, h: float = 1e-3) -> tuple[RealField, float]:
    """Model-oracle response mode and waist at rest, by central differences."""
    return derivative_mode(lambda xi: model.transmit(eps, xi), h=h)
