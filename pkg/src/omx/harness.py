"""Experiment pipelines: configuration, deterministic end-to-end runs, and
figure-data emission.

A run is organized as a small pipeline of subcommands communicating through
files in one output directory:

    calibrate -> tm.tmx1, calibration.json          (random medium only)
    focus     -> pattern.csv, focus.json            (random medium only)
    simulate  -> <input>/driven.frm1 + sidecar, <input>/quiet.frm1,
                 <input>/reference.fld1, simulate.json
    estimate  -> <input>/series_<gain>.csv, <input>/estimate.json
    noise-audit -> audit.csv, audit.json
    report    -> report.json, fig3.csv, fig4.csv, fig5.csv

where <input> is "unshaped" and, once a focusing pattern exists, "shaped".
Every stage is deterministic given the configuration: all random streams
are derived from the master seed and a named stream id, and every emitted
JSON embeds the configuration hash, the seeds and the package version.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .detection import (
    DriveConfig,
    Frame,
    NoiseConfig,
    expected_intensity,
    load_frames_frm1,
    record_sequence,
    reference_frame,
    save_frames_frm1,
    substream,
)
from .errors import ConfigError, DegeneracyError
from .estimators import (
    EstimatorReport,
    audit_to_csv,
    balanced_masks,
    default_audit_widths,
    gain_to_csv,
    intensity_series,
    modulation_depth,
    motion_direction,
    motion_signal,
    noise_audit,
    normalize_gain,
    optimal_gain,
    projection,
    quantum_limit,
    snr,
    split_gain,
    tracking_gain,
)
from .grid_optics import (
    BeamParams,
    ComplexField,
    PixelGrid,
    RealField,
    load_field_fld1,
    save_field_fld1,
    tem00,
    unit_direction,
)
from .scattering import PureDisplacement, RandomMedium, true_derivative
from .tm_toolkit import (
    enhancement,
    grain_size,
    load_tmx1,
    measure_tm,
    phase_conjugate,
    save_tmx1,
    target_spot,
)

# named random streams, combined with the master seed
STREAMS = {
    "driven_unshaped": 1,
    "quiet_unshaped": 2,
    "reference_unshaped": 3,
    "driven_shaped": 4,
    "quiet_shaped": 5,
    "reference_shaped": 6,
    "audit": 7,
    "derivative_plus": 8,
    "derivative_minus": 9,
}

DEFAULTS = {
    "seed": 0,
    "photons": 7e4,
    "model": {
        "kind": "random_medium",
        "seed": 0,
        "n_in": 256,
        "scatter_n": 128,
        "camera_n": 64,
        "direction_deg": 10.0,
        "envelope_waist": 1.0,
        "scatter_extent": 4.0,
        "camera_extent": 4.0,
    },
    # camera plane of the pure-displacement model
    "beam": {"w0": 1.0, "grid_n": 128, "pitch": 0.0625},
    "drive": {
        "frequency_hz": 133.0,
        "xi0": 0.08,
        "frame_rate": 2660.0,
        "n_frames": 1000,
        "phase0": 0.0,
    },
    "noise": {"shot": True, "classical_rms": 0.0, "classical_tau": 0.0},
    "estimator": {
        "gains": ["split", "tracking", "optimal"],
        "floor": 1e-3,
        "reference_frames": 200,
        "derivative_source": "model",
        "derivative_step": 1e-3,
    },
    "shaping": {
        "phase_only": True,
        "target": [0.0, 0.0],
        "spot_radius_grains": 1.0,
        "enhancement_radius_px": 6.0,
    },
    "audit": {"n_frames": 6000, "widths": "default"},
}

_GAIN_NAMES = ("split", "tracking", "optimal")


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = {}
    for key, base in defaults.items():
        if key in user and isinstance(base, dict):
            if not isinstance(user[key], dict):
                raise ConfigError(f"config section {path}{key} must be an object")
            out[key] = _merge(base, user[key], f"{path}{key}.")
        elif key in user:
            out[key] = user[key]
        else:
            out[key] = base
    for key in user:
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}{key}")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Materialized configuration: user values merged over the defaults."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def subseed(self, stream: str) -> int:
        """Integer seed for a named random stream of this run."""
        sid = STREAMS[stream]
        ss = np.random.SeedSequence((self.seed, sid))
        return int(ss.generate_state(1, np.uint64)[0])

    def sha256(self) -> str:
        payload = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def provenance(self) -> dict:
        return {
            "config_sha256": self.sha256(),
            "seed": self.seed,
            "model_seed": int(self.data["model"]["seed"]),
            "streams": {name: self.subseed(name) for name in STREAMS},
            "version": __version__,
        }

    def drive(self, xi0: float | None = None, n_frames: int | None = None) -> DriveConfig:
        d = self.data["drive"]
        return DriveConfig(
            omega_m=2 * np.pi * float(d["frequency_hz"]),
            xi0=float(d["xi0"] if xi0 is None else xi0),
            frame_rate=float(d["frame_rate"]),
            n_frames=int(d["n_frames"] if n_frames is None else n_frames),
            phase0=float(d["phase0"]),
        )

    def noise(self) -> NoiseConfig:
        n = self.data["noise"]
        return NoiseConfig(
            shot=bool(n["shot"]),
            classical_rms=float(n["classical_rms"]),
            classical_tau=float(n["classical_tau"]),
        )


def _validate(data: dict) -> None:
    if not float(data["photons"]) > 0:
        raise ConfigError("photons must be positive")
    kind = data["model"]["kind"]
    if kind not in ("random_medium", "pure"):
        raise ConfigError(f"unknown model kind {kind!r}")
    gains = data["estimator"]["gains"]
    if not gains:
        raise ConfigError("estimator gain list is empty")
    for g in gains:
        if g not in _GAIN_NAMES:
            raise ConfigError(f"unknown gain {g!r}")
    if data["estimator"]["derivative_source"] not in ("model", "frames"):
        raise ConfigError("derivative_source must be 'model' or 'frames'")
    if not 0 <= float(data["estimator"]["floor"]) <= 1:
        raise ConfigError("estimator floor must lie in [0, 1]")
    widths = data["audit"]["widths"]
    if widths != "default" and (
        not isinstance(widths, (list, tuple)) or len(widths) == 0
    ):
        raise ConfigError("audit widths must be 'default' or a list of pixel counts")
    target = data["shaping"]["target"]
    if not (isinstance(target, (list, tuple)) and len(target) == 2):
        raise ConfigError("shaping target must be an [x, y] pair")


def make_config(user: dict | None = None) -> ExperimentConfig:
    data = _merge(DEFAULTS, user or {})
    _validate(data)
    return ExperimentConfig(data)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return make_config(user)


# ---------------------------------------------------------------------------
# model construction


@dataclass(frozen=True)
class ModelBundle:
    """A scattering model with its unshaped input and camera plane."""

    model: object
    eps_unshaped: object
    camera_grid: PixelGrid
    kind: str


def make_model(cfg: ExperimentConfig) -> ModelBundle:
    m = cfg["model"]
    if m["kind"] == "pure":
        b = cfg["beam"]
        grid = PixelGrid(int(b["grid_n"]), int(b["grid_n"]), float(b["pitch"]))
        field = tem00(BeamParams(w0=float(b["w0"])), grid)
        model = PureDisplacement(direction=unit_direction(float(m["direction_deg"])))
        return ModelBundle(model, field, grid, "pure")
    model = RandomMedium(
        n_in=int(m["n_in"]),
        scatter_n=int(m["scatter_n"]),
        camera_n=int(m["camera_n"]),
        direction=unit_direction(float(m["direction_deg"])),
        seed=int(m["seed"]),
        envelope_waist=float(m["envelope_waist"]),
        scatter_extent=float(m["scatter_extent"]),
        camera_extent=float(m["camera_extent"]),
    )
    return ModelBundle(model, model.reference_pattern(), model.camera_grid, "random_medium")


# ---------------------------------------------------------------------------
# small IO helpers


def _pyify(obj):
    if isinstance(obj, dict):
        return {k: _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_pyify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(_pyify(obj), sort_keys=True, indent=2) + "\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def pattern_to_csv(pattern: np.ndarray, path) -> None:
    """Control pattern rows: segment, re, im."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment", "re", "im"])
        for k, z in enumerate(np.asarray(pattern, dtype=np.complex128)):
            w.writerow([k, repr(float(z.real)), repr(float(z.imag))])


def pattern_from_csv(path, n_in: int) -> np.ndarray:
    out = np.zeros(n_in, dtype=np.complex128)
    seen = 0
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:3] != ["segment", "re", "im"]:
            raise ConfigError("pattern CSV must have columns segment, re, im")
        for row in rd:
            k = int(row[0])
            if not 0 <= k < n_in:
                raise ConfigError(f"segment index {k} out of range")
            out[k] = float(row[1]) + 1j * float(row[2])
            seen += 1
    if seen != n_in:
        raise ConfigError("pattern CSV does not cover every segment")
    return out


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {path.name}: run `omx {producer}` first")
    return path


def _series_to_csv(series: np.ndarray, times: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "t", "xhat"])
        for j, (t, x) in enumerate(zip(times, series)):
            w.writerow([j, repr(float(t)), repr(float(x))])


# ---------------------------------------------------------------------------
# pipeline stages


def _branches(cfg: ExperimentConfig, out: Path, need_pattern: bool) -> list[str]:
    """Input branches available to a stage: unshaped always, shaped once a
    focusing pattern exists (random medium only)."""
    names = ["unshaped"]
    if cfg["model"]["kind"] == "random_medium" and (
        not need_pattern or (out / "pattern.csv").exists()
    ):
        names.append("shaped")
    return names


def _branch_input(cfg: ExperimentConfig, bundle: ModelBundle, branch: str, out: Path):
    if branch == "unshaped":
        return bundle.eps_unshaped
    path = _require(out / "pattern.csv", "focus")
    return pattern_from_csv(path, bundle.model.n_in)


def cmd_simulate(cfg: ExperimentConfig, out_dir) -> dict:
    """Record driven and motion-free sequences plus the rest reference for
    each available input branch."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = make_model(cfg)
    photons = float(cfg["photons"])
    noise = cfg.noise()
    m_ref = int(cfg["estimator"]["reference_frames"])
    written = []
    for branch in _branches(cfg, out, need_pattern=True):
        eps = _branch_input(cfg, bundle, branch, out)
        bdir = out / branch
        bdir.mkdir(exist_ok=True)
        driven = record_sequence(
            bundle.model, eps, cfg.drive(), noise, photons, cfg.subseed(f"driven_{branch}")
        )
        save_frames_frm1(driven, bdir / "driven.frm1", bdir / "driven_meta.csv")
        quiet = record_sequence(
            bundle.model, eps, cfg.drive(xi0=0.0), noise, photons, cfg.subseed(f"quiet_{branch}")
        )
        save_frames_frm1(quiet, bdir / "quiet.frm1", bdir / "quiet_meta.csv")
        ref = reference_frame(
            bundle.model, eps, photons, m_frames=m_ref,
            seed=cfg.subseed(f"reference_{branch}"), noise=noise,
        )
        save_field_fld1(
            ComplexField(ref.grid, ref.values.astype(np.complex128)),
            bdir / "reference.fld1",
        )
        written += [f"{branch}/driven.frm1", f"{branch}/quiet.frm1", f"{branch}/reference.fld1"]
    summary = {
        "inputs": _branches(cfg, out, need_pattern=True),
        "n_frames": int(cfg["drive"]["n_frames"]),
        "files": written,
        "provenance": cfg.provenance(),
    }
    write_json(summary, out / "simulate.json")
    return summary


def cmd_calibrate(cfg: ExperimentConfig, out_dir) -> dict:
    """Measure the transmission matrix of the medium at rest."""
    if cfg["model"]["kind"] != "random_medium":
        raise ConfigError("nothing to calibrate: the pure model has no medium")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = make_model(cfg)
    model = bundle.model
    tm, report = measure_tm(
        model.intensity_batch, model.n_in, ground_truth=model.effective_tm()
    )
    save_tmx1(tm, out / "tm.tmx1")
    summary = {
        "n_out": report.n_out,
        "n_in": report.n_in,
        "phase_steps": report.phase_steps,
        "basis": report.basis,
        "n_dark_rows": report.n_dark_rows,
        "row_correlation_median": report.row_correlation_median,
        "row_correlation_min": report.row_correlation_min,
        "provenance": cfg.provenance(),
    }
    write_json(summary, out / "calibration.json")
    return summary


def cmd_focus(cfg: ExperimentConfig, out_dir) -> dict:
    """Derive the focusing pattern from the measured matrix and score it."""
    if cfg["model"]["kind"] != "random_medium":
        raise ConfigError("nothing to focus: the pure model has no medium")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tm = load_tmx1(_require(out / "tm.tmx1", "calibrate"))
    bundle = make_model(cfg)
    model = bundle.model
    grid = bundle.camera_grid

    ref_field = model.transmit(bundle.eps_unshaped, 0.0)
    ref_I = RealField(grid, ref_field.intensity)
    grain = grain_size(ref_I)

    shaping = cfg["shaping"]
    center = (float(shaping["target"][0]), float(shaping["target"][1]))
    radius = float(shaping["spot_radius_grains"]) * grain
    spot = target_spot(grid, center, radius)
    pattern = phase_conjugate(tm, spot, phase_only=bool(shaping["phase_only"]))
    pattern_to_csv(pattern, out / "pattern.csv")

    shaped_I = RealField(grid, model.transmit(pattern, 0.0).intensity)
    eta = enhancement(
        shaped_I, ref_I, center, float(shaping["enhancement_radius_px"]) * grid.pitch
    )
    summary = {
        "grain": grain,
        "grain_px": grain / grid.pitch,
        "target_center": list(center),
        "spot_radius": radius,
        "phase_only": bool(shaping["phase_only"]),
        "enhancement": eta,
        "n_in": model.n_in,
        "provenance": cfg.provenance(),
    }
    write_json(summary, out / "focus.json")
    return summary


def _derivative_from_frames(cfg: ExperimentConfig, bundle: ModelBundle, eps):
    """Experimental-mode response estimate from averaged frames at two small
    displacement offsets."""
    photons = float(cfg["photons"])
    delta = float(cfg["estimator"]["derivative_step"])
    m = int(cfg["estimator"]["reference_frames"])
    if m < 1:
        raise ConfigError("frame-based derivative needs reference_frames >= 1")
    sides = {}
    for sign, stream in ((+1, "derivative_plus"), (-1, "derivative_minus")):
        lam = expected_intensity(bundle.model, eps, sign * delta, photons)
        rng = substream(cfg.subseed(stream), 0)
        acc = np.zeros(lam.values.shape)
        for _ in range(m):
            acc += rng.poisson(lam.values)
        sides[sign] = acc / m
    p2 = bundle.camera_grid.pitch**2
    mod_p = np.sqrt(sides[+1] / (photons * p2))
    mod_m = np.sqrt(sides[-1] / (photons * p2))
    dv = (mod_p - mod_m) / (2 * delta)
    norm = np.sqrt(np.sum(dv**2) * p2)
    if norm <= 0:
        raise DegeneracyError("insensitive configuration: flat response")
    a = 1.0 / norm
    return RealField(bundle.camera_grid, dv * a), a


def _load_branch_frames(bdir: Path, pitch: float):
    driven = load_frames_frm1(
        _require(bdir / "driven.frm1", "simulate"), pitch, bdir / "driven_meta.csv"
    )
    quiet = load_frames_frm1(
        _require(bdir / "quiet.frm1", "simulate"), pitch, bdir / "quiet_meta.csv"
    )
    ref_field = load_field_fld1(_require(bdir / "reference.fld1", "simulate"))
    reference = RealField(ref_field.grid, ref_field.amp.real)
    return driven, quiet, reference


def estimate_branch(
    cfg: ExperimentConfig, bundle: ModelBundle, branch: str, out: Path
) -> dict:
    """Gain family evaluation for one input branch; returns the JSON payload."""
    photons = float(cfg["photons"])
    est = cfg["estimator"]
    bdir = out / branch
    driven, quiet, reference = _load_branch_frames(bdir, bundle.camera_grid.pitch)
    grid = reference.grid

    # measured rest modulus; exact when the reference is the expectation
    u0_amp = RealField(grid, np.sqrt(np.maximum(reference.values, 0.0) / (photons * grid.pitch**2)))

    eps = _branch_input(cfg, bundle, branch, out)
    if est["derivative_source"] == "model":
        v, a_eps = true_derivative(bundle.model, eps, h=float(est["derivative_step"]))
    else:
        v, a_eps = _derivative_from_frames(cfg, bundle, eps)

    direction_note = ""
    try:
        direction = motion_direction(driven, reference)
    except DegeneracyError:
        direction = np.array(unit_direction(float(cfg["model"]["direction_deg"])))
        direction_note = "direction fallback: configured axis (signal cloud isotropic)"

    gains = []
    for name in est["gains"]:
        if name == "split":
            gains.append(normalize_gain(split_gain(grid, direction), u0_amp))
        elif name == "tracking":
            gains.append(normalize_gain(tracking_gain(grid, direction), u0_amp))
        else:
            gains.append(optimal_gain(u0_amp, v, floor=float(est["floor"])))

    times = np.array([fr.t for fr in driven])
    reports = []
    for gain in gains:
        series = motion_signal(driven, reference, gain)
        noise_series = motion_signal(quiet, reference, gain)
        mu = modulation_depth(series, photons)
        dmu2 = modulation_depth(noise_series, photons) ** 2
        value = snr(mu, noise_series, photons)
        proj = projection(gain, u0_amp, v)
        notes = branch if not direction_note else f"{branch}; {direction_note}"
        reports.append(
            EstimatorReport(gain.label, mu, dmu2, value, proj, a_eps, photons, notes)
        )
        _series_to_csv(series, times, bdir / f"series_{gain.label}.csv")
        gain_to_csv(gain, bdir / f"gain_{gain.label}.csv")

    _, depth = intensity_series(driven)
    payload = {
        "input": branch,
        "a_eps": a_eps,
        "direction": [float(direction[0]), float(direction[1])],
        "intensity_depth": depth,
        "reports": [r.as_dict() for r in reports],
        "provenance": cfg.provenance(),
    }
    write_json(payload, bdir / "estimate.json")
    return payload


def cmd_estimate(cfg: ExperimentConfig, out_dir) -> dict:
    """Evaluate the configured gain family on every simulated branch."""
    out = Path(out_dir)
    bundle = make_model(cfg)
    payloads = {}
    for branch in _branches(cfg, out, need_pattern=True):
        payloads[branch] = estimate_branch(cfg, bundle, branch, out)
    return payloads


def cmd_noise_audit(cfg: ExperimentConfig, out_dir, frames=None) -> dict:
    """Balanced-mask audit of a motion-free acquisition."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = make_model(cfg)
    grid = bundle.camera_grid
    if frames is None:
        n = int(cfg["audit"]["n_frames"])
        drive = cfg.drive(xi0=0.0, n_frames=n)
        frames = record_sequence(
            bundle.model, bundle.eps_unshaped, drive, cfg.noise(),
            float(cfg["photons"]), cfg.subseed("audit"),
        )
    if len(frames) == 0:
        raise ConfigError("no frames to audit")
    widths_cfg = cfg["audit"]["widths"]
    if widths_cfg == "default":
        widths = default_audit_widths(grid)
    else:
        widths = np.asarray([float(w) for w in widths_cfg]) * grid.pitch
    direction = unit_direction(float(cfg["model"]["direction_deg"]))
    masks = balanced_masks(grid, direction, widths)
    audit = noise_audit(frames, masks)
    widths_px = widths / grid.pitch
    audit_to_csv(widths_px, audit, out / "audit.csv")
    summary = {
        "slope": audit.slope,
        "n_frames": len(frames),
        "widths_px": [float(w) for w in widths_px],
        "provenance": cfg.provenance(),
    }
    write_json(summary, out / "audit.json")
    return summary


def cmd_report(cfg: ExperimentConfig, out_dir) -> dict:
    """Consolidate the run artifacts into one report plus figure CSVs."""
    out = Path(out_dir)
    shaped_run = cfg["model"]["kind"] == "random_medium"
    estimates = {}
    for branch in (["unshaped", "shaped"] if shaped_run else ["unshaped"]):
        path = _require(out / branch / "estimate.json", "estimate")
        estimates[branch] = read_json(path)
    audit = read_json(_require(out / "audit.json", "noise-audit"))
    calibration = focus = None
    if shaped_run:
        calibration = read_json(_require(out / "calibration.json", "calibrate"))
        focus = read_json(_require(out / "focus.json", "focus"))

    photons = float(cfg["photons"])
    snr_q = quantum_limit(photons)
    report = {
        "estimators": [
            rep for br in estimates.values() for rep in br["reports"]
        ],
        "calibration": calibration and {
            k: calibration[k] for k in calibration if k != "provenance"
        },
        "grain": focus["grain"] if focus else None,
        "enhancement": focus["enhancement"] if focus else None,
        "a_00": estimates["unshaped"]["a_eps"],
        "a_foc": estimates["shaped"]["a_eps"] if shaped_run else None,
        "audit_slope": audit["slope"],
        "snr_q": snr_q,
        "provenance": cfg.provenance(),
    }
    write_json(report, out / "report.json")

    with open(out / "fig3.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gain", "mu", "projection"])
        for rep in estimates["unshaped"]["reports"]:
            w.writerow([rep["label"], repr(float(rep["mu"])), repr(float(rep["projection"]))])

    with open(out / "fig4.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gain", "mu", "projection", "a_00", "a_foc", "enhancement"])
        if shaped_run:
            for rep in estimates["shaped"]["reports"]:
                w.writerow([
                    rep["label"],
                    repr(float(rep["mu"])),
                    repr(float(rep["projection"])),
                    repr(float(report["a_00"])),
                    repr(float(report["a_foc"])),
                    repr(float(report["enhancement"])),
                ])

    with open(out / "fig5.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gain", "input", "snr", "snr_q"])
        for branch, payload in estimates.items():
            for rep in payload["reports"]:
                w.writerow([
                    rep["label"], branch,
                    repr(float(rep["snr"])), repr(float(snr_q)),
                ])
    return report
