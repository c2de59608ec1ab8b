"""Estimator family tests: gains, projections, contrast and SNR bookkeeping,
Fisher information, direction fitting, and the balanced-mask noise audit.

Statistical checks run on fixed seeds with tolerances set from the standard
errors of the statistic in question."""

import csv

import numpy as np
import pytest

from omx import (
    BeamParams,
    ConfigError,
    DegeneracyError,
    PixelGrid,
    RealField,
    derivative_mode,
    energy,
    inner,
    tem00,
    unit_direction,
)
from omx.detection import (
    DriveConfig,
    Frame,
    NoiseConfig,
    expected_intensity,
    record_sequence,
    reference_frame,
    substream,
)
from omx.estimators import (
    EstimatorReport,
    GainMap,
    audit_to_csv,
    balanced_masks,
    barycenter,
    crb,
    default_audit_widths,
    detection_mode,
    fisher_info,
    gain_from_csv,
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
from omx.scattering import PureDisplacement

BEAM = BeamParams()
GRID = PixelGrid(128, 128, 1 / 16)
MODEL = PureDisplacement(direction=(1.0, 0.0))
U0 = tem00(BEAM, GRID)
U0_AMP = U0.modulus()
V, A = derivative_mode(lambda xi: MODEL.transmit(U0, xi))


def static_frames(grid, lam, m, seed):
    rng = substream(seed, 1)
    draws = rng.poisson(lam, size=(m, *lam.shape))
    return [Frame(grid, draws[j], t=float(j)) for j in range(m)]


class TestGainMaps:
    def test_split_values_and_tie_line(self):
        g5 = PixelGrid(5, 5, 1.0)
        gm = split_gain(g5, (1.0, 0.0))
        xx, _ = g5.mesh()
        assert np.all(gm.g[xx > 0] == -1.0)
        assert np.all(gm.g[xx < 0] == 1.0)
        assert np.all(gm.g[:, 2] == 0.0)  # dividing line

    def test_split_flips_under_direction_reversal(self):
        gm = split_gain(GRID, (1.0, 0.0))
        back = split_gain(GRID, (-1.0, 0.0))
        np.testing.assert_array_equal(back.g, -gm.g)

    def test_tracking_is_the_coordinate_along_dir(self):
        gm = tracking_gain(GRID, (0.0, 1.0))
        _, yy = GRID.mesh()
        np.testing.assert_allclose(gm.g, yy, rtol=0, atol=0)

    def test_tracking_is_odd(self):
        gm = tracking_gain(GRID, unit_direction(30.0))
        np.testing.assert_allclose(gm.g, -gm.g[::-1, ::-1], atol=1e-15)

    def test_direction_is_normalized_internally(self):
        a = tracking_gain(GRID, (2.0, 0.0))
        b = tracking_gain(GRID, (1.0, 0.0))
        np.testing.assert_allclose(a.g, b.g, rtol=1e-15)

    def test_rejects_nonfinite_and_mismatched(self):
        with pytest.raises(ConfigError):
            GainMap(GRID, np.full(GRID.shape, np.nan))
        with pytest.raises(ConfigError):
            GainMap(GRID, np.zeros((3, 3)))
        with pytest.raises(ConfigError):
            split_gain(GRID, (0.0, 0.0))


class TestMotionSignal:
    def test_reference_equal_frames_give_zero(self):
        ref = expected_intensity(MODEL, U0, 0.0, 1e4)
        frames = [Frame(GRID, ref.values, t=0.0), Frame(GRID, ref.values, t=1.0)]
        out = motion_signal(frames, ref, tracking_gain(GRID, (1.0, 0.0)))
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_noiseless_tracking_modulation_depth(self):
        """Unit-norm tracking readout of a small sinusoidal displacement:
        mu = 2 xi0 / w0."""
        xi0 = 0.02
        drive = DriveConfig(xi0=xi0, n_frames=200)  # ten full periods
        noise = NoiseConfig(shot=False)
        frames = record_sequence(MODEL, U0, drive, noise, 7e4, seed=0)
        ref = reference_frame(MODEL, U0, 7e4, m_frames=0)
        gain = normalize_gain(tracking_gain(GRID, (1.0, 0.0)), U0_AMP)
        series = motion_signal(frames, ref, gain)
        mu = modulation_depth(series, 7e4)
        assert mu == pytest.approx(2 * xi0 / BEAM.w0, rel=1e-2)

    def test_split_to_optimal_amplitude_ratio(self):
        drive = DriveConfig(xi0=0.02, n_frames=200)
        frames = record_sequence(MODEL, U0, drive, NoiseConfig(shot=False), 7e4, seed=0)
        ref = reference_frame(MODEL, U0, 7e4, m_frames=0)
        amps = {}
        for gain in (normalize_gain(split_gain(GRID, (1.0, 0.0)), U0_AMP),
                     optimal_gain(U0_AMP, V)):
            amps[gain.label] = motion_signal(frames, ref, gain).std()
        assert amps["split"] / amps["optimal"] == pytest.approx(np.sqrt(2 / np.pi), rel=1e-2)

    def test_amplitude_linear_in_drive(self):
        ref = reference_frame(MODEL, U0, 7e4, m_frames=0)
        gain = normalize_gain(tracking_gain(GRID, (1.0, 0.0)), U0_AMP)
        amps = []
        for xi0 in (0.01, 0.04):
            drive = DriveConfig(xi0=xi0, n_frames=40)
            frames = record_sequence(MODEL, U0, drive, NoiseConfig(shot=False), 7e4, seed=0)
            amps.append(motion_signal(frames, ref, gain).std())
        assert amps[1] / amps[0] == pytest.approx(4.0, rel=1e-2)

    def test_scaling_gain_scales_signal_but_not_snr(self):
        drive = DriveConfig(xi0=0.02, n_frames=100)
        frames = record_sequence(MODEL, U0, drive, NoiseConfig(), 1e4, seed=3)
        quiet = record_sequence(MODEL, U0, DriveConfig(xi0=0.0, n_frames=100), NoiseConfig(), 1e4, seed=4)
        ref = reference_frame(MODEL, U0, 1e4, m_frames=0)
        gain = tracking_gain(GRID, (1.0, 0.0))
        scaled = GainMap(GRID, 7.5 * gain.g, gain.label)
        s1, s2 = (motion_signal(frames, ref, g) for g in (gain, scaled))
        np.testing.assert_allclose(s2, 7.5 * s1, rtol=1e-9)
        n1, n2 = (motion_signal(quiet, ref, g) for g in (gain, scaled))
        mu1, mu2 = modulation_depth(s1, 1e4), modulation_depth(s2, 1e4)
        assert mu2 == pytest.approx(7.5 * mu1, rel=1e-9)
        assert snr(mu2, n2, 1e4) == pytest.approx(snr(mu1, n1, 1e4), rel=1e-9)
        p1 = projection(gain, U0_AMP, V)
        p2 = projection(scaled, U0_AMP, V)
        assert p2 == pytest.approx(p1, abs=1e-12)

    def test_grid_mismatch_rejected(self):
        ref = reference_frame(MODEL, U0, 1e4, m_frames=0)
        other = PixelGrid(64, 64, 1 / 8)
        with pytest.raises(ConfigError):
            motion_signal([Frame(GRID, np.zeros(GRID.shape), 0.0)], ref, tracking_gain(other, (1, 0)))
        with pytest.raises(ConfigError):
            motion_signal([], ref, tracking_gain(GRID, (1, 0)))


class TestBarycenterIdentities:
    def test_tracking_signal_is_barycenter_of_difference(self):
        rng = substream(5, 1)
        ref = RealField(GRID, rng.uniform(0.5, 2.0, GRID.shape))
        frames = [Frame(GRID, rng.uniform(0.0, 3.0, GRID.shape), t=0.0) for _ in range(4)]
        gain = tracking_gain(GRID, (1.0, 0.0))
        series = motion_signal(frames, ref, gain)
        for fr, got in zip(frames, series):
            diff = fr.counts - ref.values
            total = diff.sum()
            want = total * barycenter(RealField(GRID, diff))[0]
            assert got == pytest.approx(want, rel=1e-10)

    def test_symmetric_reference_reduces_to_frame_barycenter(self):
        ref = reference_frame(MODEL, U0, 7e4, m_frames=0)
        drive = DriveConfig(xi0=0.03, n_frames=5)
        frames = record_sequence(MODEL, U0, drive, NoiseConfig(shot=False), 7e4, seed=0)
        gain = tracking_gain(GRID, (1.0, 0.0))
        series = motion_signal(frames, ref, gain)
        scale = max(abs(s) for s in series)
        for fr, got in zip(frames, series):
            want = float(fr.counts.sum()) * barycenter(fr)[0]
            assert abs(got - want) <= 1e-10 * scale

    def test_barycenter_basics(self):
        b = barycenter(U0)
        assert np.allclose(b, 0.0, atol=1e-10)
        moved = MODEL.transmit(U0, 0.25)
        assert barycenter(moved)[0] == pytest.approx(-0.25, abs=1e-3)
        doubled = RealField(GRID, 2.0 * moved.intensity)
        np.testing.assert_allclose(barycenter(doubled), barycenter(moved), rtol=1e-12)
        with pytest.raises(DegeneracyError):
            barycenter(RealField(GRID, np.zeros(GRID.shape)))


class TestProjections:
    def test_split_projection_is_sqrt_2_over_pi(self):
        p = projection(split_gain(GRID, (1.0, 0.0)), U0_AMP, V)
        assert p == pytest.approx(np.sqrt(2 / np.pi), rel=1e-2)

    def test_tracking_projection_has_unit_magnitude(self):
        p = projection(tracking_gain(GRID, (1.0, 0.0)), U0_AMP, V)
        assert abs(p) == pytest.approx(1.0, abs=1e-4)

    def test_optimal_projection_is_one(self):
        p = projection(optimal_gain(U0_AMP, V), U0_AMP, V)
        assert p == pytest.approx(1.0, abs=1e-4)
        exact = projection(optimal_gain(U0_AMP, V, floor=0.0), U0_AMP, V)
        assert exact == pytest.approx(1.0, abs=1e-12)

    def test_random_gains_stay_inside_unit_ball(self):
        rng = substream(9, 1)
        for _ in range(20):
            gm = GainMap(GRID, rng.standard_normal(GRID.shape))
            assert abs(projection(gm, U0_AMP, V)) <= 1 + 1e-9

    def test_detection_mode_unit_norm(self):
        vg = detection_mode(split_gain(GRID, (1.0, 0.0)), U0_AMP)
        assert energy(vg) == pytest.approx(1.0, rel=1e-12)

    def test_dark_gain_degenerate(self):
        xx, _ = GRID.mesh()
        far = GainMap(GRID, np.where(np.abs(xx) > 3.9, 1.0, 0.0))
        with pytest.raises(DegeneracyError):
            detection_mode(far, RealField(GRID, np.where(np.abs(xx) < 1.0, 1.0, 0.0)))


class TestOptimalGain:
    def test_matches_tracking_on_the_lit_support(self):
        g_opt = optimal_gain(U0_AMP, V)
        g_trk = tracking_gain(GRID, (1.0, 0.0))
        support = g_opt.g != 0
        a, b = g_opt.g[support], g_trk.g[support]
        cos = np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b))
        assert abs(cos) >= 0.999

    def test_unit_floor_degenerates(self):
        # odd grid: floor=1 keeps only the center pixel, where the odd
        # derivative mode vanishes
        g_odd = PixelGrid(129, 129, 1 / 16)
        model = PureDisplacement(direction=(1.0, 0.0))
        u = tem00(BEAM, g_odd)
        v_odd, _ = derivative_mode(lambda xi: model.transmit(u, xi))
        with pytest.raises(DegeneracyError):
            optimal_gain(u.modulus(), v_odd, floor=1.0)

    def test_disjoint_support_degenerates(self):
        xx, _ = GRID.mesh()
        left = RealField(GRID, np.where(xx < -1.0, 1.0, 0.0))
        right = RealField(GRID, np.where(xx > 1.0, 1.0, 0.0))
        with pytest.raises(DegeneracyError):
            optimal_gain(left, right)

    def test_floor_validation(self):
        with pytest.raises(ConfigError):
            optimal_gain(U0_AMP, V, floor=-0.1)
        with pytest.raises(ConfigError):
            optimal_gain(U0_AMP, V, floor=1.5)


class TestContrastAndSnr:
    def test_modulation_depth_of_constant_and_sine(self):
        assert modulation_depth(np.full(100, 3.3), 10.0) == 0.0
        t = np.arange(400)
        series = 5.0 * np.sin(2 * np.pi * t / 20)
        assert modulation_depth(series, 100.0) == pytest.approx(0.05, rel=1e-12)
        with pytest.raises(ConfigError):
            modulation_depth(np.empty(0), 10.0)

    def test_snr_formula_and_errors(self):
        noise = 2.0 * np.sin(2 * np.pi * np.arange(100) / 10)
        dmu2 = modulation_depth(noise, 50.0) ** 2
        assert snr(0.3, noise, 50.0) == pytest.approx(0.3**2 / (2 * dmu2), rel=1e-12)
        with pytest.raises(DegeneracyError):
            snr(0.3, np.zeros(100), 50.0)

    def test_quantum_limit(self):
        assert quantum_limit(7e4) == 3.5e4
        with pytest.raises(ConfigError):
            quantum_limit(0.0)

    def test_shot_noise_variance_of_unit_norm_mode_is_n(self):
        """Var(xhat) = N for any unit-norm detection mode under Poisson noise."""
        g64 = PixelGrid(64, 64, 1 / 8)
        u = tem00(BEAM, g64)
        lam = expected_intensity(PureDisplacement(direction=(1.0, 0.0)), u, 0.0, 7e4)
        m = 4000
        frames = static_frames(g64, lam.values, m, seed=21)
        for raw in (tracking_gain(g64, (1.0, 0.0)), split_gain(g64, (1.0, 0.0))):
            gain = normalize_gain(raw, u.modulus())
            series = motion_signal(frames, lam, gain)
            var = np.var(series, ddof=1)
            se = 7e4 * np.sqrt(2.0 / (m - 1))
            assert abs(var - 7e4) <= 3 * se


class TestFisherInformation:
    def test_crb_matches_analytic_waist(self):
        g256 = PixelGrid(256, 256, 1 / 32)
        u = tem00(BEAM, g256)
        model = PureDisplacement(direction=(1.0, 0.0))
        got = crb(model, u, 7e4)
        assert got == pytest.approx(BEAM.w0**2 / (4 * 7e4), rel=2e-2)
        _, a = derivative_mode(lambda xi: model.transmit(u, xi))
        assert fisher_info(model, u, 7e4) == pytest.approx(4 * 7e4 / a**2, rel=1e-2)

    def test_fisher_scales_linearly_in_photons(self):
        f1 = fisher_info(MODEL, U0, 1e4)
        f2 = fisher_info(MODEL, U0, 2e4)
        assert f2 / f1 == pytest.approx(2.0, rel=1e-12)

    def test_photon_validation(self):
        with pytest.raises(ConfigError):
            fisher_info(MODEL, U0, 0.0)


class TestMotionDirection:
    def test_pure_x_drive_noiseless(self):
        drive = DriveConfig(xi0=0.05, n_frames=40)
        frames = record_sequence(MODEL, U0, drive, NoiseConfig(shot=False), 7e4, seed=0)
        ref = reference_frame(MODEL, U0, 7e4, m_frames=0)
        d = motion_direction(frames, ref)
        assert np.degrees(np.arctan2(d[1], d[0])) == pytest.approx(0.0, abs=0.5)

    def test_tilted_drive_with_shot_noise(self):
        model = PureDisplacement(direction=unit_direction(10.0))
        g64 = PixelGrid(64, 64, 1 / 8)
        u = tem00(BEAM, g64)
        drive = DriveConfig(xi0=0.05, n_frames=400)
        frames = record_sequence(model, u, drive, NoiseConfig(), 7e4, seed=1)
        ref = reference_frame(model, u, 7e4, m_frames=0)
        d = motion_direction(frames, ref)
        assert np.degrees(np.arctan2(d[1], d[0])) == pytest.approx(10.0, abs=1.5)

    def test_constant_frames_are_ill_defined(self):
        ref = reference_frame(MODEL, U0, 1e4, m_frames=0)
        frames = [Frame(GRID, ref.values, t=float(j)) for j in range(10)]
        with pytest.raises(DegeneracyError, match="ill-defined"):
            motion_direction(frames, ref)

    def test_isotropic_shot_noise_cloud_is_ill_defined(self):
        g64 = PixelGrid(64, 64, 1 / 8)
        u = tem00(BEAM, g64)
        lam = expected_intensity(PureDisplacement(direction=(1.0, 0.0)), u, 0.0, 1e4)
        frames = static_frames(g64, lam.values, 4000, seed=13)
        with pytest.raises(DegeneracyError, match="ill-defined"):
            motion_direction(frames, lam)


class TestIntensitySeries:
    def test_static_noiseless_depth_is_zero(self):
        ref = reference_frame(MODEL, U0, 1e4, m_frames=0)
        frames = [Frame(GRID, ref.values, t=float(j)) for j in range(5)]
        series, depth = intensity_series(frames)
        np.testing.assert_allclose(series, 1.0, rtol=1e-12)
        assert depth == 0.0

    def test_pure_displacement_decouples_intensity(self):
        drive = DriveConfig(xi0=0.05, n_frames=60)
        frames = record_sequence(MODEL, U0, drive, NoiseConfig(shot=False), 7e4, seed=0)
        _, depth = intensity_series(frames)
        assert depth < 1e-2

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            intensity_series([])


class TestNoiseAudit:
    def setup_method(self):
        self.g32 = PixelGrid(32, 32, 0.25)
        self.u = tem00(BEAM, self.g32)
        self.model = PureDisplacement(direction=(1.0, 0.0))
        self.lam = expected_intensity(self.model, self.u, 0.0, 2000.0)

    def test_band_zeroes_expected_pixels(self):
        masks = balanced_masks(self.g32, (1.0, 0.0), [1.0])
        xx, _ = self.g32.mesh()
        inside = np.abs(xx) <= 0.5
        assert np.all(masks[0].g[inside] == 0.0)
        assert np.all(masks[0].g[~inside] != 0.0)

    def test_full_width_band_is_empty(self):
        with pytest.raises(DegeneracyError, match="empty"):
            balanced_masks(self.g32, (1.0, 0.0), [100.0])

    def test_default_widths_span_pixel_range(self):
        widths = default_audit_widths(self.g32)
        px = widths / self.g32.pitch
        assert px[0] == 1
        assert px[-1] == round(60 * 32 / 64)
        assert len(px) >= 8
        np.testing.assert_allclose(px, np.round(px), atol=1e-12)

    def test_shot_noise_slope_is_one(self):
        frames = static_frames(self.g32, self.lam.values, 6000, seed=31)
        masks = balanced_masks(self.g32, (1.0, 0.0), default_audit_widths(self.g32))
        audit = noise_audit(frames, masks)
        assert audit.slope == pytest.approx(1.0, abs=0.02)
        np.testing.assert_allclose(audit.var_diffs, audit.mean_sums, rtol=0.06)

    def test_classical_noise_rejected_by_balanced_masks(self):
        drive = DriveConfig(xi0=0.0, n_frames=3000)
        noise = NoiseConfig(classical_rms=0.05)
        frames = record_sequence(self.model, self.u, drive, noise, 2000.0, seed=8)
        masks = balanced_masks(self.g32, (1.0, 0.0), default_audit_widths(self.g32))
        audit = noise_audit(frames, masks)
        assert audit.slope == pytest.approx(1.0, abs=0.05)
        totals = np.array([float(fr.counts.sum()) for fr in frames])
        plain_ratio = np.var(totals, ddof=1) / totals.mean()
        assert plain_ratio > 2.0

    def test_input_validation(self):
        frames = static_frames(self.g32, self.lam.values, 5, seed=1)
        with pytest.raises(ConfigError):
            noise_audit(frames, [])
        with pytest.raises(ConfigError):
            noise_audit([], balanced_masks(self.g32, (1.0, 0.0), [1.0]))


class TestReportAndSerialization:
    def test_report_dict_round_trip(self):
        rep = EstimatorReport("optimal", 0.4, 2e-5, 100.0, 0.999, 1.0, 7e4, "shaped")
        d = rep.as_dict()
        assert list(d) == ["label", "mu", "dmu2", "snr", "projection", "a_eps", "N", "notes"]
        assert EstimatorReport(**d) == rep

    def test_report_validation(self):
        with pytest.raises(ConfigError):
            EstimatorReport("x", 0.1, 1e-5, -1.0, 0.5, 1.0, 1e4)
        with pytest.raises(ConfigError):
            EstimatorReport("x", 0.1, 1e-5, 1.0, 1.5, 1.0, 1e4)

    def test_gain_csv_round_trip(self, tmp_path):
        g5 = PixelGrid(5, 4, 0.5)
        rng = substream(2, 1)
        gm = GainMap(g5, rng.standard_normal(g5.shape), "random")
        p = tmp_path / "gain.csv"
        gain_to_csv(gm, p)
        back = gain_from_csv(p, g5, label="random")
        np.testing.assert_array_equal(back.g, gm.g)
        assert back.label == "random"

    def test_audit_csv_rows(self, tmp_path):
        from omx.estimators import NoiseAudit

        audit = NoiseAudit(np.array([10.0, 20.0]), np.array([10.5, 19.5]), 0.99)
        p = tmp_path / "audit.csv"
        audit_to_csv([2.0, 4.0], audit, p)
        with open(p, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["delta_px", "mean_sum", "var_diff"]
        assert [float(r[1]) for r in rows[1:]] == [10.0, 20.0]
        with pytest.raises(ConfigError):
            audit_to_csv([1.0], audit, p)
