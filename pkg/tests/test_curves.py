import numpy as np
import pytest

from sacc.curves import (ConcaveCurveSet, GammaBaseline, apply_curve,
                         apply_curve_video, apply_gamma, build_curve,
                         build_integral_operator, curve_concavity_report,
                         export_curve_csv, identity_curve, import_curve_csv,
                         integrate_normalize, lookup_curves)
from sacc.data import ImageBatch, VideoClip
from sacc.engine import Tensor, tsum
from sacc.errors import ConfigError, ContractViolation, DimensionError

from helpers import check_grad, double_cumsum_oracle


class TestIntegralOperator:
    def test_order2_hand_multiplied(self):
        # B (4x3 strictly lower ones) times A (3x3 upper ones), by hand
        op = build_integral_operator(4, order=2)
        expected = np.array([[0, 0, 0], [1, 1, 1], [1, 2, 2], [1, 2, 3]],
                            dtype=float)
        np.testing.assert_array_equal(op.matrix, expected)

    def test_order1_is_strict_lower_ones(self):
        op = build_integral_operator(4, order=1)
        expected = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]],
                            dtype=float)
        np.testing.assert_array_equal(op.matrix, expected)

    @pytest.mark.parametrize("p", [4, 16, 256])
    def test_first_row_zero(self, p):
        op = build_integral_operator(p, order=2)
        np.testing.assert_array_equal(op.matrix[0], np.zeros(p - 1))

    def test_entries_nonnegative_integers(self):
        for order in (0, 1, 2, 3):
            op = build_integral_operator(16, order=order)
            assert op.matrix.min() >= 0
            np.testing.assert_array_equal(op.matrix, np.rint(op.matrix))

    def test_rows_monotone_down_columns(self):
        op = build_integral_operator(32, order=2)
        assert (np.diff(op.matrix, axis=0) >= 0).all()

    def test_bad_order_rejected(self):
        with pytest.raises(ConfigError):
            build_integral_operator(8, order=4)
        with pytest.raises(ConfigError):
            build_integral_operator(1, order=2)


class TestBuildCurve:
    def test_trailing_impulse_gives_identity_like_curve(self):
        # D·(0,0,1) = (0,1,2,3), normalized (0, 1/3, 2/3, 1)
        op = build_integral_operator(4, order=2)
        curves = build_curve(np.array([0.0, 0.0, 1.0]), op)
        np.testing.assert_allclose(curves.g[:, 0], [0, 1 / 3, 2 / 3, 1],
                                   atol=1e-15)
        assert not curves.degenerate[0]

    def test_uniform_prediction_is_strictly_concave(self):
        # D·(1,1,1) = (0,3,5,6), normalized (0, 1/2, 5/6, 1)
        op = build_integral_operator(4, order=2)
        curves = build_curve(np.array([1.0, 1.0, 1.0]), op)
        np.testing.assert_allclose(curves.g[:, 0], [0, 0.5, 5 / 6, 1],
                                   atol=1e-15)
        diffs = np.diff(curves.g[:, 0])
        np.testing.assert_allclose(diffs, [1 / 2, 1 / 3, 1 / 6], atol=1e-15)
        assert (np.diff(diffs) < 0).all()

    def test_all_zero_prediction_falls_back_to_identity(self):
        op = build_integral_operator(4, order=2)
        curves = build_curve(np.zeros(3), op)
        assert curves.degenerate[0]
        np.testing.assert_array_equal(curves.g[:, 0], identity_curve(4))

    def test_negative_entry_rejected(self):
        op = build_integral_operator(4, order=2)
        with pytest.raises(ContractViolation):
            build_curve(np.array([0.5, -0.1, 0.2]), op)

    def test_order0_allows_negative_and_passes_through(self):
        op = build_integral_operator(4, order=0)
        curves = build_curve(np.array([0.5, -0.25, 1.0]), op)
        np.testing.assert_allclose(curves.g[:, 0], [0, 0.5, -0.25, 1.0],
                                   atol=1e-15)

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_matches_cumsum_oracle(self, order):
        # raw integrals grow to ~1e5, so the 1e-12 agreement is relative
        # there and absolute on the normalized curve
        op = build_integral_operator(256, order=order)
        rng = np.random.default_rng(order)
        for _ in range(50):
            v = rng.random(255)
            c = op.matrix @ v
            oracle = double_cumsum_oracle(v, order)
            np.testing.assert_allclose(c, oracle, rtol=1e-12, atol=1e-30)
            np.testing.assert_allclose(c / c[-1], oracle / oracle[-1],
                                       rtol=0, atol=1e-12)

    def test_property_run_validity(self):
        op = build_integral_operator(256, order=2)
        rng = np.random.default_rng(42)
        v = rng.random((255, 1000)) * rng.exponential(1.0, size=(1, 1000))
        curves = build_curve(v, op)
        report = curve_concavity_report(curves)
        assert np.abs(report.start).max() <= 1e-12
        assert np.abs(report.end - 1.0).max() <= 1e-12
        assert report.monotone().all()
        assert report.concave().all()


class TestIntegrateNormalize:
    def test_matches_build_curve_bitwise(self):
        op = build_integral_operator(256, order=2)
        rng = np.random.default_rng(5)
        v = rng.random((255, 6))
        g_tape = integrate_normalize(Tensor(v), op)
        g_plain = build_curve(v, op)
        assert g_tape.data.tobytes() == g_plain.g.tobytes()

    def test_gradient_vs_finite_differences(self):
        op = build_integral_operator(16, order=2)
        rng = np.random.default_rng(6)
        v = Tensor(rng.random((15, 3)) + 0.05, requires_grad=True)
        weights = rng.normal(size=(16, 3))
        loss = tsum(integrate_normalize(v, op) * Tensor(weights))
        loss.backward()

        def redo():
            g = integrate_normalize(Tensor(v.data), op)
            return (g.data * weights).sum()

        check_grad(redo, v, n_coords=30, tol=1e-6)

    def test_degenerate_column_gets_zero_gradient(self):
        op = build_integral_operator(8, order=2)
        v = np.zeros((7, 2))
        v[:, 1] = 1.0
        vt = Tensor(v, requires_grad=True)
        loss = tsum(integrate_normalize(vt, op))
        loss.backward()
        np.testing.assert_array_equal(vt.grad[:, 0], np.zeros(7))
        assert np.abs(vt.grad[:, 1]).sum() > 0


def _levels_image(levels, bit_depth=4):
    """Build an ImageBatch whose pixels sit exactly on the given levels."""
    arr = np.asarray(levels, dtype=np.float64) / (bit_depth - 1)
    return ImageBatch(data=arr[None, :, :, None].repeat(3, axis=3),
                      bit_depth=bit_depth)


class TestApplyCurve:
    def test_identity_curve_is_identity(self):
        rng = np.random.default_rng(7)
        data = np.rint(rng.random((2, 8, 8, 3)) * 255) / 255
        batch = ImageBatch(data=data, bit_depth=256)
        curves = ConcaveCurveSet(g=np.tile(identity_curve(256)[:, None], 3),
                                 degenerate=np.zeros(3, bool), order=2)
        out = apply_curve(batch, curves)
        np.testing.assert_allclose(out.data, batch.data, atol=1e-12)

    def test_leading_impulse_lookup(self):
        # v=(1,0,0): D·v = (0,1,1,1) -> g = (0,1,1,1); levels {0,1,2,3}
        op = build_integral_operator(4, order=2)
        curves = build_curve(np.tile([[1.0], [0.0], [0.0]], 3), op)
        batch = _levels_image(np.array([[0, 1], [2, 3]]))
        out = apply_curve(batch, curves)
        np.testing.assert_array_equal(
            np.rint(out.data[0, :, :, 0] * 3), [[0, 3], [3, 3]])

    def test_depth_mismatch(self):
        curves = ConcaveCurveSet(g=np.tile(identity_curve(16)[:, None], 3),
                                 degenerate=np.zeros(3, bool), order=2)
        batch = ImageBatch(data=np.zeros((1, 4, 4, 3)), bit_depth=256)
        with pytest.raises(DimensionError):
            apply_curve(batch, curves)

    def test_channel_separability(self):
        rng = np.random.default_rng(8)
        data = np.rint(rng.random((1, 6, 6, 3)) * 255) / 255
        batch = ImageBatch(data=data, bit_depth=256)
        base = np.tile(identity_curve(256)[:, None], 3)
        modified = base.copy()
        modified[:, 1] = np.minimum(1.0, base[:, 1] * 1.5)
        out_base = apply_curve(batch, ConcaveCurveSet(base, np.zeros(3, bool), 2))
        out_mod = apply_curve(batch, ConcaveCurveSet(modified, np.zeros(3, bool), 2))
        np.testing.assert_array_equal(out_base.data[..., 0], out_mod.data[..., 0])
        np.testing.assert_array_equal(out_base.data[..., 2], out_mod.data[..., 2])
        assert not np.array_equal(out_base.data[..., 1], out_mod.data[..., 1])

    def test_commutes_with_spatial_permutation_and_rotation(self):
        rng = np.random.default_rng(9)
        data = np.rint(rng.random((1, 6, 6, 3)) * 255) / 255
        batch = ImageBatch(data=data, bit_depth=256)
        op = build_integral_operator(256, order=2)
        curves = build_curve(rng.random((255, 3)), op)
        enhanced = apply_curve(batch, curves)
        for k in range(4):
            rotated = ImageBatch(data=np.rot90(data, k, axes=(1, 2)).copy(),
                                 bit_depth=256)
            np.testing.assert_array_equal(
                apply_curve(rotated, curves).data,
                np.rot90(enhanced.data, k, axes=(1, 2)))
        perm = rng.permutation(36)
        flat = data.reshape(1, 36, 3)[:, perm].reshape(1, 6, 6, 3)
        np.testing.assert_array_equal(
            apply_curve(ImageBatch(data=flat, bit_depth=256), curves).data,
            enhanced.data.reshape(1, 36, 3)[:, perm].reshape(1, 6, 6, 3))


class TestLookupCurves:
    def test_matches_apply_curve(self):
        rng = np.random.default_rng(10)
        data = np.rint(rng.random((2, 5, 5, 3)) * 255) / 255
        op = build_integral_operator(256, order=2)
        g_cols = np.empty((256, 6))
        outs = []
        for n in range(2):
            curves = build_curve(rng.random((255, 3)), op)
            g_cols[:, n * 3:(n + 1) * 3] = curves.g
            outs.append(apply_curve(
                ImageBatch(data=data[n:n + 1], bit_depth=256), curves).data)
        levels = np.rint(data * 255).astype(np.intp).transpose(0, 3, 1, 2)
        looked = lookup_curves(levels, Tensor(g_cols))
        expected = np.concatenate(outs).transpose(0, 3, 1, 2)
        np.testing.assert_array_equal(looked.data, expected)

    def test_gradient_is_per_bin_pixel_count(self):
        # d(sum(out))/d g[p, col] == number of pixels at level p in that
        # image/channel (scatter-add oracle), cross-checked by FD.
        rng = np.random.default_rng(11)
        levels = rng.integers(0, 8, size=(1, 3, 4, 4))
        g = Tensor(np.tile(identity_curve(8)[:, None], 3), requires_grad=True)
        tsum(lookup_curves(levels, g)).backward()
        for ch in range(3):
            counts = np.bincount(levels[0, ch].ravel(), minlength=8)
            np.testing.assert_array_equal(g.grad[:, ch], counts)
        check_grad(lambda: lookup_curves(levels, Tensor(g.data)).data.sum(),
                   g, n_coords=24, tol=1e-6)


class TestVideoAndGamma:
    def _clip(self, rng, t=3):
        frames = np.rint(rng.random((t, 6, 6, 3)) * 255) / 255
        return VideoClip(frames=frames, bit_depth=256)

    def test_identical_frames_stay_identical(self):
        rng = np.random.default_rng(12)
        frame = np.rint(rng.random((6, 6, 3)) * 255) / 255
        clip = VideoClip(frames=np.stack([frame, frame]), bit_depth=256)
        op = build_integral_operator(256, order=2)
        curves = build_curve(rng.random((255, 3)), op)
        out = apply_curve_video(clip, curves)
        np.testing.assert_array_equal(out.frames[0], out.frames[1])

    def test_framewise_oracle_equality(self):
        rng = np.random.default_rng(13)
        clip = self._clip(rng)
        op = build_integral_operator(256, order=2)
        curves = build_curve(rng.random((255, 3)), op)
        out = apply_curve_video(clip, curves)
        for t in range(len(clip)):
            frame_batch = ImageBatch(data=clip.frames[t:t + 1], bit_depth=256)
            np.testing.assert_array_equal(out.frames[t],
                                          apply_curve(frame_batch, curves).data[0])

    def test_gamma_identity(self):
        rng = np.random.default_rng(14)
        batch = ImageBatch(data=rng.random((1, 4, 4, 3)), bit_depth=256)
        out = apply_gamma(batch, GammaBaseline(gamma=(1.0, 1.0, 1.0)))
        np.testing.assert_array_equal(out.data, batch.data)

    def test_gamma_half_on_quarter(self):
        batch = ImageBatch(data=np.full((1, 2, 2, 3), 0.25), bit_depth=256)
        out = apply_gamma(batch, GammaBaseline(gamma=(0.5, 0.5, 0.5)))
        np.testing.assert_allclose(out.data, 0.5, atol=1e-15)

    def test_gamma_below_one_brightens(self):
        rng = np.random.default_rng(15)
        batch = ImageBatch(data=rng.random((2, 5, 5, 3)), bit_depth=256)
        out = apply_gamma(batch, GammaBaseline(gamma=(0.6, 0.6, 0.6)))
        assert (out.data >= batch.data - 1e-15).all()

    def test_gamma_validation(self):
        with pytest.raises(ConfigError):
            GammaBaseline(gamma=(0.0, 0.5, 0.5))


class TestDiagnosticsAndCsv:
    def test_identity_curve_report(self):
        curves = ConcaveCurveSet(g=np.tile(identity_curve(256)[:, None], 3),
                                 degenerate=np.zeros(3, bool), order=2)
        report = curve_concavity_report(curves)
        np.testing.assert_allclose(report.min_first_diff, 1 / 255, atol=1e-15)
        np.testing.assert_allclose(report.max_second_diff, 0.0, atol=1e-15)

    def test_strictly_decreasing_first_diffs(self):
        op = build_integral_operator(4, order=2)
        curves = build_curve(np.array([1.0, 1.0, 1.0]), op)
        report = curve_concavity_report(curves)
        assert report.max_second_diff[0] < 0

    def test_order1_monotone_but_not_concave_somewhere(self):
        op = build_integral_operator(64, order=1)
        rng = np.random.default_rng(16)
        saw_violation = False
        for _ in range(50):
            curves = build_curve(rng.random((63, 3)), op)
            report = curve_concavity_report(curves)
            assert report.monotone().all()
            if not report.concave().all():
                saw_violation = True
        assert saw_violation

    def test_csv_round_trip(self, tmp_path):
        op = build_integral_operator(256, order=2)
        rng = np.random.default_rng(17)
        curves = build_curve(rng.random((255, 3)), op)
        path = tmp_path / "curve.csv"
        export_curve_csv(curves, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "channel,level,g"
        assert len(lines) == 1 + 3 * 256
        loaded = import_curve_csv(path)
        np.testing.assert_allclose(loaded.g, curves.g, atol=5e-10)
