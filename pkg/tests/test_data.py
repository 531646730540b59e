import hashlib

import numpy as np
import pytest

from sacc.data import (CrfRecord, DegradationSpec, DeskCorpus, ImageBatch,
                       VideoClip, analyze_crf_dataset, build_desk_corpus,
                       darken, invert_darken, load_corpus, load_images,
                       load_video, parse_crf_file, quantize, read_ppm,
                       save_corpus, save_images, save_video,
                       synthetic_concave_records, write_ppm)
from sacc.errors import ConfigError, ImageReadError, InputError


class TestPpm:
    def test_round_trip_lossless_at_8bit(self, tmp_path):
        rng = np.random.default_rng(0)
        img = np.rint(rng.random((10, 14, 3)) * 255) / 255
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        np.testing.assert_array_equal(read_ppm(path), img)

    def test_solid_black_decodes_to_zeros(self, tmp_path):
        path = tmp_path / "black.ppm"
        write_ppm(path, np.zeros((4, 4, 3)))
        np.testing.assert_array_equal(read_ppm(path), np.zeros((4, 4, 3)))

    def test_fixture_checksum(self, tmp_path):
        # fixture generated deterministically at build time; checksum frozen
        rng = np.random.default_rng(314159)
        img = np.rint(rng.random((8, 8, 3)) * 255) / 255
        path = tmp_path / "fixture.ppm"
        write_ppm(path, img)
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        assert digest == ("e0a67019c743a666315e667408cc7014"
                          "796544e947cdbe0db3f0a4fe56612172")

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "comment.ppm"
        body = bytes([7, 8, 9] * 4)
        path.write_bytes(b"P6\n# a comment\n2 2\n255\n" + body)
        img = read_ppm(path)
        assert img.shape == (2, 2, 3)
        assert abs(img[0, 0, 0] - 7 / 255) < 1e-12

    def test_corrupt_file_names_the_file(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P6\n2 2\n255\nshort")
        with pytest.raises(ImageReadError, match="bad.ppm"):
            read_ppm(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageReadError, match="nope.ppm"):
            load_images(tmp_path / "nope.ppm")

    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = np.rint(rng.random((6, 6, 3)) * 255) / 255
        batch = ImageBatch(data=img[None], bit_depth=256, ids=["x"])
        save_images(batch, tmp_path, fmt="png")
        loaded = load_images(tmp_path / "x.png")
        np.testing.assert_array_equal(loaded.data[0], img)


class TestDarken:
    def _batch(self, rng, n=2):
        return ImageBatch(data=rng.random((n, 8, 8, 3)), bit_depth=256)

    def test_identity_spec(self):
        rng = np.random.default_rng(2)
        batch = self._batch(rng)
        spec = DegradationSpec(gamma=1.0, bias=(1, 1, 1), noise_sigma=0.0)
        np.testing.assert_array_equal(darken(batch, spec).data, batch.data)

    def test_gamma_two_on_half(self):
        batch = ImageBatch(data=np.full((1, 2, 2, 3), 0.5), bit_depth=256)
        spec = DegradationSpec(gamma=2.0, bias=(1, 1, 1), noise_sigma=0.0)
        np.testing.assert_allclose(darken(batch, spec).data, 0.25, atol=1e-15)

    def test_analytic_inverse_restores_after_requantization(self):
        rng = np.random.default_rng(3)
        data = quantize(rng.random((3, 12, 12, 3)), 256)
        batch = ImageBatch(data=data, bit_depth=256)
        spec = DegradationSpec(gamma=4.0, bias=(0.9, 1.0, 0.8),
                               noise_sigma=0.0, seed=1)
        restored = invert_darken(darken(batch, spec), spec)
        requant = quantize(restored.data, 256)
        assert np.abs(requant - data).max() <= 1.0 / (2 * 255) + 1e-12

    def test_monotone_per_pixel(self):
        values = np.sort(np.random.default_rng(4).random(100))
        batch = ImageBatch(data=np.tile(values[None, :, None, None], (1, 1, 1, 3)),
                           bit_depth=256)
        spec = DegradationSpec(gamma=3.0, bias=(0.7, 0.9, 1.0), noise_sigma=0.0)
        dark = darken(batch, spec).data[0, :, 0, 0]
        assert (np.diff(dark) >= 0).all()

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(5)
        batch = self._batch(rng)
        spec = DegradationSpec(gamma=4.0, noise_sigma=0.05, seed=77)
        a = darken(batch, spec).data
        b = darken(batch, spec).data
        assert a.tobytes() == b.tobytes()

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            DegradationSpec(gamma=0.5)
        with pytest.raises(ConfigError):
            DegradationSpec(bias=(0.0, 1.0, 1.0))
        with pytest.raises(ConfigError):
            DegradationSpec(noise_sigma=-1.0)


class TestCrfAnalysis:
    def test_concave_power_curve_fraction_one(self):
        grid = np.linspace(0, 1, 1024)
        stats = analyze_crf_dataset([CrfRecord("pow", grid ** 0.4)])
        assert stats.negative_fraction == 1.0
        assert stats.curve_classes == ["concave"]

    def test_linear_curve_fraction_zero(self):
        # arange/256 is exactly representable, so second diffs are exactly 0
        grid = np.arange(256) / 256.0
        stats = analyze_crf_dataset([CrfRecord("lin", grid)])
        assert stats.negative_fraction == 0.0
        assert stats.curve_classes == ["neutral"]

    def test_resolution_invariance_for_analytic_curves(self):
        for n in (64, 256, 1024):
            grid = np.linspace(0, 1, n)
            stats = analyze_crf_dataset([CrfRecord("pow", grid ** 0.4)])
            assert stats.negative_fraction == 1.0

    def test_bundled_synthetic_set_is_fully_concave(self):
        stats = analyze_crf_dataset(synthetic_concave_records())
        assert stats.negative_fraction == 1.0

    def test_too_few_samples(self):
        with pytest.raises(InputError):
            analyze_crf_dataset([CrfRecord("tiny", np.array([0.0, 1.0]))])

    def test_empty_input(self):
        with pytest.raises(InputError):
            analyze_crf_dataset([])

    def test_parse_plain_file(self, tmp_path):
        path = tmp_path / "curves.txt"
        grid = np.linspace(0, 1, 32)
        lines = ["curve-a"] + [" ".join(f"{x:.6f}" for x in grid ** 0.5)]
        lines += ["curve-b", " ".join(f"{x:.6f}" for x in grid)]
        path.write_text("\n".join(lines))
        records = parse_crf_file(path)
        assert [r.name for r in records] == ["curve-a", "curve-b"]
        assert records[0].samples.size == 32

    def test_parse_dorf_style_record_takes_trailing_block(self, tmp_path):
        # name, metadata, I = grid, B = curve; the curve is the second block
        path = tmp_path / "dorf.txt"
        grid = np.linspace(0, 1, 1024)
        curve = grid ** 0.3
        text = "\n".join([
            "agfa-like-curve",
            "I =",
            " ".join(f"{x:.6f}" for x in grid),
            "B =",
            " ".join(f"{x:.6f}" for x in curve),
        ])
        path.write_text(text)
        records = parse_crf_file(path)
        assert len(records) == 1
        np.testing.assert_allclose(records[0].samples, curve, atol=1e-6)


class TestDeskCorpus:
    @pytest.fixture(scope="class")
    def corpus(self):
        return build_desk_corpus(seed=5, n_train=60, n_test=20, size=48)

    def test_split_ids_disjoint(self, corpus):
        assert not set(corpus.normal_train.ids) & set(corpus.normal_test.ids)

    def test_darkened_is_darker(self, corpus):
        assert corpus.dark_train.data.mean() < corpus.normal_train.data.mean()

    def test_same_seed_byte_identical(self, corpus):
        again = build_desk_corpus(seed=5, n_train=60, n_test=20, size=48)
        assert corpus.normal_train.data.tobytes() == \
            again.normal_train.data.tobytes()
        assert corpus.dark_test.data.tobytes() == again.dark_test.data.tobytes()

    def test_labels_cover_all_classes(self, corpus):
        assert set(corpus.train_labels.tolist()) == set(range(10))

    def test_values_quantized_to_grid(self, corpus):
        levels = corpus.normal_train.data * 255
        np.testing.assert_allclose(levels, np.rint(levels), atol=1e-9)

    def test_save_load_round_trip(self, corpus, tmp_path):
        manifest = save_corpus(corpus, tmp_path)
        loaded = load_corpus(manifest)
        np.testing.assert_array_equal(loaded.normal_train.data,
                                      corpus.normal_train.data)
        np.testing.assert_array_equal(loaded.test_labels, corpus.test_labels)
        assert loaded.degradation == corpus.degradation


class TestVideo:
    def test_single_frame_clip(self, tmp_path):
        write_ppm(tmp_path / "a.ppm", np.zeros((6, 6, 3)))
        clip = load_video(tmp_path)
        assert len(clip) == 1

    def test_lexicographic_frame_order(self, tmp_path):
        for name, value in [("b", 0.5), ("a", 0.0), ("c", 1.0)]:
            write_ppm(tmp_path / f"{name}.ppm", np.full((4, 4, 3), value))
        clip = load_video(tmp_path)
        assert clip.frame_names == ["a", "b", "c"]
        assert clip.frames[0].max() == 0.0
        assert clip.frames[2].min() == 1.0

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        frames = np.rint(rng.random((3, 5, 5, 3)) * 255) / 255
        clip = VideoClip(frames=frames, bit_depth=256)
        save_video(clip, tmp_path / "out")
        loaded = load_video(tmp_path / "out")
        np.testing.assert_array_equal(loaded.frames, frames)

    def test_mixed_dimensions_rejected(self, tmp_path):
        write_ppm(tmp_path / "a.ppm", np.zeros((4, 4, 3)))
        write_ppm(tmp_path / "b.ppm", np.zeros((6, 6, 3)))
        with pytest.raises(InputError):
            load_video(tmp_path)
