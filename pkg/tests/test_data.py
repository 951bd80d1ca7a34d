import numpy as np
import pytest

from claret.data import (
    Dataset,
    Image,
    adapt_channels,
    load_dataset,
    read_image,
    resize_nearest,
    save_dataset_tree,
    synth_dataset,
    write_image,
    _synth_masks,
)
from claret.errors import (
    BadMagic,
    BadMaxval,
    BadSize,
    EmptyClass,
    NoClasses,
    Truncated,
)


class TestCodec:
    def test_p5_normalization(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        img = read_image(path)
        assert img.width == 2 and img.height == 2 and img.channels == 1
        expected = np.array([0, 128, 255, 64]).reshape(2, 2, 1) / 255.0
        assert np.array_equal(img.pixels, expected)

    def test_p6_rgb(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n1 2\n255\n" + bytes([255, 0, 0, 0, 255, 0]))
        img = read_image(path)
        assert img.channels == 3
        assert img.pixels[0, 0].tolist() == [1.0, 0.0, 0.0]

    def test_header_comments_and_whitespace(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5 # comment\n# another\n  2\t1 # w h\n255\n" + bytes([7, 9]))
        img = read_image(path)
        assert img.width == 2 and img.height == 1
        assert np.array_equal(np.round(img.pixels * 255), [[[7], [9]]])

    def test_roundtrip_pixel_bytes(self, tmp_path):
        rng = np.random.default_rng(5)
        for h, w, c in [(1, 1, 1), (3, 5, 1), (8, 2, 3), (64, 64, 1), (17, 31, 3)]:
            raw = rng.integers(0, 256, size=(h, w, c), dtype=np.uint8)
            path = tmp_path / f"r{h}x{w}x{c}.img"
            write_image(path, Image(pixels=raw / 255.0))
            back = read_image(path)
            assert np.array_equal(np.round(back.pixels * 255).astype(np.uint8), raw)

    def test_write_read_write_is_stable(self, tmp_path):
        rng = np.random.default_rng(6)
        raw = rng.integers(0, 256, size=(9, 4, 1), dtype=np.uint8)
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_image(p1, Image(pixels=raw / 255.0))
        write_image(p2, read_image(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.pbm"
        path.write_bytes(b"P4\n2 2\n" + bytes([0]))
        with pytest.raises(BadMagic):
            read_image(path)

    def test_bad_maxval(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(BadMaxval):
            read_image(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(Truncated):
            read_image(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4")
        with pytest.raises(Truncated):
            read_image(path)


class TestResize:
    def test_identity(self):
        img = Image(pixels=np.random.default_rng(0).uniform(size=(5, 7, 1)))
        out = resize_nearest(img, 5, 7)
        assert np.array_equal(out.pixels, img.pixels)

    def test_upscale_2x2_to_4x4_blocks(self):
        a, b, c, d = 0.1, 0.4, 0.7, 1.0
        img = Image(pixels=np.array([[a, b], [c, d]]).reshape(2, 2, 1))
        out = resize_nearest(img, 4, 4).pixels[:, :, 0]
        expected = np.array([
            [a, a, b, b],
            [a, a, b, b],
            [c, c, d, d],
            [c, c, d, d],
        ])
        assert np.array_equal(out, expected)

    def test_single_pixel_source(self):
        img = Image(pixels=np.full((1, 1, 1), 0.5))
        out = resize_nearest(img, 6, 3)
        assert out.pixels.shape == (6, 3, 1)
        assert (out.pixels == 0.5).all()

    def test_downscale_shape(self):
        img = Image(pixels=np.random.default_rng(1).uniform(size=(10, 10, 3)))
        assert resize_nearest(img, 3, 4).pixels.shape == (3, 4, 3)

    def test_bad_target(self):
        with pytest.raises(BadSize):
            resize_nearest(Image(pixels=np.zeros((2, 2, 1))), 0, 2)


class TestChannelAdaptation:
    def test_gray_to_rgb_replicates(self):
        gray = np.arange(4.0).reshape(2, 2, 1) / 4.0
        rgb = adapt_channels(gray, 3)
        assert rgb.shape == (2, 2, 3)
        for ch in range(3):
            assert np.array_equal(rgb[:, :, ch], gray[:, :, 0])

    def test_rgb_to_gray_averages(self):
        rgb = np.zeros((1, 1, 3))
        rgb[0, 0] = [0.3, 0.6, 0.9]
        gray = adapt_channels(rgb, 1)
        assert abs(gray[0, 0, 0] - 0.6) < 1e-12


class TestLoadDataset:
    def write_tree(self, root, spec):
        for cls, count in spec.items():
            d = root / cls
            d.mkdir(parents=True)
            for i in range(count):
                pix = np.full((4, 4, 1), (i + 1) * 0.1)
                write_image(d / f"{i}.pgm", Image(pixels=pix))

    def test_sorted_classes_and_labels(self, tmp_path):
        self.write_tree(tmp_path, {"b_second": 1, "a_first": 2})
        ds = load_dataset(tmp_path, (4, 4, 1))
        assert ds.class_names == ("a_first", "b_second")
        assert [s[1] for s in ds.samples] == [0, 0, 1]

    def test_single_class_rejected(self, tmp_path):
        self.write_tree(tmp_path, {"only": 2})
        with pytest.raises(NoClasses):
            load_dataset(tmp_path, (4, 4, 1))

    def test_empty_class_rejected(self, tmp_path):
        self.write_tree(tmp_path, {"a": 1})
        (tmp_path / "b").mkdir()
        with pytest.raises(EmptyClass):
            load_dataset(tmp_path, (4, 4, 1))

    def test_gray_file_loaded_as_rgb(self, tmp_path):
        self.write_tree(tmp_path, {"a": 1, "b": 1})
        ds = load_dataset(tmp_path, (4, 4, 3))
        img = ds.samples[0][0]
        assert img.shape == (4, 4, 3)
        assert np.array_equal(img[:, :, 0], img[:, :, 1])

    def test_codec_error_names_offending_file(self, tmp_path):
        self.write_tree(tmp_path, {"a": 1, "b": 1})
        bad = tmp_path / "a" / "zz_bad.pgm"
        bad.write_bytes(b"P5\n9 9\n255\n" + bytes(3))
        with pytest.raises(Truncated) as err:
            load_dataset(tmp_path, (4, 4, 1))
        assert "zz_bad.pgm" in str(err.value)

    def test_resizes_to_target(self, tmp_path):
        self.write_tree(tmp_path, {"a": 1, "b": 1})
        ds = load_dataset(tmp_path, (9, 7, 1))
        assert ds.samples[0][0].shape == (9, 7, 1)

    def test_pixels_in_unit_interval(self, tmp_path):
        self.write_tree(tmp_path, {"a": 2, "b": 2})
        ds = load_dataset(tmp_path, (4, 4, 1))
        for img, _ in ds.samples:
            assert img.min() >= 0.0 and img.max() <= 1.0


class TestSynthDataset:
    def test_counts_and_shape(self):
        ds = synth_dataset(n_per_class=5, side=32, seed=7)
        assert len(ds.samples) == 20
        assert len(ds.class_names) == 4
        assert ds.samples[0][0].shape == (32, 32, 1)

    def test_class_names_are_sorted(self):
        ds = synth_dataset(n_per_class=1, side=8, seed=0)
        assert list(ds.class_names) == sorted(ds.class_names)

    def test_deterministic(self):
        a = synth_dataset(n_per_class=3, side=16, seed=9)
        b = synth_dataset(n_per_class=3, side=16, seed=9)
        for (ia, la), (ib, lb) in zip(a.samples, b.samples):
            assert la == lb and np.array_equal(ia, ib)

    def test_noise_free_band_classes_differ_enough(self):
        ds = synth_dataset(n_per_class=1, side=32, seed=0, noise_amplitude=0.0)
        imgs = {label: img for img, label in ds.samples}
        differing = (imgs[0] != imgs[1]).mean()
        assert differing > 0.25

    def test_all_masks_are_distinct(self):
        masks = _synth_masks(32)
        for i in range(4):
            for j in range(i + 1, 4):
                assert (masks[i] != masks[j]).mean() > 0.05

    def test_values_in_unit_interval(self):
        ds = synth_dataset(n_per_class=2, side=16, seed=3)
        for img, _ in ds.samples:
            assert img.min() >= 0.0 and img.max() < 1.0

    def test_bad_size(self):
        with pytest.raises(BadSize):
            synth_dataset(n_per_class=1, side=7, seed=0)
        with pytest.raises(BadSize):
            synth_dataset(n_per_class=0, side=16, seed=0)


class TestSaveTree:
    def test_roundtrip_through_disk(self, tmp_path):
        ds = synth_dataset(n_per_class=2, side=16, seed=4)
        count = save_dataset_tree(ds, tmp_path / "tree")
        assert count == 8
        back = load_dataset(tmp_path / "tree", (16, 16, 1))
        assert back.class_names == ds.class_names
        assert len(back.samples) == len(ds.samples)
        # order within a class is the write order (filenames are zero-padded)
        for (orig, lo), (loaded, ll) in zip(ds.samples, back.samples):
            assert lo == ll
            assert np.abs(orig - loaded).max() <= 0.5 / 255 + 1e-12  # 8-bit quantization
