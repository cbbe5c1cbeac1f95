import numpy as np
import pytest

from streetcross.netpbm import NetPBMError, read_label_file, read_ppm, write_label_file, write_ppm


class TestPPM:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pix = rng.integers(0, 256, (5, 7, 3)) / 255.0
        write_ppm(tmp_path / "a.ppm", pix)
        np.testing.assert_allclose(read_ppm(tmp_path / "a.ppm"), pix, atol=1e-15)

    def test_header_with_comment(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
        np.testing.assert_array_equal(read_ppm(path), [[[1, 0, 0], [0, 0, 1]]])

    def test_sixteen_bit(self, tmp_path):
        path = tmp_path / "d.ppm"
        path.write_bytes(b"P6 1 1 65535\n" + np.array([65535, 0, 32768], dtype=">u2").tobytes())
        np.testing.assert_allclose(read_ppm(path)[0, 0], [1.0, 0.0, 32768 / 65535])

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "e.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(NetPBMError, match="P6"):
            read_ppm(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "f.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
        with pytest.raises(NetPBMError, match="truncated"):
            read_ppm(path)

    def test_bad_shape(self, tmp_path):
        with pytest.raises(NetPBMError):
            write_ppm(tmp_path / "g.ppm", np.zeros((4, 4)))


class TestLabels:
    def test_round_trip(self, tmp_path):
        rows = [("img_0000.ppm", "Red"), ("img_0001.ppm", "Off")]
        write_label_file(tmp_path / "labels.csv", rows)
        assert read_label_file(tmp_path / "labels.csv") == rows

    def test_bad_header(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("file,class\na.ppm,Red\n")
        with pytest.raises(NetPBMError):
            read_label_file(path)
