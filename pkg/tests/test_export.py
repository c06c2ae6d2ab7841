import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from scaunmix.export import (
    PNG_SIGNATURE,
    abundance_image,
    decode_png_gray,
    encode_png_gray,
    simplex_projection,
    to_gray,
    write_abundance_maps,
    write_simplex_csvs,
    write_spectra_csv,
)
from scaunmix.linalg import ContractError


def chunks(blob):
    pos, out = len(PNG_SIGNATURE), []
    while pos < len(blob):
        (n,) = struct.unpack(">I", blob[pos : pos + 4])
        tag, payload = blob[pos + 4 : pos + 8], blob[pos + 8 : pos + 8 + n]
        (crc,) = struct.unpack(">I", blob[pos + 8 + n : pos + 12 + n])
        out.append((tag, payload, crc))
        pos += 12 + n
    return out


def test_png_structure():
    blob = encode_png_gray(np.array([[0, 128], [255, 7]], dtype=np.uint8))
    assert blob.startswith(PNG_SIGNATURE)
    parts = chunks(blob)
    assert [t for t, _, _ in parts] == [b"IHDR", b"IDAT", b"IEND"]
    for tag, payload, crc in parts:
        assert zlib.crc32(tag + payload) & 0xFFFFFFFF == crc
    assert struct.unpack(">IIBBBBB", parts[0][1]) == (2, 2, 8, 0, 0, 0, 0)
    assert zlib.decompress(parts[1][1]) == bytes([0, 0, 128, 0, 255, 7])


@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_png_round_trip(img):
    np.testing.assert_array_equal(decode_png_gray(encode_png_gray(img)), img)
    assert encode_png_gray(img) == encode_png_gray(img.copy())


def test_png_rejects_bad_input():
    with pytest.raises(ContractError):
        encode_png_gray(np.zeros((2, 2), dtype=np.float64))
    with pytest.raises(ContractError):
        encode_png_gray(np.zeros((0, 3), dtype=np.uint8))


def test_uniform_third_is_gray_85():
    img = abundance_image(np.full(4, 1 / 3), 2, 2)
    assert img.shape == (2, 2) and np.all(img == 85)


def test_gray_rounding_and_clipping():
    np.testing.assert_array_equal(to_gray([0.0, 0.5, 1.0, -0.2, 1.3, 0.002]), [0, 128, 255, 0, 255, 1])


def test_abundance_image_raster_order():
    img = abundance_image(np.array([0, 1, 0, 0, 0, 1.0]), 3, 2)
    np.testing.assert_array_equal(img, [[0, 255, 0], [0, 0, 255]])
    with pytest.raises(ContractError):
        abundance_image(np.zeros(5), 3, 2)


def test_maps_and_zero_difference(tmp_path):
    a = np.full((4, 3), 1 / 3)
    paths = write_abundance_maps(tmp_path, a, 2, 2, a_true=a, permutation=[0, 1, 2])
    assert len(paths) == 6
    for k in range(3):
        assert np.all(decode_png_gray((tmp_path / f"abundance_{k}.png").read_bytes()) == 85)
        assert np.all(decode_png_gray((tmp_path / f"difference_{k}.png").read_bytes()) == 0)


def test_spectra_csv(tmp_path):
    truth = np.array([[1.0, 2.0], [3.0, 4.0]])
    extracted = truth[::-1] * 1.01
    write_spectra_csv(tmp_path / "s.csv", extracted, truth, [1, 0], wavelengths=[400, 500])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "band,wavelength,gt_0,extracted_0,gt_1,extracted_1"
    assert lines[1].split(",")[:4] == ["0", "400.0", "1.0", repr(1.01)]
    write_spectra_csv(tmp_path / "t.csv", extracted)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "band,wavelength,extracted_0,extracted_1"


def test_simplex_csvs(tmp_path, rng):
    a = rng.dirichlet(np.ones(3), size=20)
    scatter, proj = write_simplex_csvs(tmp_path, a)
    s = np.loadtxt(scatter, delimiter=",", skiprows=1)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    p = np.loadtxt(proj, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(p[:, :2], a[:, :2])


def test_simplex_projection_vertices():
    xy = simplex_projection(np.eye(3))
    np.testing.assert_allclose(np.linalg.norm(xy, axis=1), 1.0, atol=1e-15)
    np.testing.assert_allclose(simplex_projection(np.full((1, 3), 1 / 3)), [[0, 0]], atol=1e-15)
