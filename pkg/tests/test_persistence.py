import struct

import numpy as np
import pytest

from gsq import (
    ChecksumMismatch,
    Codebook,
    CorruptFile,
    PatchCorpusSpec,
    PatchTooLarge,
    QuantizerConfig,
    UnreadableImage,
    VersionMismatch,
    extract_patches,
    ingest_patches,
    init_codebook,
    load_codebook,
    preset,
    read_indices,
    read_tensor,
    reassemble,
    save_codebook,
    write_indices,
    write_tensor,
)
from gsq.persistence import decode_codebook, decode_ppm, encode_codebook, load_vectors, read_ppm, write_ppm

P6_2x2 = b"P6\n2 2\n255\n" + bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255])


def f32_codebook(cfg, seed=0):
    cb = init_codebook(cfg, seed)
    return Codebook(cb.tables.astype(np.float32), cb.init_kind)


# ---------------------------------------------------------------- codebook files


def test_round_trip_bit_identical(tmp_path):
    cfg = QuantizerConfig(12, 3, 64, shared_codebook=False, l2_lookup=True)
    cb = f32_codebook(cfg)
    save_codebook(cb, cfg, tmp_path / "a.gsqc")
    cb2, cfg2 = load_codebook(tmp_path / "a.gsqc")
    assert cfg2 == cfg
    assert cb2.tables.dtype == np.float32
    assert cb2.tables.tobytes() == cb.tables.tobytes()
    assert cb2.init_kind == "spherical_gaussian"


def test_float64_codebook_is_rounded_to_float32(tmp_path):
    cfg = QuantizerConfig(4, 1, 8)
    cb = init_codebook(cfg, 0)
    save_codebook(cb, cfg, tmp_path / "a.gsqc")
    cb2, _ = load_codebook(tmp_path / "a.gsqc")
    np.testing.assert_array_equal(cb2.tables, cb.tables.astype(np.float32))


@pytest.mark.parametrize("name, kwargs", [("lfq", {}), ("fsq", {"levels": [5, 3, 8]}), ("bsq", {"V": 6})])
def test_round_trip_presets(name, kwargs):
    D = 3 if name == "fsq" else 6
    p = preset(name, D, **kwargs)
    cb2, cfg2 = decode_codebook(encode_codebook(p.codebook, p.derived_config))
    assert cfg2 == p.derived_config
    assert cb2.tables.tobytes() == p.codebook.tables.astype(np.float32).tobytes()


def test_layout_header_and_payload_order():
    cfg = QuantizerConfig(4, 2, 3, shared_codebook=False, l2_lookup=False)
    tables = np.arange(12, dtype=np.float32).reshape(2, 3, 2)
    data = encode_codebook(Codebook(tables), cfg)
    assert data[:4] == b"GSQC"
    assert struct.unpack_from("<HH4I", data, 4) == (1, 0, 4, 2, 2, 3)
    payload = np.frombuffer(data[-4 - 48:-4], dtype="<f4")
    np.testing.assert_array_equal(payload, np.arange(12, dtype=np.float32))


def test_flipped_payload_byte_detected():
    cfg = QuantizerConfig(4, 1, 8)
    data = bytearray(encode_codebook(f32_codebook(cfg), cfg))
    data[-10] ^= 0x01
    with pytest.raises(ChecksumMismatch):
        decode_codebook(bytes(data))


def test_flipped_flag_bit_detected():
    cfg = QuantizerConfig(4, 1, 8, l2_lookup=True)
    data = bytearray(encode_codebook(f32_codebook(cfg), cfg))
    data[6] ^= 0x02
    with pytest.raises(ChecksumMismatch):
        decode_codebook(bytes(data))


def test_bad_magic(tmp_path):
    cfg = QuantizerConfig(4, 1, 8)
    data = b"XXXX" + encode_codebook(f32_codebook(cfg), cfg)[4:]
    (tmp_path / "x.gsqc").write_bytes(data)
    with pytest.raises(CorruptFile):
        load_codebook(tmp_path / "x.gsqc")


def test_version_mismatch():
    cfg = QuantizerConfig(4, 1, 8)
    data = bytearray(encode_codebook(f32_codebook(cfg), cfg))
    data[4] = 2
    with pytest.raises(VersionMismatch):
        decode_codebook(bytes(data))


def test_truncated_and_empty():
    cfg = QuantizerConfig(4, 1, 8)
    data = encode_codebook(f32_codebook(cfg), cfg)
    for cut in (0, 3, 10, len(data) - 1):
        with pytest.raises(CorruptFile):
            decode_codebook(data[:cut])


# ---------------------------------------------------------------- tensors and indices


def test_tensor_round_trip(tmp_path, rng):
    a = rng.standard_normal((3, 4, 5)).astype(np.float32)
    write_tensor(tmp_path / "t.gsqt", a)
    b = read_tensor(tmp_path / "t.gsqt")
    assert b.shape == (3, 4, 5) and b.tobytes() == a.tobytes()


def test_big_endian_tensor_readable(tmp_path):
    a = np.array([[1.5, -2.0]], dtype=">f4")
    (tmp_path / "b.gsqt").write_bytes(b"GSQT>f" + bytes([2, 0]) + struct.pack(">2I", 1, 2) + a.tobytes())
    np.testing.assert_array_equal(read_tensor(tmp_path / "b.gsqt"), [[1.5, -2.0]])


def test_tensor_corrupt(tmp_path):
    (tmp_path / "c.gsqt").write_bytes(b"GSQT<f" + bytes([1, 0]) + struct.pack("<I", 5) + b"\0" * 8)
    with pytest.raises(CorruptFile):
        read_tensor(tmp_path / "c.gsqt")


def test_index_file_layout(tmp_path):
    idx = np.array([[1, 2], [3, 0], [7, 7]])
    write_indices(tmp_path / "i.idx", idx, 8)
    raw = (tmp_path / "i.idx").read_bytes()
    assert struct.unpack("<3I", raw[:12]) == (3, 2, 8)
    assert list(struct.unpack("<6I", raw[12:])) == [1, 2, 3, 0, 7, 7]
    back, V = read_indices(tmp_path / "i.idx")
    assert V == 8 and back.tolist() == idx.tolist()


def test_load_vectors(tmp_path, rng):
    write_tensor(tmp_path / "a.gsqt", rng.standard_normal((4, 3)))
    write_tensor(tmp_path / "b.gsqt", rng.standard_normal((2, 3)))
    assert load_vectors([tmp_path / "a.gsqt", tmp_path / "b.gsqt"], 3).shape == (6, 3)


# ---------------------------------------------------------------- images and patches


def test_known_p6_patch_vector(tmp_path):
    (tmp_path / "k.ppm").write_bytes(P6_2x2)
    (vec,) = list(ingest_patches(PatchCorpusSpec([tmp_path / "k.ppm"], 2)))
    assert vec.tolist() == [[1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1]]


def test_ppm_header_comments_and_16_bit():
    img = decode_ppm(b"P6 # comment\n2 1\n# another\n65535\n" + bytes([255, 255, 0, 0, 128, 0] * 2))
    assert img.shape == (1, 2, 3)
    assert img[0, 0, 0] == 1.0 and img[0, 0, 1] == 0.0


def test_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
    write_ppm(tmp_path / "r.ppm", img)
    np.testing.assert_array_equal(read_ppm(tmp_path / "r.ppm"), img / 255.0)


@pytest.mark.parametrize("data", [b"P3\n1 1\n255\n0 0 0", b"P6\n2 2\n255\n" + b"\0" * 5, b"P6\n2\n", b"P6\nx 2 255\n"])
def test_unreadable_images(data):
    with pytest.raises(UnreadableImage):
        decode_ppm(data)


def test_missing_image(tmp_path):
    with pytest.raises(UnreadableImage):
        read_ppm(tmp_path / "nope.ppm")


def test_patch_geometry(rng):
    img = rng.random((8, 8, 3))
    p = extract_patches(img, 4, 4)
    assert p.shape == (4, 48)
    # raster order: second patch is the top-right block
    np.testing.assert_array_equal(p[1], img[0:4, 4:8].reshape(-1))


def test_constant_image_identical_patches():
    p = extract_patches(np.full((12, 12, 3), 0.5), 4, 2)
    assert np.all(p == 0.5) and p.shape == (25, 48)


def test_patch_too_large():
    with pytest.raises(PatchTooLarge):
        extract_patches(np.zeros((4, 8, 3)), 5, 1)


def test_reassemble_exact_tiling(rng):
    img = rng.random((12, 8, 3))
    np.testing.assert_array_equal(reassemble(extract_patches(img, 4, 4), 12, 8, 4, 4), img)


def test_reassemble_overlapping_and_partial(rng):
    img = rng.random((10, 11, 3))
    out = reassemble(extract_patches(img, 4, 3), 10, 11, 4, 3)
    np.testing.assert_allclose(out, img[:10, :10], atol=1e-15)


def test_ingest_deterministic(tmp_path, rng):
    for i in range(2):
        write_ppm(tmp_path / f"{i}.ppm", rng.random((9, 9, 3)))
    spec = PatchCorpusSpec([tmp_path / "0.ppm", tmp_path / "1.ppm"], 3, 2)
    a = [b.tobytes() for b in ingest_patches(spec)]
    b = [b.tobytes() for b in ingest_patches(spec)]
    assert a == b and len(a) == 2 and spec.dim == 27
