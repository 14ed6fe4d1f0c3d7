import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lddr.data import (
    clip_box,
    decode_pnm,
    encode_pnm,
    format_pts,
    image_size,
    load_image,
    load_manifest,
    parse_pts,
    read_pts,
    save_image,
    write_manifest,
    write_pts,
)
from lddr.errors import InputError, ParseError, TruncationError
from lddr.synth import SynthSpec, face_template, render_face, synth_generate


def test_parse_minimal_pts():
    text = "version: 1\nn_points: 3\n{\n1 2\n3.5 4\n-1e2 2.5E-3\n}\n"
    assert parse_pts(text).tolist() == [[1, 2], [3.5, 4], [-100.0, 0.0025]]


def test_parse_count_mismatch():
    body = "\n".join("1 1" for _ in range(67))
    with pytest.raises(ParseError, match="68"):
        parse_pts(f"version: 1\nn_points: 68\n{{\n{body}\n}}\n")


@pytest.mark.parametrize(
    "text,needle",
    [
        ("version: 1\nn_points: 1\n1 2\n", "line 3"),
        ("version: 1\nn_points: 1\n{\n1 x\n}\n", "line 4"),
        ("version: 1\nn_points: 1\n{\n1 2 3\n}\n", "line 4"),
        ("version: 1\n{\n1 2\n}\n", "n_points"),
        ("version: 1\nn_points: 1\n{\n1 2\n", "'}'"),
        ("version: 1\nn_points: 0\n{\n}\n", "zero"),
    ],
)
def test_parse_errors(text, needle):
    with pytest.raises(ParseError, match=needle):
        parse_pts(text)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 70), st.just(2)), elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_pts_roundtrip(shape):
    assert np.array_equal(parse_pts(format_pts(shape)), shape)


def test_pts_file_roundtrip(tmp_path):
    p = tmp_path / "a.pts"
    write_pts(face_template(), p)
    assert np.array_equal(read_pts(p), face_template())


def test_pgm_scaling():
    data = b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64])
    img = decode_pnm(data)
    assert img.shape == (2, 2, 1)
    assert img[:, :, 0].tolist() == [[0.0, 1.0], [128 / 255, 64 / 255]]


def test_ascii_and_comments():
    img = decode_pnm(b"P2\n# comment\n2 1\n# another\n10\n0 10\n")
    assert img[0, :, 0].tolist() == [0.0, 1.0]


def test_16bit_ppm():
    raw = np.array([0, 65535, 1000], dtype=">u2").tobytes()
    img = decode_pnm(b"P6 1 1 65535\n" + raw)
    np.testing.assert_allclose(img[0, 0], [0, 1, 1000 / 65535])


def test_ppm_roundtrip(tmp_path, rng):
    q = rng.integers(0, 256, (5, 7, 3)) / 255.0
    path = tmp_path / "x.ppm"
    save_image(q, path)
    assert np.array_equal(load_image(path), q)
    assert image_size(path) == (7, 5)


def test_truncated_payload():
    data = encode_pnm(np.zeros((4, 4, 3)))
    with pytest.raises(TruncationError):
        decode_pnm(data[:-1])


@pytest.mark.parametrize("data", [b"P7\n1 1\n255\n\0", b"P5\n1\n", b"P5\n-1 1 255\n\0", b"P2\n1 1\n5\n9\n"])
def test_bad_images(data):
    with pytest.raises(ParseError):
        decode_pnm(data)


def test_values_in_unit_range(rng):
    img = decode_pnm(encode_pnm(rng.random((6, 6, 1)) * 3 - 1))
    assert img.min() >= 0 and img.max() <= 1


def _toy_manifest(tmp_path, rows):
    (tmp_path / "img.pgm").write_bytes(encode_pnm(np.zeros((10, 12))))
    write_pts([[1, 2], [3, 4], [5, 6]], tmp_path / "a.pts")
    path = tmp_path / "m.tsv"
    path.write_text(rows)
    return path


def test_manifest_order_and_paths(tmp_path):
    path = _toy_manifest(
        tmp_path,
        "img.pgm\ta.pts\t0\t0\t5\t5\n# comment\nimg.pgm\t-\t1\t1\t4\t4\nimg.pgm\ta.pts\t2\t2\t3\t3\n",
    )
    samples = load_manifest(path)
    assert [s.box for s in samples] == [(0, 0, 5, 5), (1, 1, 4, 4), (2, 2, 3, 3)]
    assert samples[1].shape is None and samples[0].shape.shape == (3, 2)
    assert samples[0].identifier == "img" and samples[0].image_path == tmp_path / "img.pgm"


def test_manifest_missing_pts(tmp_path):
    path = _toy_manifest(tmp_path, "img.pgm\tmissing.pts\t0\t0\t5\t5\n")
    with pytest.raises(InputError, match="missing.pts"):
        load_manifest(path)


def test_manifest_inconsistent_landmarks(tmp_path):
    path = _toy_manifest(tmp_path, "img.pgm\ta.pts\t0\t0\t5\t5\nimg.pgm\tb.pts\t0\t0\t5\t5\n")
    write_pts([[1, 2], [3, 4]], tmp_path / "b.pts")
    with pytest.raises(InputError, match="landmarks"):
        load_manifest(path)


def test_manifest_empty_and_malformed(tmp_path):
    assert load_manifest(_toy_manifest(tmp_path, "")) == []
    with pytest.raises(ParseError):
        load_manifest(_toy_manifest(tmp_path, "img.pgm\ta.pts\t0\t0\n"))
    with pytest.raises(InputError):
        load_manifest(tmp_path / "nope.tsv")


def test_write_manifest_roundtrip(tmp_path):
    _toy_manifest(tmp_path, "")
    write_manifest([("img.pgm", None, (0.5, 1, 2, 3))], tmp_path / "w.tsv")
    (s,) = load_manifest(tmp_path / "w.tsv")
    assert s.box == (0.5, 1.0, 2.0, 3.0) and s.pts_path is None


def test_clip_box():
    assert clip_box((-5, 2, 20, 20), 10, 10) == (0, 2, 10, 8)
    with pytest.raises(InputError):
        clip_box((20, 20, 5, 5), 10, 10)


def test_template_is_symmetric():
    from lddr.shape import flip_index_map

    t = face_template()
    mirrored = t.copy()
    mirrored[:, 0] = 1 - mirrored[:, 0]
    np.testing.assert_allclose(mirrored[flip_index_map()], t, atol=1e-12)


def test_synth_deterministic(tmp_path):
    spec = SynthSpec(seed=5, count=3)
    a, b = synth_generate(spec, tmp_path / "a"), synth_generate(spec, tmp_path / "b")
    for rel in ["manifest.tsv", "images/face_00002.ppm", "pts/face_00001.pts"]:
        assert (a.parent / rel).read_bytes() == (b.parent / rel).read_bytes()
    assert len(load_manifest(a)) == 3


def test_synth_count_zero():
    with pytest.raises(InputError):
        SynthSpec(count=0)


def test_synth_landmarks_inside_box():
    spec = SynthSpec(seed=0, count=500)
    for i in range(spec.count):
        img, lm, (x, y, w, h) = render_face(spec, i)
        assert img.shape == (160, 160, 3) and 0 <= img.min() and img.max() <= 1
        assert np.all(lm >= [x, y]) and np.all(lm <= [x + w, y + h]), f"sample {i}"
