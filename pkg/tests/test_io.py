import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rtsplat.io import ParseError, load_csv, load_obj, load_pfm, load_png, save_csv, save_obj, save_pfm, save_png
from rtsplat.scenes import icosphere

CUBE = """\
# unit cube, quads
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
"""


def write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_cube_quads_triangulated(tmp_path):
    mesh = load_obj(write(tmp_path, CUBE))
    assert mesh.num_vertices == 8 and mesh.num_faces == 12
    assert mesh.normals is None and mesh.uvs is None


def test_polygon_becomes_fan(tmp_path):
    mesh = load_obj(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0.5 2 0\nv 0 1 0\nf 1 2 3 4 5\n"))
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3], [0, 3, 4]]


def test_relative_indices_and_slashes(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvn 0 0 1\nf -3/1/1 -2/2/1 -1/3/1\n"
    mesh = load_obj(write(tmp_path, text))
    assert mesh.faces.tolist() == [[0, 1, 2]]
    assert np.allclose(mesh.uvs, [[0, 0], [1, 0], [0, 1]])
    assert np.allclose(mesh.normals, [[0, 0, 1]] * 3)


@pytest.mark.parametrize(
    "text, line",
    [
        ("v 0 0 0\nv 1 0\n", 2),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 4\n", 5),
        ("v 0 0 0\nv 1 0 0\nf 1 2\n", 3),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 x 3\n", 4),
    ],
)
def test_parse_errors_carry_line_numbers(tmp_path, text, line):
    with pytest.raises(ParseError) as exc:
        load_obj(write(tmp_path, text))
    assert exc.value.line == line
    assert f":{line}:" in str(exc.value)


def test_obj_round_trip(tmp_path):
    mesh = icosphere(1)
    mesh = mesh.with_(normals=mesh.vertex_normals())
    save_obj(tmp_path / "a.obj", mesh)
    back = load_obj(tmp_path / "a.obj")
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)
    assert np.array_equal(back.normals, mesh.normals)


@settings(max_examples=25)
@given(arrays(np.float32, (3, 5, 3), elements=st.floats(-1e6, 1e6, width=32)))
def test_pfm_bit_exact(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("pfm") / "x.pfm"
    save_pfm(p, img)
    assert np.array_equal(load_pfm(p), img)


def test_pfm_single_channel_and_orientation(tmp_path):
    img = np.arange(12, dtype=np.float32).reshape(3, 4)
    save_pfm(tmp_path / "g.pfm", img)
    raw = (tmp_path / "g.pfm").read_bytes()
    assert raw.startswith(b"Pf\n4 3\n-1.0\n")
    # first stored row is the bottom image row
    assert np.frombuffer(raw[-48:-32], "<f4").tolist() == [8, 9, 10, 11]
    assert np.array_equal(load_pfm(tmp_path / "g.pfm"), img)


def test_pfm_rejects_two_channels(tmp_path):
    with pytest.raises(ValueError):
        save_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))


def test_truncated_pfm(tmp_path):
    (tmp_path / "t.pfm").write_bytes(b"PF\n4 4\n-1.0\n" + b"\0" * 10)
    with pytest.raises(ParseError):
        load_pfm(tmp_path / "t.pfm")


def test_png_round_trip_quantizes(tmp_path):
    img = np.random.default_rng(0).uniform(-0.2, 1.2, size=(6, 7, 3))
    save_png(tmp_path / "a.png", img)
    back = load_png(tmp_path / "a.png")
    assert back.shape == img.shape
    assert np.abs(back - np.clip(img, 0, 1)).max() <= 0.5 / 255 + 1e-12


def test_csv_round_trip_keeps_floats_exact(tmp_path):
    rows = [[0, 0.1, "a"], [1, 1 / 3, "b"]]
    save_csv(tmp_path / "x.csv", ["i", "loss", "tag"], rows)
    header, back = load_csv(tmp_path / "x.csv")
    assert header == ["i", "loss", "tag"]
    assert [float(r[1]) for r in back] == [0.1, 1 / 3]
