import numpy as np
import pytest

from meshunet.mesh import (
    Mesh,
    MeshFormatError,
    beam_tri_mesh,
    l_shape_quad_mesh,
    parse_mesh_text,
    read_mesh,
    rect_quad_mesh,
    write_mesh,
)

UNIT_QUAD = """\
2 4 1 quad4
0.0 0.0
1.0 0.0
1.0 1.0
0.0 1.0
0 1 2 3
"""


def test_parse_unit_quad():
    mesh = parse_mesh_text(UNIT_QUAD)
    assert mesh.n_nodes == 4
    assert mesh.n_elements == 1
    assert mesh.n_dofs == 8
    assert mesh.elem_type == "quad4"
    assert np.array_equal(mesh.elements, [[0, 1, 2, 3]])


def test_parse_skips_comments_and_blank_lines():
    text = "# a comment\n\n" + UNIT_QUAD.replace("0 1 2 3", "# inline\n0 1 2 3")
    mesh = parse_mesh_text(text)
    assert mesh.n_nodes == 4


def test_roundtrip_preserves_bytes(tmp_path):
    mesh = l_shape_quad_mesh()
    p1 = tmp_path / "a.mesh"
    p2 = tmp_path / "b.mesh"
    write_mesh(mesh, p1)
    write_mesh(read_mesh(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_roundtrip_preserves_coordinates_exactly(tmp_path):
    mesh = beam_tri_mesh()
    path = tmp_path / "beam.mesh"
    write_mesh(mesh, path)
    back = read_mesh(path)
    assert np.array_equal(back.coords, mesh.coords)
    assert np.array_equal(back.elements, mesh.elements)


@pytest.mark.parametrize(
    "mutate, lineno",
    [
        (lambda lines: lines.__setitem__(0, "2 4 1 pent5"), 1),
        (lambda lines: lines.__setitem__(2, "1.0"), 3),
        (lambda lines: lines.__setitem__(2, "1.0 zap"), 3),
        (lambda lines: lines.__setitem__(5, "0 1 2"), 6),
        (lambda lines: lines.__setitem__(5, "0 1 2 x"), 6),
    ],
)
def test_parse_errors_name_the_line(mutate, lineno):
    lines = UNIT_QUAD.splitlines()
    mutate(lines)
    with pytest.raises(MeshFormatError, match=f"line {lineno}"):
        parse_mesh_text("\n".join(lines))


def test_out_of_range_node_index_rejected():
    with pytest.raises(ValueError, match="out of range"):
        parse_mesh_text(UNIT_QUAD.replace("0 1 2 3", "0 1 2 9"))


def test_repeated_node_in_element_rejected():
    with pytest.raises(ValueError, match="repeat"):
        parse_mesh_text(UNIT_QUAD.replace("0 1 2 3", "0 1 2 2"))


def test_orphan_node_rejected():
    text = "2 5 1 quad4\n0 0\n1 0\n1 1\n0 1\n5 5\n0 1 2 3\n"
    with pytest.raises(ValueError, match="belongs to no element"):
        parse_mesh_text(text)


def test_rect_quad_mesh_counts():
    mesh = rect_quad_mesh(4, 3, 2.0, 1.0)
    assert mesh.n_nodes == 4 * 3
    assert mesh.n_elements == 3 * 2
    assert mesh.coords[:, 0].max() == pytest.approx(2.0)
    assert mesh.coords[:, 1].max() == pytest.approx(1.0)


def test_l_shape_default_size():
    mesh = l_shape_quad_mesh()
    assert mesh.elem_type == "quad4"
    assert mesh.n_nodes == 65
    assert mesh.n_elements == 48
    # the L occupies x <= 1 union y >= 1 of the 2x2 bounding box
    x, y = mesh.coords[:, 0], mesh.coords[:, 1]
    assert np.all((x <= 1.0 + 1e-12) | (y >= 1.0 - 1e-12))
    # the bottom edge is the loadable short edge: 5 nodes at y = 0
    assert int(np.sum(y == 0.0)) == 5


def test_l_shape_quads_counterclockwise():
    mesh = l_shape_quad_mesh()
    quads = mesh.coords[mesh.elements]
    x, y = quads[..., 0], quads[..., 1]
    area2 = np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
    assert np.all(area2 > 0)


def test_beam_tri_mesh_has_hole_and_is_connected():
    mesh = beam_tri_mesh()
    assert mesh.elem_type == "tri3"
    centroids = mesh.coords[mesh.elements].mean(axis=1)
    dist = np.linalg.norm(centroids - np.array([1.0, 0.4]), axis=1)
    assert np.all(dist > 0.17), "no element centroid may fall inside the hole"
    # graded refinement: spacing near the hole is finer than at the ends
    xs = np.unique(mesh.coords[:, 0])
    gaps = np.diff(xs)
    mid = np.abs(xs[:-1] - 1.0) < 0.35
    assert gaps[mid].mean() < 0.8 * gaps[~mid].mean()


def test_beam_tri_mesh_node_budget():
    mesh = beam_tri_mesh()
    assert 50 <= mesh.n_nodes <= 110
    assert mesh.n_elements >= 60


def test_digest_is_stable_and_sensitive(tmp_path):
    mesh = l_shape_quad_mesh()
    again = l_shape_quad_mesh()
    assert mesh.digest() == again.digest()
    coords = mesh.coords.copy()
    coords[0, 0] += 1e-9
    moved = Mesh(dim=2, coords=coords, elements=mesh.elements, elem_type=mesh.elem_type)
    assert moved.digest() != mesh.digest()


def test_digest_matches_file_roundtrip(tmp_path):
    mesh = beam_tri_mesh()
    path = tmp_path / "m.mesh"
    write_mesh(mesh, path)
    assert read_mesh(path).digest() == mesh.digest()
