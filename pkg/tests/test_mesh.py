import numpy as np
import pytest

from vmsfem import MeshError
from vmsfem.mesh import (Mesh, build_interval_mesh, circle_polygon,
                         classify_boundary, element_geometry, load_mesh,
                         rectangle_mesh, refine_uniform, save_mesh,
                         square_with_hole, square_with_square_hole)


def unit_square_quad():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    bf = [(0, i, "outer") for i in range(4)]
    return Mesh(nodes, [("quad", (0, 1, 2, 3))], bf)


def two_triangles():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    elems = [("triangle", (0, 1, 2)), ("triangle", (0, 2, 3))]
    bf = [(0, 0, "bottom"), (0, 1, "right"), (1, 1, "top"), (1, 2, "left")]
    return Mesh(nodes, elems, bf)


class TestIntervalMesh:
    def test_three_elements_on_0_03(self):
        m = build_interval_mesh(0.0, 0.3, 3)
        assert np.allclose(m.nodes[:, 0], [0.0, 0.1, 0.2, 0.3])
        assert m.n_elements == 3
        assert all(kind == "interval" for kind, _ in m.elements)

    def test_single_element(self):
        m = build_interval_mesh(0.0, 1.0, 1)
        assert m.n_elements == 1
        assert m.h_max == 1.0

    def test_uniform_h(self):
        m = build_interval_mesh(0.0, 1.0, 4)
        assert np.allclose(m.element_h, 0.25)

    def test_bad_inputs(self):
        with pytest.raises(MeshError):
            build_interval_mesh(0.0, 1.0, 0)
        with pytest.raises(MeshError):
            build_interval_mesh(1.0, 1.0, 3)


class TestValidation:
    def test_dangling_node_reference(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(MeshError):
            Mesh(nodes, [("triangle", (0, 1, 7))], [])

    def test_inverted_triangle(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(MeshError):
            Mesh(nodes, [("triangle", (0, 2, 1))],
                 [(0, i, "b") for i in range(3)])

    def test_interior_facet_tagged(self):
        m = two_triangles()
        bf = m.boundary_facets + [(0, 2, "oops")]  # the shared diagonal
        with pytest.raises(MeshError):
            Mesh(m.nodes, m.elements, bf)

    def test_incomplete_boundary(self):
        m = two_triangles()
        with pytest.raises(MeshError):
            Mesh(m.nodes, m.elements, m.boundary_facets[:-1])


class TestClassification:
    def test_1d_inflow_outflow(self):
        m = build_interval_mesh(0.0, 0.3, 3)
        tagging = classify_boundary(m, lambda p: np.full((len(p), 1), 0.8))
        by_tag = {t: i for i, (_, _, t) in enumerate(tagging.facets)}
        assert not tagging.facet_is_outflow(by_tag["left"])
        assert tagging.facet_is_outflow(by_tag["right"])

    def test_zero_velocity_is_outflow(self):
        m = build_interval_mesh(0.0, 1.0, 2)
        tagging = classify_boundary(m, lambda p: np.zeros((len(p), 1)))
        assert all(tagging.facet_is_outflow(i) for i in range(2))

    def test_diagonal_advection_unit_square(self):
        m = rectangle_mesh(4, 4)
        a = lambda p: np.full((len(p), 2), 0.8 / np.sqrt(2.0))
        tagging = classify_boundary(m, a)
        for i, (e, lf, _) in enumerate(tagging.facets):
            n = m.facet_normal(e, lf)
            expected = (n @ [1.0, 1.0]) >= 0
            assert tagging.facet_is_outflow(i) == expected

    def test_reordering_invariance(self, rng):
        m = two_triangles()
        perm = rng.permutation(m.n_nodes)
        inv = np.argsort(perm)
        nodes2 = m.nodes[inv]
        elems2 = [(k, tuple(int(perm[i]) for i in conn)) for k, conn in m.elements]
        bf2 = m.boundary_facets
        m2 = Mesh(nodes2, elems2, bf2)
        a = lambda p: np.column_stack([p[:, 1] * 0 + 0.3, p[:, 0] * 0 - 0.7])
        t1 = classify_boundary(m, a)
        t2 = classify_boundary(m2, a)
        for i in range(len(t1.facets)):
            assert np.array_equal(t1.outflow[i], t2.outflow[i])
            assert np.allclose(t1.points[i], t2.points[i])


class TestGeometry:
    def test_1d_shape_coefficient(self):
        m = build_interval_mesh(0.0, 1.0, 4)
        geo = element_geometry(m, 1)
        assert geo.c_s == (1.0, 1.0)
        assert geo.h == pytest.approx(0.25)

    def test_right_isosceles_hypotenuse(self):
        b = 0.7
        nodes = np.array([[0.0, 0.0], [b, 0.0], [0.0, b]])
        m = Mesh(nodes, [("triangle", (0, 1, 2))], [(0, i, "b") for i in range(3)])
        geo = element_geometry(m, 0)
        h = b * np.sqrt(2.0)
        # facet 1 is the hypotenuse
        assert geo.c_s[1] == pytest.approx(h * h / (0.5 * b * b))
        assert geo.h == pytest.approx(h)

    def test_equilateral_shape_coefficient(self):
        s = 0.4
        nodes = np.array([[0.0, 0.0], [s, 0.0], [s / 2, s * np.sqrt(3) / 2]])
        m = Mesh(nodes, [("triangle", (0, 1, 2))], [(0, i, "b") for i in range(3)])
        geo = element_geometry(m, 0)
        assert geo.c_s[0] == pytest.approx(4.0 / np.sqrt(3.0))

    def test_unit_quad(self):
        geo = element_geometry(unit_square_quad(), 0)
        assert geo.c_s[0] == pytest.approx(1.0)
        assert geo.measure == pytest.approx(1.0)

    def test_perimeter_of_unit_square(self):
        m = rectangle_mesh(5, 3)
        total = sum(m.facet_measure(e, lf) for e, lf, _ in m.boundary_facets)
        assert total == pytest.approx(4.0)

    def test_h_invariant_under_rigid_motion(self, rng):
        nodes = np.array([[0.0, 0.0], [0.8, 0.1], [0.3, 0.7]])
        m = Mesh(nodes, [("triangle", (0, 1, 2))], [(0, i, "b") for i in range(3)])
        th = rng.uniform(0, 2 * np.pi)
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        m2 = Mesh(nodes @ R.T + [2.0, -1.0], m.elements, m.boundary_facets)
        assert element_geometry(m2, 0).h == pytest.approx(element_geometry(m, 0).h)

    def test_degenerate_rejected(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(MeshError):
            Mesh(nodes, [("triangle", (0, 1, 2))], [])


class TestMeshIO:
    def test_roundtrip_quad(self, tmp_path):
        m = unit_square_quad()
        path = tmp_path / "square.mesh"
        save_mesh(m, path)
        m2 = load_mesh(path)
        assert np.allclose(m2.nodes, m.nodes)
        assert m2.elements == m.elements
        assert m2.boundary_facets == m.boundary_facets

    def test_dangling_reference_fails(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text(
            "dim 2\nnodes 3\n0 0\n1 0\n0 1\nelements 1\ntriangle 0 1 9\n"
            "bfacets 3\n0 0 b\n0 1 b\n0 2 b\n")
        with pytest.raises(MeshError):
            load_mesh(path)

    def test_parse_error(self, tmp_path):
        path = tmp_path / "bad.mesh"
        path.write_text("dim 2\nnodes nonsense\n")
        with pytest.raises(MeshError):
            load_mesh(path)

    def test_hole_mesh_has_two_tag_groups(self):
        m = square_with_hole(8, circle_polygon(0.24, segments=24))
        tags = {t for _, _, t in m.boundary_facets}
        assert tags == {"outer", "hole"}
        # hole facets approximate the circle: endpoints at radius 0.24
        for e, lf, t in m.boundary_facets:
            if t == "hole":
                for v in m.facet_nodes(e, lf):
                    r = np.linalg.norm(m.nodes[v] - [0.5, 0.5])
                    assert r == pytest.approx(0.24, abs=1e-9)


class TestRefinement:
    @pytest.mark.parametrize("make", [
        lambda: build_interval_mesh(0.0, 1.0, 3),
        two_triangles,
        unit_square_quad,
        lambda: square_with_square_hole(4, 0.25, 0.75),
    ])
    def test_refine_preserves_area_and_boundary(self, make):
        m = make()
        fine, parents = refine_uniform(m)
        factor = 2 if m.dimension == 1 else 4
        assert fine.n_elements == factor * m.n_elements
        assert np.allclose(np.sort(parents), np.repeat(np.arange(m.n_elements), factor))
        assert fine.element_measure.sum() == pytest.approx(m.element_measure.sum())
        assert len(fine.boundary_facets) == (1 if m.dimension == 1 else 2) * len(m.boundary_facets)
        assert {t for _, _, t in fine.boundary_facets} == {t for _, _, t in m.boundary_facets}
        assert fine.h_max == pytest.approx(m.h_max / 2)

    def test_parent_containment(self, rng):
        m = two_triangles()
        fine, parents = refine_uniform(m)
        for e in range(fine.n_elements):
            centroid = fine.element_corners(e).mean(axis=0)
            elems, _ = m.locate(centroid[None, :])
            assert elems[0] == parents[e]


class TestLocate:
    def test_roundtrip_2d(self, rng):
        m = square_with_hole(6, circle_polygon(0.24, segments=16))
        pts = []
        for e in range(0, m.n_elements, 3):
            x = m.element_corners(e)
            lam = rng.dirichlet([1, 1, 1])
            pts.append(lam @ x)
        pts = np.array(pts)
        elems, refs = m.locate(pts)
        from vmsfem.mesh import _forward_map
        for p, e, r in zip(pts, elems, refs):
            assert np.allclose(_forward_map(m, int(e), r), p, atol=1e-12)

    def test_outside_raises(self):
        m = rectangle_mesh(3, 3)
        with pytest.raises(MeshError):
            m.locate(np.array([[1.5, 0.5]]))

    def test_extrapolate_nearest(self):
        m = rectangle_mesh(3, 3)
        elems, refs = m.locate(np.array([[1.0 + 1e-9, 0.5]]), extrapolate=True)
        assert elems[0] >= 0
