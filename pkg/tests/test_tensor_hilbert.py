import numpy as np
import pytest

from checks import nearby_curve, random_curve, random_eigensystem, random_field
from rfda.errors import AntipodalPointError, BaseMismatchError, GeometryError
from rfda.frame import frame_along_curve
from rfda.manifold import SPD, Euclidean, Sphere
from rfda.rfpca import EigenSystem
from rfda.tensor_hilbert import (
    ManifoldCurve,
    TimeGrid,
    VectorField,
    diff_gamma,
    hs_distance,
    transport_eigensystem,
    transport_field,
    vf_inner,
    vf_norm,
)

GRID = TimeGrid.uniform(21)


class TestTimeGrid:
    def test_uniform_weights(self):
        g = TimeGrid.uniform(5)
        np.testing.assert_allclose(g.weights, [0.125, 0.25, 0.25, 0.25, 0.125])
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_nonuniform(self):
        g = TimeGrid.from_times([0.0, 0.1, 0.5, 1.0])
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            TimeGrid.from_times([0.0, 0.5, 0.4, 1.0])

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            TimeGrid([0.0, 1.0], [0.5, 0.6])

    def test_equality(self):
        assert TimeGrid.uniform(7) == TimeGrid.uniform(7)
        assert TimeGrid.uniform(7) != TimeGrid.uniform(8)


class TestCurveAndField:
    def test_curve_validates_points(self):
        with pytest.raises(GeometryError):
            ManifoldCurve(Sphere(2), TimeGrid.uniform(2), [[1, 0, 0], [2, 0, 0]])

    def test_field_must_be_tangent(self):
        c = ManifoldCurve(Sphere(2), TimeGrid.uniform(2), [[1, 0, 0], [0, 1, 0]])
        with pytest.raises(GeometryError):
            VectorField(c, [[0, 1, 0], [0, 1, 0]])

    def test_arithmetic_requires_same_curve(self):
        rng = np.random.default_rng(0)
        m = Sphere(2)
        a, b = random_curve(m, GRID, rng), random_curve(m, GRID, rng)
        with pytest.raises(BaseMismatchError):
            VectorField.zeros(a) + VectorField.zeros(b)


class TestInnerAndNorm:
    def test_frame_field_unit_norm(self):
        rng = np.random.default_rng(1)
        for m in (Sphere(2), SPD(3)):
            f = frame_along_curve(random_curve(m, GRID, rng))
            assert vf_inner(f.field(0), f.field(0)) == pytest.approx(1.0, abs=1e-12)
            assert vf_inner(f.field(0), f.field(1)) == pytest.approx(0.0, abs=1e-12)
            assert vf_norm(2 * f.field(0)) == pytest.approx(2.0, abs=1e-12)

    def test_euclidean_trapezoid(self):
        m = Euclidean(1)
        c = ManifoldCurve(m, GRID, np.zeros((21, 1)))
        u = VectorField(c, GRID.times[:, None])
        v = VectorField(c, np.ones((21, 1)))
        # trapezoid is exact for linear integrands
        assert vf_inner(u, v) == pytest.approx(0.5, abs=1e-15)

    def test_zero_field(self):
        c = random_curve(Sphere(2), GRID, np.random.default_rng(2))
        assert vf_norm(VectorField.zeros(c)) == 0.0

    def test_symmetric_bilinear(self):
        rng = np.random.default_rng(3)
        c = random_curve(SPD(3), GRID, rng)
        u, v, w = (random_field(c, rng) for _ in range(3))
        assert vf_inner(u, v) == pytest.approx(vf_inner(v, u), rel=1e-12)
        assert vf_inner(u + 2 * w, v) == pytest.approx(vf_inner(u, v) + 2 * vf_inner(w, v), rel=1e-10)
        assert vf_inner(u, u) >= 0

    def test_mismatch(self):
        rng = np.random.default_rng(4)
        m = Sphere(2)
        a, b = random_curve(m, GRID, rng), random_curve(m, GRID, rng)
        with pytest.raises(BaseMismatchError):
            vf_inner(VectorField.zeros(a), VectorField.zeros(b))


class TestTransport:
    def test_same_curve_identity(self):
        rng = np.random.default_rng(5)
        c = random_curve(Sphere(2), GRID, rng)
        u = random_field(c, rng)
        np.testing.assert_array_equal(transport_field(u, c).values, u.values)

    @pytest.mark.parametrize("m", [Sphere(2), SPD(3)])
    def test_norm_preserved(self, m):
        rng = np.random.default_rng(6)
        f = random_curve(m, GRID, rng)
        h = nearby_curve(f, rng)
        u = random_field(f, rng)
        assert vf_norm(transport_field(u, h)) == pytest.approx(vf_norm(u), rel=1e-12)

    def test_sphere_normal_component(self):
        # curves in the equatorial plane; the field along e3 is normal to every geodesic between them
        t = GRID.times
        f = ManifoldCurve(Sphere(2), GRID, np.stack([np.cos(t), np.sin(t), 0 * t], 1))
        h = ManifoldCurve(Sphere(2), GRID, np.stack([np.cos(t + 0.3), np.sin(t + 0.3), 0 * t], 1))
        u = VectorField(f, np.tile([0.0, 0.0, 1.0], (len(t), 1)))
        moved = transport_field(u, h)
        np.testing.assert_allclose(moved.values, u.values, atol=1e-15)
        np.testing.assert_allclose(moved.pointwise_norm(), 1.0)

    def test_cut_locus_reports_t(self):
        m = Sphere(2)
        g = TimeGrid.uniform(3)
        f = ManifoldCurve(m, g, [[1, 0, 0], [0, 1, 0], [0, 0, 1]])
        h = ManifoldCurve(m, g, [[1, 0, 0], [0, -1, 0], [0, 0, 1]])
        with pytest.raises(AntipodalPointError) as info:
            transport_field(VectorField.zeros(f), h)
        assert info.value.t == 0.5


class TestDiffGamma:
    def test_same_field(self):
        rng = np.random.default_rng(7)
        c = random_curve(SPD(3), GRID, rng)
        u = random_field(c, rng)
        field, norm = diff_gamma(u, u)
        assert norm == 0.0 and np.all(field.values == 0)

    def test_euclidean_is_plain_difference(self):
        rng = np.random.default_rng(8)
        m = Euclidean(2)
        f = ManifoldCurve(m, GRID, rng.standard_normal((21, 2)))
        h = ManifoldCurve(m, GRID, rng.standard_normal((21, 2)))
        u, v = VectorField(f, rng.standard_normal((21, 2))), VectorField(h, rng.standard_normal((21, 2)))
        field, _ = diff_gamma(u, v)
        np.testing.assert_array_equal(field.values, u.values - v.values)

    def test_transport_then_compare(self):
        rng = np.random.default_rng(9)
        f = random_curve(Sphere(2), GRID, rng)
        h = nearby_curve(f, rng)
        v = random_field(h, rng)
        u = transport_field(v, f)
        assert diff_gamma(u, v)[1] <= 1e-12


class TestOperatorTransport:
    def _pair(self, m, seed):
        rng = np.random.default_rng(seed)
        f = random_curve(m, GRID, rng)
        h = nearby_curve(f, rng)
        return rng, f, h, random_eigensystem(f, rng, k=4)

    def test_identity_on_own_mean(self):
        _, f, _, sys = self._pair(Sphere(2), 10)
        out = transport_eigensystem(sys, f)
        np.testing.assert_array_equal(out.eigenfuncs, sys.eigenfuncs)

    @pytest.mark.parametrize("m", [Sphere(2), SPD(3)])
    def test_eigenvalues_kept_and_orthonormal(self, m):
        _, _, h, sys = self._pair(m, 11)
        out = transport_eigensystem(sys, h)
        np.testing.assert_array_equal(out.eigenvalues, sys.eigenvalues)
        np.testing.assert_allclose(out.gram(), np.eye(4), atol=1e-8)

    @pytest.mark.parametrize("m", [Sphere(2), SPD(3)])
    def test_double_transport(self, m):
        _, f, h, sys = self._pair(m, 12)
        back = transport_eigensystem(transport_eigensystem(sys, h), f, frame=sys.frame)
        np.testing.assert_allclose(back.eigenfuncs, sys.eigenfuncs, atol=1e-8)


class TestHsDistance:
    def test_own_transport(self):
        rng = np.random.default_rng(13)
        f = random_curve(SPD(3), GRID, rng)
        h = nearby_curve(f, rng)
        a = random_eigensystem(f, rng)
        assert hs_distance(a, transport_eigensystem(a, h)) <= 1e-8

    def test_scaled_eigenvalues(self):
        rng = np.random.default_rng(14)
        f = random_curve(Sphere(2), GRID, rng)
        a = random_eigensystem(f, rng)
        b = EigenSystem(a.mean, a.frame, 2 * a.eigenvalues, a.eigenfuncs, 0)
        assert hs_distance(a, b) == pytest.approx(np.sqrt(np.sum(a.eigenvalues**2)), rel=1e-9)

    @pytest.mark.parametrize("m", [Sphere(2), SPD(3)])
    def test_symmetry(self, m):
        rng = np.random.default_rng(15)
        f = random_curve(m, GRID, rng)
        h = nearby_curve(f, rng)
        a, b = random_eigensystem(f, rng), random_eigensystem(h, rng, k=2)
        assert hs_distance(a, b) == pytest.approx(hs_distance(b, a), abs=1e-8)
