import numpy as np
import pytest

from shadowgen.sh import (
    ValidationError,
    directional_coeffs,
    render_light_map,
    shade,
    sh_basis,
    solve_illumination,
)


def textbook_basis(n):
    """Independent oracle: the real SH polynomials written out from their
    closed forms (orthonormal convention, no Condon-Shortley phase)."""
    x, y, z = n
    pi = np.pi
    return np.array([
        0.5 * np.sqrt(1.0 / pi),
        np.sqrt(3.0 / (4.0 * pi)) * y,
        np.sqrt(3.0 / (4.0 * pi)) * z,
        np.sqrt(3.0 / (4.0 * pi)) * x,
        0.5 * np.sqrt(15.0 / pi) * x * y,
        0.5 * np.sqrt(15.0 / pi) * y * z,
        0.25 * np.sqrt(5.0 / pi) * (3.0 * z * z - 1.0),
        0.5 * np.sqrt(15.0 / pi) * x * z,
        0.25 * np.sqrt(15.0 / pi) * (x * x - y * y),
    ])


def random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def hemisphere_normals(count, rng):
    v = rng.normal(size=(count, 3))
    v[:, 2] = np.abs(v[:, 2]) + 0.05
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestBasis:
    def test_matches_textbook_polynomials(self):
        rng = np.random.default_rng(7)
        for n in random_unit(rng, 50):
            np.testing.assert_allclose(sh_basis(n), textbook_basis(n), rtol=0, atol=1e-12)

    def test_up_normal_zeroes_x_and_y_bands(self):
        b = sh_basis(np.array([0.0, 0.0, 1.0]))
        assert b[1] == 0.0 and b[3] == 0.0

    def test_dc_component_is_constant(self):
        rng = np.random.default_rng(3)
        vals = sh_basis(random_unit(rng, 20))[:, 0]
        assert np.all(vals == vals[0])

    def test_zero_norm_rejected(self):
        with pytest.raises(ValidationError):
            sh_basis(np.zeros(3))

    def test_non_unit_rejected(self):
        with pytest.raises(ValidationError):
            sh_basis(np.array([0.0, 0.0, 2.0]))


class TestSolve:
    def _forward(self, coeffs, rng, count=400):
        normals = hemisphere_normals(count, rng).reshape(20, 20, 3)
        albedo = rng.uniform(0.2, 1.0, size=(20, 20, 3))
        weight = rng.uniform(0.4, 1.0, size=(20, 20))
        image = albedo * weight[..., None] * shade(normals, coeffs)
        return image, albedo, weight, normals

    def test_recovers_forward_rendered_coeffs(self):
        rng = np.random.default_rng(11)
        coeffs = rng.normal(size=(3, 9))
        image, albedo, weight, normals = self._forward(coeffs, rng)
        sol = solve_illumination(image, albedo, weight, normals)
        rel = np.linalg.norm(sol.coeffs - coeffs) / np.linalg.norm(coeffs)
        assert rel < 1e-6
        assert not sol.degenerate
        assert sol.residual < 1e-9

    def test_identical_normals_degenerate_but_consistent(self):
        rng = np.random.default_rng(5)
        normals = np.zeros((8, 8, 3))
        normals[..., 2] = 1.0
        albedo = np.full((8, 8, 3), 0.5)
        weight = np.ones((8, 8))
        coeffs = directional_coeffs(np.array([0.0, 0.0, 1.0]), 0.7, 0.2)
        image = albedo * weight[..., None] * shade(normals, coeffs)
        sol = solve_illumination(image, albedo, weight, normals)
        assert sol.degenerate
        assert sol.residual < 1e-6

    def test_solution_scales_linearly_with_image(self):
        rng = np.random.default_rng(13)
        coeffs = rng.normal(size=(3, 9))
        image, albedo, weight, normals = self._forward(coeffs, rng)
        a = solve_illumination(image, albedo, weight, normals).coeffs
        b = solve_illumination(2.0 * image, albedo, weight, normals).coeffs
        np.testing.assert_allclose(b, 2.0 * a, rtol=1e-9, atol=1e-12)

    def test_returned_solution_is_the_least_squares_optimum(self):
        rng = np.random.default_rng(17)
        coeffs = rng.normal(size=(3, 9))
        image, albedo, weight, normals = self._forward(coeffs, rng)
        image = image + rng.normal(scale=0.01, size=image.shape)  # make it inconsistent

        def residual_of(c):
            pred = albedo * weight[..., None] * shade(normals, c)
            return float(np.sqrt(np.mean((pred - image) ** 2)))

        sol = solve_illumination(image, albedo, weight, normals)
        base = residual_of(sol.coeffs)
        for _ in range(100):
            delta = rng.normal(scale=1e-3, size=(3, 9))
            assert residual_of(sol.coeffs + delta) >= base - 1e-12

    def test_too_few_valid_pixels_rejected(self):
        rng = np.random.default_rng(19)
        coeffs = rng.normal(size=(3, 9))
        image, albedo, weight, normals = self._forward(coeffs, rng)
        mask = np.zeros((20, 20), dtype=bool)
        mask[0, :5] = True
        with pytest.raises(ValidationError):
            solve_illumination(image, albedo, weight, normals, valid_mask=mask)


class TestLightMap:
    def test_dc_only_shades_sphere_uniformly(self):
        coeffs = np.zeros((3, 9))
        coeffs[:, 0] = 1.0
        img = render_light_map(coeffs, 64)
        sphere = np.any(img != 0.5, axis=-1)
        vals = img[sphere]
        assert vals.size > 0
        assert np.ptp(vals) < 1e-12

    def test_tilted_light_brightest_on_matching_side(self):
        coeffs = directional_coeffs(np.array([np.sqrt(0.5), 0.0, np.sqrt(0.5)]), 0.75, 0.1)
        img = render_light_map(coeffs, 64)
        lum = img.sum(axis=-1)
        row, col = np.unravel_index(np.argmax(lum), lum.shape)
        assert col > 32  # +x side of the sphere

    def test_zero_coeffs_give_zero_sphere(self):
        img = render_light_map(np.zeros((3, 9)), 32)
        sphere = img[10:22, 10:22]  # well inside the disk
        assert np.all(sphere == 0.0)

    def test_values_clamped_to_unit_range(self):
        coeffs = directional_coeffs(np.array([0.0, 0.0, 1.0]), 50.0, 0.0)
        img = render_light_map(coeffs, 32)
        assert img.min() >= 0.0 and img.max() <= 1.0
