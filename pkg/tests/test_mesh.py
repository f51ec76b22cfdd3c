import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nashpde.mesh import Grid, GridFunction, GridMismatchError, convergence_orders, inner_product, l2_norm


def test_grid_geometry_1d():
    g = Grid.uniform(1, 101)
    assert g.dim == 1
    assert g.spacing == pytest.approx((0.01,))
    assert g.interior_shape == (99,)
    assert g.size == 99
    (x,) = g.coordinates()
    assert x[0] == pytest.approx(0.01) and x[-1] == pytest.approx(0.99)


def test_grid_geometry_2d_is_row_major():
    g = Grid(((0.0, 2.0), (-1.0, 1.0)), (5, 3))
    assert g.spacing == (0.5, 1.0)
    assert g.interior_shape == (3, 1)
    assert g.cell_volume == 0.5
    x1, x2 = g.coordinates()
    np.testing.assert_allclose(x1, [0.5, 1.0, 1.5])
    np.testing.assert_allclose(x2, [0.0, 0.0, 0.0])


@pytest.mark.parametrize("extents, points", [
    (((0.0, 1.0),), (2,)),
    (((1.0, 1.0),), (5,)),
    (((0.0, 1.0),) * 3, (5, 5, 5)),
    (((0.0, 1.0), (0.0, 1.0)), (5,)),
])
def test_grid_rejects_invalid(extents, points):
    with pytest.raises(ValueError):
        Grid(extents, points)


def test_grid_function_is_immutable_and_finite():
    g = Grid.uniform(1, 5)
    f = g.sample(lambda x: x)
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    with pytest.raises(ValueError):
        GridFunction(g, [0.0, np.nan, 0.0])
    with pytest.raises(GridMismatchError):
        GridFunction(g, np.zeros(4))


def test_grid_function_arithmetic_needs_same_grid():
    a = Grid.uniform(1, 5).sample(1.0)
    b = Grid.uniform(1, 6).sample(1.0)
    with pytest.raises(GridMismatchError):
        a + b
    with pytest.raises(GridMismatchError):
        inner_product(a, b)
    c = (a * 3 - a / 2 + 1) * a
    np.testing.assert_array_equal(c.values, 3.5)
    np.testing.assert_array_equal((-a).values, -1.0)


def test_inner_product_zero():
    g = Grid.uniform(1, 33)
    assert inner_product(g.zeros(), g.sample(lambda x: np.exp(x))) == 0.0


def test_inner_product_of_ones_on_101_points():
    # 99 interior nodes of weight 0.01 each
    g = Grid.uniform(1, 101)
    one = g.sample(1.0)
    assert inner_product(one, one) == pytest.approx(0.99, abs=1e-14)


def test_inner_product_sin_squared():
    g = Grid.uniform(1, 65)
    s = g.sample(lambda x: np.sin(np.pi * x))
    assert abs(inner_product(s, s) - 0.5) <= g.spacing[0] ** 2


def test_l2_norm_examples():
    g = Grid.uniform(1, 101)
    assert l2_norm(g.zeros()) == 0.0
    f = g.sample(lambda x: np.cos(3 * x) + x)
    assert l2_norm(f * 2) == 2 * l2_norm(f)


def test_l2_norm_of_constant_is_first_order():
    # a constant does not vanish on the boundary, so the interior-node rule
    # misses one cell: the discrete value is |c| sqrt(1 - h)
    c = -3.0
    errors = []
    for n in (17, 33, 65, 129):
        g = Grid.uniform(1, n)
        h = g.spacing[0]
        value = l2_norm(g.sample(c))
        assert value == pytest.approx(abs(c) * np.sqrt(1 - h), rel=1e-14)
        errors.append(abs(value - abs(c)))
    orders = convergence_orders(errors)
    assert np.all(np.abs(orders - 1.0) < 0.1)


@pytest.mark.parametrize("dim", [1, 2])
def test_quadrature_is_second_order_for_smooth_integrands(dim):
    def integrand(*xs):
        out = 1.0
        for x in xs:
            out = out * x**2 * (1 - x) * np.exp(x)
        return out

    exact_1d = 3 * np.e - 8  # integral of x^2 (1 - x) e^x over (0, 1)
    exact = exact_1d**dim
    errors = []
    for n in (9, 17, 33, 65):
        g = Grid.uniform(dim, n)
        f = g.sample(integrand)
        errors.append(abs(inner_product(f, g.sample(1.0)) - exact))
    assert np.all(convergence_orders(errors) >= 1.9)


fields = arrays(np.float64, 15, elements=st.floats(-1e3, 1e3))


@given(fields, fields)
def test_cauchy_schwarz_and_symmetry(a, b):
    g = Grid.uniform(1, 17)
    f, h = GridFunction(g, a), GridFunction(g, b)
    ip = inner_product(f, h)
    assert ip == inner_product(h, f)
    assert abs(ip) <= l2_norm(f) * l2_norm(h) * (1 + 1e-12) + 1e-300


@given(fields, fields, fields, st.floats(-10, 10))
def test_bilinearity(a, b, c, s):
    g = Grid.uniform(1, 17)
    f, h, k = (GridFunction(g, v) for v in (a, b, c))
    lhs = inner_product(f * s + h, k)
    rhs = s * inner_product(f, k) + inner_product(h, k)
    scale = (abs(s) * l2_norm(f) + l2_norm(h)) * l2_norm(k)
    assert abs(lhs - rhs) <= 1e-12 * scale + 1e-300


@given(fields)
def test_norm_zero_iff_zero(a):
    g = Grid.uniform(1, 17)
    assert (l2_norm(GridFunction(g, a)) == 0.0) == (not np.any(a))
