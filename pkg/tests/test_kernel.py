import numpy as np
import pytest

from aloha_mpr.errors import InvalidParameterError
from aloha_mpr.kernel import (
    Contour,
    KernelCoeffs,
    branch_points,
    contour_L,
    contour_M,
    kernel_roots_in_x,
    kernel_roots_in_y,
)


@pytest.fixture
def kernel(asym_channel, asym_policy):
    return KernelCoeffs.from_params(asym_channel, asym_policy, 0.08, 0.06)


def test_from_params(kernel):
    assert kernel.s1 == pytest.approx(0.33)
    assert kernel.s2 == pytest.approx(0.205)
    assert (kernel.e1, kernel.e2) == pytest.approx((1.0, 0.95))
    assert kernel.d1 < 0 and kernel.d2 < 0
    assert kernel.swapped().swapped() == kernel


def test_joint_channel_needs_opt_in(mpr_channel, ref_policy):
    with pytest.raises(InvalidParameterError):
        KernelCoeffs.from_params(mpr_channel, ref_policy, 0.1, 0.1)
    k = KernelCoeffs.from_params(mpr_channel, ref_policy, 0.1, 0.1, allow_joint=True)
    assert k.joint == pytest.approx(0.36 * 0.3)
    with pytest.raises(InvalidParameterError):
        k.poly_a


def test_kernel_vanishes_at_one(kernel):
    assert kernel.R(1.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    y0, y1 = kernel_roots_in_y(kernel, 1.0)
    assert y0 == pytest.approx(1.0)
    assert y1 == pytest.approx(kernel.s2 / kernel.lam2)


def test_roots_solve_kernel(kernel):
    xs = 0.6 * np.exp(1j * np.linspace(0.1, 6.0, 15))
    y0, y1 = kernel_roots_in_y(kernel, xs)
    assert np.all(np.abs(y0) <= np.abs(y1))
    for x, y in zip(xs, y0):
        assert abs(kernel.R(x, y)) < 1e-10
    x0, _ = kernel_roots_in_x(kernel, 0.5 + 0.1j)
    assert abs(kernel.R(x0, 0.5 + 0.1j)) < 1e-10


def test_functional_equation_identity(kernel):
    # A + B + C is the service part of R
    x, y = 0.4 + 0.3j, -0.2 + 0.5j
    arrivals = (1 + kernel.lam1 * (1 - x)) * (1 + kernel.lam2 * (1 - y)) - 1
    assert kernel.R(x, y) == pytest.approx(arrivals + kernel.s1 * (1 - 1 / x) + kernel.s2 * (1 - 1 / y))
    assert kernel.A(x, y) + kernel.B(x, y) + kernel.C(x, y) == pytest.approx(
        kernel.s1 * (1 - 1 / x) + kernel.s2 * (1 - 1 / y))


def test_branch_points_order(kernel):
    bp = branch_points(kernel)
    x1, x2, x3, x4 = bp.x
    assert 0 <= x1 < x2 <= 1 < x3 < x4 < (1 + kernel.lam1) / kernel.lam1
    for v in bp.x:
        assert abs(kernel.disc(v)) < 1e-9
    with pytest.raises(InvalidParameterError):
        branch_points(KernelCoeffs(lam1=0.0, lam2=0.1, s1=0.3, s2=0.3, e1=1.0, e2=1.0))


def test_contour_M_geometry(kernel):
    m = contour_M(kernel, 128)
    beta0, beta1 = m.extreme
    assert beta1 < 0 < beta0
    assert m.contains(1.0)
    assert m.contains(0.0)
    # every sample obeys the modulus law
    pts = m.points[1:64]
    assert np.allclose(np.abs(pts) ** 2, [m.modulus(p.real) for p in pts], rtol=1e-8)
    assert np.allclose(m.radii[1:64], m.radii[:64:-1])


def test_contour_L_is_mirror(kernel):
    left = contour_L(kernel, 64)
    mirrored = contour_M(kernel.swapped(), 64)
    assert left.kind == "L"
    assert np.allclose(left.radii, mirrored.radii)


def test_contour_samples_validated(kernel):
    with pytest.raises(InvalidParameterError):
        contour_M(kernel, 9)


def test_polar_contour():
    circle = Contour.from_polar(lambda t: 2.0 + 0.0 * np.asarray(t), n_samples=32)
    assert circle.extreme == (2.0, -2.0)
    assert circle.radius_at(1.234) == pytest.approx(2.0)
    assert circle.contains(1.5 + 1.0j)
    assert not circle.contains(2.5)


def test_one_root_inside_unit_circle(kernel):
    xs = np.exp(1j * np.linspace(0.05, 2 * np.pi - 0.05, 40))
    y0, y1 = kernel_roots_in_y(kernel, xs)
    assert np.all(np.abs(y0) <= 1 + 1e-12)
    assert np.all(np.abs(y1) > 1)


def test_contour_M_points_solve_kernel_on_cut(kernel):
    m = contour_M(kernel, 128)
    lo, hi = m.cut
    for p in m.points[1:64]:
        y = m.preimage(p.real)
        assert np.isrealobj(y)
        assert lo - 1e-12 <= y <= hi + 1e-12
        assert abs(kernel.R(p, y)) < 1e-8
        assert abs(kernel.R(np.conj(p), y)) < 1e-8


def test_contour_M_is_simple_closed_curve(kernel):
    lo, hi = branch_points(kernel).y[:2]
    ys = np.linspace(lo, hi, 402)[1:-1]
    upper, _ = kernel_roots_in_x(kernel, ys)
    args = np.angle(upper)
    assert np.all(upper.imag >= 0)
    steps = np.diff(args)
    assert np.all(steps < 0) or np.all(steps > 0)
    # close the curve with the conjugate branch and count turns around 0
    loop = np.concatenate([upper, np.conj(upper[::-1])])
    turns = np.angle(np.roll(loop, -1) / loop).sum() / (2 * np.pi)
    assert abs(round(turns)) == 1
    assert turns == pytest.approx(round(turns), abs=1e-9)
