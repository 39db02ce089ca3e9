import math

import numpy as np
import pytest

from wdlab.kernel import (MollifierSpec, ResolutionError, build_kernel, build_mollifier, bump_profile,
                          eval_kernel, radial_integral, self_convolve, sphere_area)


def test_spec_validation():
    with pytest.raises(ValueError):
        MollifierSpec(d=2)
    with pytest.raises(ValueError):
        MollifierSpec(n_r=32)
    with pytest.raises(ValueError):
        MollifierSpec(profile="gauss")


@pytest.mark.parametrize("d", [3, 4])
def test_mollifier_unit_mass(d):
    phi = build_mollifier(MollifierSpec(d=d, n_r=256))
    assert abs(phi.mass - 1) < 1e-8
    assert phi(0.5) == 0.0 and phi(0.6) == 0.0
    assert np.all(phi.values >= 0)


def test_mollifier_constant_refined_quadrature():
    phi = build_mollifier(MollifierSpec(d=3, n_r=256))
    m4 = radial_integral(bump_profile, 3, 0.0, 0.5, 4 * 256)
    assert phi(0.0) == pytest.approx(1.0 / m4 * math.exp(-1.0), rel=1e-12)


def test_resolution_error_when_unresolved(monkeypatch):
    import wdlab.kernel as kmod

    calls = iter([1.0, 1.1])
    monkeypatch.setattr(kmod, "radial_integral", lambda *a, **k: next(calls))
    with pytest.raises(ResolutionError):
        kmod.build_mollifier(MollifierSpec(d=3, n_r=64))


@pytest.mark.parametrize("d", [3, 4])
def test_kernel_mass_support_sign(d, K3, K4):
    K = K3 if d == 3 else K4
    assert abs(K.mass - 1) < 1e-6
    assert K.values[-1] == 0.0
    assert np.all(K.values >= 0)
    assert eval_kernel(K, 1.0) == 0.0
    assert np.all(eval_kernel(K, np.linspace(1.0, 5.0, 1001)) == 0.0)
    assert np.all(np.diff(K.r) > 0)


def test_V0_matches_phi_squared(K3):
    phi = build_mollifier(MollifierSpec(d=3, n_r=512))
    direct = radial_integral(lambda r: phi(r) ** 2, 3, 0.0, 0.5, 2048)
    assert K3.V0 == pytest.approx(direct, rel=1e-6)
    assert K3.V0 == pytest.approx(3.95160374565, rel=1e-9)


def test_eval_kernel_contract(K3):
    assert eval_kernel(K3, 0.0) == K3.V0
    assert eval_kernel(K3, 2.7) == 0.0
    r0, r1 = K3.r[100], K3.r[101]
    assert eval_kernel(K3, 0.5 * (r0 + r1)) == pytest.approx(0.5 * (K3.values[100] + K3.values[101]), rel=1e-14)
    with pytest.raises(ValueError):
        eval_kernel(K3, -0.1)
    assert isinstance(eval_kernel(K3, 0.3), float)


def test_resolution_stability(K3):
    phi = build_mollifier(MollifierSpec(d=3, n_r=1024))
    K2 = self_convolve(phi)
    grid = np.linspace(0.0, 1.2, 241)
    assert np.max(np.abs(eval_kernel(K2, grid) - eval_kernel(K3, grid))) < 1e-4


def test_kernel_cached():
    assert build_kernel(3) is build_kernel(3)


def test_sphere_area():
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert sphere_area(4) == pytest.approx(2 * math.pi**2)
