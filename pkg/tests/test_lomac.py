import numpy as np
import pytest

from kinetic_ar.grid import make_grid
from kinetic_ar.kinetic import MomentField, PositivityError, moments_from_lowrank
from kinetic_ar.lomac import build_closure, correct
from kinetic_ar.lowrank import SvdMatrix
from kinetic_ar.macro import StageContext, assemble_residual, jfnk_solve


def exact_svd(a, tol=1e-15):
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    r = int(np.count_nonzero(s > tol * s[0]))
    return SvdMatrix(u[:, :r], s[:r], vt[:r].T)


G = make_grid(-1, 1, -10, 10, 32, 128)
X = G.x_centers
V = G.v_centers


def smooth_moments():
    return MomentField.from_primitive(1 + 0.3 * np.sin(np.pi * X), 0.2 * np.cos(np.pi * X),
                                      0.8 + 0.2 * np.cos(np.pi * X))


def hermite_perturbation(mf):
    # He3 of the scaled peculiar velocity: zero density, momentum and energy
    xi = (V[None, :] - mf.u[:, None]) / np.sqrt(mf.temperature[:, None])
    return 0.05 * np.sin(np.pi * X)[:, None] * (xi**3 - 3 * xi) * mf.maxwellian_dense(V)


def test_closure_of_maxwellian_vanishes():
    mf = smooth_moments()
    closure, m0 = build_closure(exact_svd(mf.maxwellian_dense(V)), G)
    np.testing.assert_allclose(m0.packed(), mf.packed(), atol=1e-12)
    # the two half-line sums of a Maxwellian add up to the analytic full flux
    assert np.abs(closure.full_correction()).max() <= 1e-9
    # each side alone carries only the midpoint endpoint term of v^+ at v = 0
    m_at0 = mf.maxwellian_column(0.0)
    np.testing.assert_allclose(closure.fixed_plus[:, 0], G.dv**2 / 24 * m_at0,
                               atol=0.05 * G.dv**3 * m_at0.max())
    assert np.abs(closure.fixed_plus[:, 1:]).max() <= 1e-4


def test_closure_energy_component_is_perturbation_heat_flux():
    mf = smooth_moments()
    p = hermite_perturbation(mf)
    closure, m0 = build_closure(exact_svd(mf.maxwellian_dense(V) + p), G)
    np.testing.assert_allclose(m0.packed(), mf.packed(), atol=1e-12)
    heat = G.dv * (p * 0.5 * V**3).sum(axis=1)
    assert np.abs(heat).max() > 1e-3
    np.testing.assert_allclose(closure.full_correction()[:, 2], heat, atol=1e-10)
    np.testing.assert_allclose(closure.full_correction()[:, :2], 0, atol=1e-10)


def test_closure_linear_in_perturbation():
    mf = smooth_moments()
    m = mf.maxwellian_dense(V)
    p = hermite_perturbation(mf)
    base, _ = build_closure(exact_svd(m), G)
    d1 = build_closure(exact_svd(m + p), G)[0].fixed_plus - base.fixed_plus
    for alpha in (0.25, 2.0, -1.5):
        da = build_closure(exact_svd(m + alpha * p), G)[0].fixed_plus - base.fixed_plus
        np.testing.assert_allclose(da, alpha * d1, atol=1e-12 * max(1, abs(alpha)))


def test_closure_rejects_nonpositive_moments():
    with pytest.raises(PositivityError):
        build_closure(exact_svd(-np.ones(G.shape)), G)


def test_correct_identity():
    mf = smooth_moments()
    f = exact_svd(mf.maxwellian_dense(V) + hermite_perturbation(mf))
    view = correct(f, moments_from_lowrank(f, G), G)
    dense = f.to_dense()
    np.testing.assert_allclose(view.to_dense(), dense, atol=4 * np.finfo(float).eps * dense.max())


@pytest.mark.parametrize("seed", range(5))
def test_correct_matches_target_moments(seed):
    rng = np.random.default_rng(seed)
    mf = smooth_moments()
    f = exact_svd(mf.maxwellian_dense(V) + hermite_perturbation(mf))
    target = MomentField.from_primitive(rng.uniform(0.2, 3, G.nx), rng.uniform(-1, 1, G.nx),
                                        rng.uniform(0.3, 2, G.nx))
    view = correct(f, target.packed(), G)
    np.testing.assert_allclose(view.moments().conserved(), target.conserved(), atol=1e-10)


def test_correct_matches_dense_brute_force():
    mf = smooth_moments()
    dense = mf.maxwellian_dense(V) + hermite_perturbation(mf)
    f = exact_svd(dense)
    target = MomentField.from_primitive(1.5 + 0.1 * X, 0.1 * X, 1.2 - 0.2 * X**2)
    star = dense.copy()
    v = G.v_centers
    ms_rho = G.dv * star.sum(1)
    ms_mom = G.dv * star @ v
    ms_en = G.dv * star @ (0.5 * v * v)
    u = ms_mom / ms_rho
    T = 2 * ms_en / ms_rho - u * u
    m_star = ms_rho[:, None] / np.sqrt(2 * np.pi * T[:, None]) * np.exp(
        -(v[None] - u[:, None]) ** 2 / (2 * T[:, None]))
    m_new = target.rho[:, None] / np.sqrt(2 * np.pi * target.temperature[:, None]) * np.exp(
        -(v[None] - target.u[:, None]) ** 2 / (2 * target.temperature[:, None]))
    brute = star - m_star + m_new
    np.testing.assert_allclose(correct(f, target, G).to_dense(), brute, atol=1e-12)


def test_closure_idempotent_at_fixed_point():
    mf = smooth_moments()
    f = exact_svd(mf.maxwellian_dense(V) + hermite_perturbation(mf))
    U_old = mf.packed()
    ctx = StageContext(U_old, np.zeros_like(U_old), 0.01, 1.0)
    closure, m0 = build_closure(f, G)
    U1, rep = jfnk_solve(lambda U: assemble_residual(U, U_old, ctx, closure), m0.packed(),
                         newton_tol=1e-12)
    assert rep.converged
    # compress the corrected view: its base now has moments U1
    f2 = exact_svd(correct(f, U1, G).to_dense())
    closure2, m2 = build_closure(f2, G)
    np.testing.assert_allclose(m2.packed(), U1, atol=1e-12)
    # the per-side fixed parts differ only by the midpoint endpoint term of the
    # two Maxwellians, so the old root is converged up to O(dv^2 |U1 - U(f)|)
    res = assemble_residual(U1, U_old, ctx, closure2)
    assert np.linalg.norm(res) <= 1e-6 * rep.residual_history[0]
    _, rep2 = jfnk_solve(lambda U: assemble_residual(U, U_old, ctx, closure2), m2.packed(),
                         newton_tol=1e-11)
    assert rep2.newton_iters <= 1
