import numpy as np
import pytest

from sdwave.assembly import build_forms, h1_norm
from sdwave.evolution import (TimeGrid, Trajectory, aux_fine_solve,
                              aux_gfem_solve, discrete_energy, fine_fem_solve,
                              galerkin_wave_solve, ideal_gfem_solve,
                              localized_gfem_solve,
                              localized_gfem_solve_direct, rel_h1_final,
                              rel_l2h1, save_final_state, trajectory_csv)
from sdwave.harness import random_field
from sdwave.linalg import factor_saddle
from sdwave.lod import (CorrectorConfig, build_corrector_set,
                        transients_for_all_nodes)
from sdwave.mesh import build_uniform_mesh, prolongation, refine, saturating_k

TAU = 0.02


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 5)
    with pytest.raises(ValueError):
        TimeGrid(0.1, 1)
    grid = TimeGrid(0.1, 4)
    assert grid.final_time == pytest.approx(0.4)
    np.testing.assert_allclose(grid.times(), [0.0, 0.1, 0.2, 0.3, 0.4])


def test_trajectory_rejects_nonfinite():
    with pytest.raises(ValueError):
        Trajectory("x", TimeGrid(0.1, 2), np.array([[0.0], [np.nan], [0.0]]))


def test_fine_fem_zero_data_zero_source(problem44):
    grid = TimeGrid(TAU, 5)
    zeros = np.zeros(problem44.n_fine_dofs)
    traj = fine_fem_solve(problem44.forms, 0.0, zeros, zeros, grid)
    assert np.all(traj.states == 0.0)


def test_fine_fem_single_dof_recurrence():
    # coarse n=2, h=1/2: one interior dof with M = 1/8, K_A = K_B = 4, F = 1/4;
    # the scalar backward difference recurrence is reproduced exactly
    pair = refine(build_uniform_mesh(2), 1)
    ones = np.ones(pair.fine.n_elements)
    forms = build_forms(pair, ones, ones, TAU)
    grid = TimeGrid(TAU, 600)
    traj = fine_fem_solve(forms, 1.0, np.zeros(1), np.zeros(1), grid)
    u = [0.0, 0.0]
    for n in range(2, 601):
        lhs = (1 / 8) / TAU ** 2 + 4 / TAU + 4
        rhs = 0.25 + (1 / 8) * (2 * u[-1] - u[-2]) / TAU ** 2 + 4 * u[-1] / TAU
        u.append(rhs / lhs)
    np.testing.assert_allclose(traj.states.ravel(), u, atol=1e-14)
    assert traj.states[-1, 0] == pytest.approx(1.0 / 16.0, rel=1e-4)


def test_energy_dissipation(problem44):
    rng = np.random.default_rng(40)
    u0 = rng.standard_normal(problem44.n_fine_dofs)
    u1 = u0 + 0.01 * rng.standard_normal(problem44.n_fine_dofs)
    traj = fine_fem_solve(problem44.forms, 0.0, u0, u1, TimeGrid(TAU, 60))
    E = discrete_energy(problem44.forms, traj)
    assert np.all(np.diff(E) <= 1e-12 * E[0])


@pytest.fixture(scope="module")
def saturated44(problem44):
    cfg = CorrectorConfig(k=saturating_k(problem44.pair.coarse), tau=TAU)
    return build_corrector_set(problem44.pair, problem44.interp,
                               problem44.forms, cfg)


def test_ideal_gfem_zero_problem(problem44, saturated44):
    grid = TimeGrid(TAU, 5)
    zc = np.zeros(problem44.n_coarse_dofs)
    traj = ideal_gfem_solve(saturated44, problem44.interp, problem44.forms,
                            0.0, grid, zc, zc)
    assert np.all(traj.states == 0.0)


def test_oracle_collapse_at_r1(problem81):
    cfg = CorrectorConfig(k=2, tau=TAU)
    cs = build_corrector_set(problem81.pair, problem81.interp, problem81.forms, cfg)
    grid = TimeGrid(TAU, 10)
    zc = np.zeros(problem81.n_coarse_dofs)
    seq = transients_for_all_nodes(problem81.pair, problem81.interp,
                                   problem81.forms, cs, horizon=10)
    loc = localized_gfem_solve(cs, seq, problem81.interp, problem81.forms,
                               1.0, grid, zc, zc)
    zeros = np.zeros(problem81.n_fine_dofs)
    ref = fine_fem_solve(problem81.forms, 1.0, zeros, zeros, grid)
    assert rel_l2h1(problem81.forms, loc, ref) <= 1e-8


def test_localized_saturated_matches_ideal(problem44, saturated44):
    grid = TimeGrid(TAU, 12)
    zc = np.zeros(problem44.n_coarse_dofs)
    seq = transients_for_all_nodes(problem44.pair, problem44.interp,
                                   problem44.forms, saturated44,
                                   horizon=12, stop_tol=0.0)
    loc = localized_gfem_solve(saturated44, seq, problem44.interp,
                               problem44.forms, 1.0, grid, zc, zc)
    ideal = ideal_gfem_solve(saturated44, problem44.interp, problem44.forms,
                             1.0, grid, zc, zc)
    assert rel_l2h1(problem44.forms, loc, ideal) <= 1e-8


def test_superposition_path_matches_direct_debug_path(problem44):
    cfg = CorrectorConfig(k=2, tau=TAU)
    cs = build_corrector_set(problem44.pair, problem44.interp, problem44.forms, cfg)
    seq = transients_for_all_nodes(problem44.pair, problem44.interp,
                                   problem44.forms, cs, horizon=12, stop_tol=0.0)
    grid = TimeGrid(TAU, 12)
    zc = np.zeros(problem44.n_coarse_dofs)
    loc = localized_gfem_solve(cs, seq, problem44.interp, problem44.forms,
                               1.0, grid, zc, zc)
    direct = localized_gfem_solve_direct(cs, problem44.interp, problem44.forms,
                                         1.0, grid, zc, zc)
    assert rel_l2h1(problem44.forms, loc, direct) <= 1e-9


def test_transient_config_mismatch_rejected(problem44, saturated44):
    other = build_corrector_set(problem44.pair, problem44.interp,
                                problem44.forms, CorrectorConfig(k=2, tau=TAU))
    seq = transients_for_all_nodes(problem44.pair, problem44.interp,
                                   problem44.forms, other, horizon=4)
    grid = TimeGrid(TAU, 4)
    zc = np.zeros(problem44.n_coarse_dofs)
    with pytest.raises(ValueError):
        localized_gfem_solve(saturated44, seq, problem44.interp,
                             problem44.forms, 1.0, grid, zc, zc)


def test_steady_state_b_orthogonality(problem44, saturated44):
    # the solution drifts toward b-orthogonality against the fine-scale space
    forms, interp = problem44.forms, problem44.interp
    grid = TimeGrid(0.05, 200)
    zc = np.zeros(problem44.n_coarse_dofs)
    traj = ideal_gfem_solve(saturated44, interp, forms, 1.0, grid, zc, zc)
    saddle = factor_saddle(forms.K_tilde, interp.matrix)
    rng = np.random.default_rng(41)

    def residual(u):
        ub = np.sqrt(u @ (forms.K_B @ u))
        worst = 0.0
        for _ in range(4):
            z, _ = saddle.solve(forms.K_tilde @ rng.standard_normal(u.size))
            zb = np.sqrt(z @ (forms.K_B @ z))
            worst = max(worst, abs(z @ (forms.K_B @ u)) / (zb * ub))
        return worst

    assert residual(traj.states[-1]) <= 0.2 * residual(traj.states[2])


def test_aux_exactness_without_source(problem44, saturated44):
    rng = np.random.default_rng(42)
    alpha0 = rng.standard_normal(problem44.n_coarse_dofs)
    z0 = saturated44.Q @ alpha0
    grid = TimeGrid(TAU, 20)
    fine = aux_fine_solve(problem44.forms, 0.0, z0, grid)
    gfem = aux_gfem_solve(saturated44, problem44.interp, problem44.forms,
                          0.0, alpha0, grid)
    for n in range(1, 21):
        err = h1_norm(problem44.forms, fine.states[n] - gfem.states[n])
        assert err <= 1e-9 * h1_norm(problem44.forms, fine.states[n])


def test_aux_zero(problem44, saturated44):
    grid = TimeGrid(TAU, 4)
    fine = aux_fine_solve(problem44.forms, 0.0,
                          np.zeros(problem44.n_fine_dofs), grid)
    assert np.all(fine.states == 0.0)
    gfem = aux_gfem_solve(saturated44, problem44.interp, problem44.forms, 0.0,
                          np.zeros(problem44.n_coarse_dofs), grid)
    assert np.all(gfem.states == 0.0)


def test_aux_convergence_rate():
    # aux GFEM error behaves like H times the accumulated source norm
    errs = []
    for q in (2, 3, 4):
        pair = refine(build_uniform_mesh(2 ** q), 2 ** (5 - q))
        A = random_field(pair.fine, 0.1, 1000.0, 1)
        B = random_field(pair.fine, 0.1, 1000.0, 2)
        forms = build_forms(pair, A, B, TAU)
        from sdwave.interpolation import build_interpolator
        interp = build_interpolator(pair)
        cs = build_corrector_set(pair, interp, forms,
                                 CorrectorConfig(k=saturating_k(pair.coarse), tau=TAU))
        grid = TimeGrid(TAU, 25)
        fine = aux_fine_solve(forms, 1.0, np.zeros(pair.fine.n_dofs), grid)
        gfem = aux_gfem_solve(cs, interp, forms, 1.0,
                              np.zeros(pair.coarse.n_dofs), grid)
        errs.append(h1_norm(forms, fine.states[-1] - gfem.states[-1])
                    / h1_norm(forms, fine.states[-1]))
    rate = -np.polyfit(np.arange(2, 5), np.log2(errs), 1)[0]
    assert rate >= 1.0


def test_fem_baseline_collapses_at_r1(problem81):
    grid = TimeGrid(TAU, 8)
    zc = np.zeros(problem81.n_coarse_dofs)
    P = prolongation(problem81.pair)
    fem = galerkin_wave_solve(P, problem81.forms, 1.0, grid, zc, zc, "fem")
    zeros = np.zeros(problem81.n_fine_dofs)
    ref = fine_fem_solve(problem81.forms, 1.0, zeros, zeros, grid)
    assert rel_l2h1(problem81.forms, fem, ref) <= 1e-10


def test_trajectory_export(tmp_path, problem44):
    grid = TimeGrid(TAU, 4)
    zeros = np.zeros(problem44.n_fine_dofs)
    traj = fine_fem_solve(problem44.forms, 1.0, zeros, zeros, grid)
    csv_path = tmp_path / "traj.csv"
    trajectory_csv(traj, problem44.forms, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "step,time,l2,h1"
    assert len(lines) == grid.n_steps + 2
    assert float(lines[1].split(",")[2]) == 0.0

    bin_path = tmp_path / "final.npy"
    save_final_state(traj, bin_path)
    np.testing.assert_array_equal(np.load(bin_path), traj.states[-1])


def test_error_norms_zero_for_identical(problem44):
    grid = TimeGrid(TAU, 4)
    zeros = np.zeros(problem44.n_fine_dofs)
    traj = fine_fem_solve(problem44.forms, 1.0, zeros, zeros, grid)
    assert rel_h1_final(problem44.forms, traj, traj) == 0.0
    assert rel_l2h1(problem44.forms, traj, traj) == 0.0
