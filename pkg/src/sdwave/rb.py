"""Reduced-basis compression of the transient correction sequences."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .evolution import localized_gfem_solve
from .interpolation import kernel_constraints
from .lod import TransientCorrectors


class EmptyBasisError(ValueError):
    """Raised when the first snapshot carries no energy."""


@dataclass
class ReducedBasis:
    x_dof: int
    Z: np.ndarray          # (patch dofs, m), orthonormal in the weighted product
    a_hat: np.ndarray      # Z^T (K_A + tau K_B) Z, identity up to roundoff
    k_hat: np.ndarray      # Z^T K_A Z
    m_selected: int


def _patch_matrices(forms, dofs):
    a_tilde = forms.K_tilde[dofs][:, dofs].tocsr()
    k_a = forms.K_A[dofs][:, dofs].tocsr()
    return a_tilde, k_a


def build_rb(snapshots, interp, forms, dofs, tol_rel=1e-10, x_dof=-1):
    """Gram-Schmidt in the energy inner product with tolerance-gated truncation.

    A snapshot is rejected once its orthogonalized remainder falls below
    tol_rel times its own energy norm; collection stops at the first
    rejection. Near-dependent snapshots leave rounding noise outside the
    fine-scale space, so accepted directions are projected back onto the
    interpolation kernel before they join the basis.
    """
    snapshots = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if snapshots.shape[0] == 0:
        raise EmptyBasisError("no snapshots supplied")
    a_tilde, k_a = _patch_matrices(forms, dofs)
    C = kernel_constraints(interp, dofs)
    gram_c = scipy.linalg.cho_factor((C @ C.T).toarray())

    def kernel_project(v):
        return v - C.T @ scipy.linalg.cho_solve(gram_c, C @ v)

    def dot(u, v):
        return float(u @ (a_tilde @ v))

    first = np.sqrt(max(dot(snapshots[0], snapshots[0]), 0.0))
    if first == 0.0:
        raise EmptyBasisError("empty basis: first snapshot has zero energy")

    basis = []
    consumed = 0
    for s in snapshots:
        norm_s = np.sqrt(max(dot(s, s), 0.0))
        v = s.copy()
        for _ in range(2):  # modified Gram-Schmidt plus one reorthogonalization
            for z in basis:
                v -= dot(z, v) * z
        norm_v = np.sqrt(max(dot(v, v), 0.0))
        if norm_v <= tol_rel * norm_s or norm_v == 0.0:
            break
        v = kernel_project(v)
        for z in basis:
            v -= dot(z, v) * z
        v /= np.sqrt(max(dot(v, v), 0.0))
        basis.append(v)
        consumed += 1

    Z = np.column_stack(basis)
    a_hat = Z.T @ (a_tilde @ Z)
    k_hat = Z.T @ (k_a @ Z)
    return ReducedBasis(x_dof, Z, a_hat, k_hat, consumed)


def rb_step(basis, c_prev):
    """Advance the projected recursion by one time step."""
    c_prev = np.asarray(c_prev, dtype=float)
    if c_prev.shape != (basis.Z.shape[1],):
        raise ValueError("coefficient vector does not match the basis size")
    return np.linalg.solve(basis.a_hat, basis.k_hat @ c_prev)


def lift(basis, c):
    return basis.Z @ np.asarray(c, dtype=float)


def snapshot_singular_values(snapshots, forms, dofs):
    """Singular values of the snapshot family in the energy inner product.

    Uses a Cholesky factor of the patch energy matrix instead of the Gram
    matrix: squaring through the Gram eigenproblem floors the small values
    near sqrt(eps) and would hide the machine-precision tail.
    """
    snapshots = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if snapshots.shape[0] == 0:
        raise ValueError("need at least one snapshot")
    a_tilde, _ = _patch_matrices(forms, dofs)
    chol = scipy.linalg.cholesky(a_tilde.toarray(), lower=False)
    return scipy.linalg.svdvals(chol @ snapshots.T)


def compress_transients(transients, interp, forms, m_max, tol_rel=1e-10,
                        stop_tol=1e-12, horizon=None):
    """Replace each correction sequence by its first m_max members plus
    reduced-basis continuations; returns (sequences, bases per node)."""
    compressed = {}
    bases = {}
    for d, tc in transients.items():
        stored = tc.xi
        m_avail = min(m_max, stored.shape[0])
        kept = stored[:m_avail]
        target = horizon if horizon is not None else stored.shape[0]

        if m_avail >= stored.shape[0] or kept.shape[0] == 0:
            compressed[d] = TransientCorrectors(d, tc.dofs, kept, tc.config)
            continue

        a_tilde, _ = _patch_matrices(forms, tc.dofs)
        first_sq = float(kept[0] @ (a_tilde @ kept[0]))
        if first_sq == 0.0:
            compressed[d] = TransientCorrectors(d, tc.dofs, kept, tc.config)
            continue

        basis = build_rb(kept, interp, forms, tc.dofs, tol_rel=tol_rel, x_dof=d)
        bases[d] = basis

        h1_patch = forms._h1_matrix[tc.dofs][:, tc.dofs].tocsr()
        norm1 = np.sqrt(max(kept[0] @ (h1_patch @ kept[0]), 0.0))
        c = basis.Z.T @ (a_tilde @ kept[-1])
        rows = [kept]
        extra = []
        for _ in range(m_avail, target):
            c = rb_step(basis, c)
            xi = lift(basis, c)
            extra.append(xi)
            if np.sqrt(max(xi @ (h1_patch @ xi), 0.0)) <= stop_tol * norm1:
                break
        if extra:
            rows.append(np.array(extra))
        compressed[d] = TransientCorrectors(d, tc.dofs, np.vstack(rows), tc.config)
    return compressed, bases


def rb_gfem_solve(correctors, transients, interp, forms, f, grid, alpha0, alpha1,
                  m_max, tol_rel=1e-10, stop_tol=1e-12):
    """Localized GFEM where corrections beyond the first m_max steps come from
    the per-node reduced bases."""
    compressed, _ = compress_transients(transients, interp, forms, m_max,
                                        tol_rel=tol_rel, stop_tol=stop_tol,
                                        horizon=grid.n_steps)
    trajectory = localized_gfem_solve(correctors, compressed, interp, forms, f,
                                      grid, alpha0, alpha1)
    trajectory.scheme = "rb_gfem"
    trajectory.meta["m_max"] = m_max
    return trajectory
