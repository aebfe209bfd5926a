"""P1 assembly of mass, stiffness and load, coefficient fields, discrete norms."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

# consistent P1 mass matrix is area/12 * MASS_PATTERN
MASS_PATTERN = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])


class CoefficientField:
    """One strictly positive scalar per fine element."""

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_elements,):
            raise ValueError("coefficient field must carry one value per element")
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
            raise ValueError("coefficient values must be finite and strictly positive")
        self.mesh = mesh
        self.values = values
        self.bounds = (float(values.min()), float(values.max()))


def _symmetric_csr(rows, cols, vals, ndof):
    # assemble the upper triangle, then mirror: bitwise symmetric by construction
    upper = rows <= cols
    U = sparse.csr_matrix((vals[upper], (rows[upper], cols[upper])), shape=(ndof, ndof))
    U.sum_duplicates()
    strict = sparse.triu(U, k=1)
    A = (U + strict.T).tocsr()
    A.sort_indices()
    return A


def _coefficient_values(mesh, field):
    if field is None:
        return np.ones(mesh.n_elements)
    if isinstance(field, CoefficientField):
        if field.mesh is not mesh and field.mesh.n != mesh.n:
            raise ValueError("coefficient field lives on a different mesh")
        return field.values
    values = np.asarray(field, dtype=float)
    if values.shape != (mesh.n_elements,):
        raise ValueError("coefficient field lives on a different mesh")
    return values


def assemble_stiffness(mesh, field=None, full=False):
    """Stiffness matrix for the given per-element coefficient (unit if None).

    Exact for P1 since the gradients are element-wise constant. Returns the
    matrix on interior dofs unless full=True.
    """
    values = _coefficient_values(mesh, field)
    g = mesh.gradients()
    areas = mesh.areas()
    local = np.einsum("tid,tjd->tij", g, g) * (areas * values)[:, None, None]

    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    K = _symmetric_csr(rows, cols, local.ravel(), mesh.n_vertices)
    if full:
        return K
    free = mesh.interior_nodes
    return K[free][:, free].tocsr()


def assemble_mass(mesh, full=False):
    """Consistent P1 mass matrix."""
    areas = mesh.areas()
    local = (areas[:, None, None] / 12.0) * MASS_PATTERN
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    M = _symmetric_csr(rows, cols, local.ravel(), mesh.n_vertices)
    if full:
        return M
    free = mesh.interior_nodes
    return M[free][:, free].tocsr()


def assemble_load(mesh, f, t=0.0, full=False):
    """Load vector by the vertex quadrature rule (exact for constant f)."""
    if callable(f):
        fv = np.asarray(f(mesh.vertices[:, 0], mesh.vertices[:, 1], t), dtype=float)
        fv = np.broadcast_to(fv, (mesh.n_vertices,))
    else:
        fv = np.full(mesh.n_vertices, float(f))
    if not np.all(np.isfinite(fv)):
        raise ValueError("source function produced non-finite values")
    tri = mesh.triangles
    w = (mesh.areas()[:, None] / 3.0) * fv[tri]
    load = np.bincount(tri.ravel(), weights=w.ravel(), minlength=mesh.n_vertices)
    if full:
        return load
    return load[mesh.interior_nodes]


def element_rhs(pair, tilde_values, t_coarse, v):
    """Functional z -> integral over coarse element T of (A + tau B) grad v . grad z.

    Assembled over the fine elements whose parent is T; v and the result are
    interior fine dof vectors.
    """
    fine = pair.fine
    elems = pair.fibers[t_coarse]
    tri = fine.triangles[elems]
    g = fine.gradients()[elems]  # (m, 3, 2)
    areas = fine.areas()[elems]
    coeff = tilde_values[elems]

    v_full = fine.expand(np.asarray(v, dtype=float))
    grad_v = np.einsum("mi,mid->md", v_full[tri], g)
    w = (coeff * areas)[:, None] * np.einsum("md,mid->mi", grad_v, g)
    out = np.bincount(tri.ravel(), weights=w.ravel(), minlength=fine.n_vertices)
    return fine.restrict(out)


@dataclass
class NormReport:
    l2: float
    h1: float
    a: float
    b: float
    energy: float


class DiscreteForms:
    """Assembled fine-grid forms for one coefficient pair and time step."""

    def __init__(self, pair, field_a, field_b, tau):
        if tau <= 0.0:
            raise ValueError("time step must be positive")
        fine = pair.fine
        self.pair = pair
        self.tau = tau
        self.a_values = _coefficient_values(fine, field_a)
        self.b_values = _coefficient_values(fine, field_b)
        self.tilde_values = self.a_values + tau * self.b_values

        self.M = assemble_mass(fine)
        self.K_A = assemble_stiffness(fine, self.a_values)
        self.K_B = assemble_stiffness(fine, self.b_values)
        self.K_1 = assemble_stiffness(fine)
        self.K_tilde = (self.K_A + tau * self.K_B).tocsr()
        self._h1_matrix = (self.K_1 + self.M).tocsr()

    @property
    def fine(self):
        return self.pair.fine


def build_forms(pair, field_a, field_b, tau):
    return DiscreteForms(pair, field_a, field_b, tau)


def norms(forms, v):
    """L2, H1, a-, b- norms and the tau-weighted energy of an interior dof vector."""
    v = np.asarray(v, dtype=float)
    l2 = np.sqrt(max(v @ (forms.M @ v), 0.0))
    h1 = np.sqrt(max(v @ (forms._h1_matrix @ v), 0.0))
    a = np.sqrt(max(v @ (forms.K_A @ v), 0.0))
    b = np.sqrt(max(v @ (forms.K_B @ v), 0.0))
    energy = float(v @ (forms.K_tilde @ v))
    return NormReport(float(l2), float(h1), float(a), float(b), energy)


def h1_norm(forms, v):
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (forms._h1_matrix @ v), 0.0)))


def save_coefficient_csv(path, pair, field):
    """Write a field as 'n,r,count' header plus one value per line in element order."""
    lines = ["%d,%d,%d" % (pair.coarse.n, pair.r, field.values.size)]
    lines += [np.format_float_scientific(v, precision=17) for v in field.values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_coefficient_csv(path):
    """Read a field written by save_coefficient_csv; returns (n, r, values)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        n, r, count = (int(s) for s in header)
        values = np.array([float(fh.readline()) for _ in range(count)])
    if values.size != 2 * (n * r) ** 2:
        raise ValueError("coefficient file does not match its mesh header")
    return n, r, values
