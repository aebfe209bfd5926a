import numpy as np
import pytest

from sdwave.assembly import build_forms
from sdwave.harness import random_field
from sdwave.interpolation import build_interpolator
from sdwave.mesh import build_uniform_mesh, refine

TAU = 0.02


class ProblemBundle:
    def __init__(self, q, r, seed=1, tau=TAU, lo=0.1, hi=1000.0):
        self.pair = refine(build_uniform_mesh(q), r)
        self.field_a = random_field(self.pair.fine, lo, hi, seed)
        self.field_b = random_field(self.pair.fine, lo, hi, seed + 1)
        self.forms = build_forms(self.pair, self.field_a, self.field_b, tau)
        self.interp = build_interpolator(self.pair)
        self.tau = tau

    @property
    def n_coarse_dofs(self):
        return self.pair.coarse.n_dofs

    @property
    def n_fine_dofs(self):
        return self.pair.fine.n_dofs


@pytest.fixture(scope="session")
def problem44():
    # coarse 4x4, refinement 4: the workhorse mid-size setup
    return ProblemBundle(4, 4)


@pytest.fixture(scope="session")
def problem81():
    # h = H: the fine-scale space is trivial
    return ProblemBundle(8, 1)


@pytest.fixture(scope="session")
def problem82():
    return ProblemBundle(8, 2)
