import numpy as np
import pytest

from wbary import (
    DiscreteMeasure,
    SupportGrid,
    build_instance,
    CostTensor,
    ProblemInstance,
)


@pytest.fixture(scope="session")
def golden_instance():
    """Line support {0,1,2}, unit masses at 0 and 2, uniform weights."""
    support = SupportGrid(np.array([0.0, 1.0, 2.0]))
    left = DiscreteMeasure(SupportGrid(np.array([0.0])), np.array([1.0]))
    right = DiscreteMeasure(SupportGrid(np.array([2.0])), np.array([1.0]))
    return build_instance(support, [left, right])


def random_instance(rng, max_measures=4, max_atoms=5, geometric=False):
    """Small random balanced instance with dense uniform costs in [0, 1].

    With ``geometric`` the costs come from squared line distances instead,
    which keeps the cost-tensor invariant meaningful.
    """
    M = int(rng.integers(2, max_measures + 1))
    R = int(rng.integers(2, max_atoms + 1))
    support = SupportGrid(np.sort(rng.uniform(0, 1, R)) + np.arange(R))
    alpha = rng.dirichlet(np.ones(M) * 5.0)
    inputs = []
    blocks = []
    for _ in range(M):
        S = int(rng.integers(2, max_atoms + 1))
        q = rng.dirichlet(np.ones(S))
        inputs.append(
            DiscreteMeasure(SupportGrid(np.sort(rng.uniform(0, 1, S)) + np.arange(S)), q)
        )
        blocks.append(rng.uniform(0.0, 1.0, size=(R, S)))
    if geometric:
        return build_instance(support, inputs, alpha=alpha)
    cost = CostTensor(tuple(blocks), alpha, 2.0)
    return ProblemInstance(support, tuple(inputs), cost)
