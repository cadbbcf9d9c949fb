import numpy as np
import pytest

from rappor import params as pr

# The three bundled reference configurations and the budgets they must
# reproduce (within 5e-3), strongest privacy first.
REFERENCE_EPSILONS = {
    "high": 0.1003,
    "medium": 1.0743,
    "low": 10.018,
}


@pytest.fixture
def medium_params() -> pr.RapporParams:
    return pr.REFERENCE_PARAMS["medium"]


def kkt_violation_bound(design, y, beta, tol=1e-8) -> bool:
    """True when beta satisfies the solver's stated optimality conditions."""
    from rappor.decoder import kkt_violation

    scale = max(float(np.linalg.norm(y)), 1.0)
    return kkt_violation(design, y, beta) <= 10 * tol * scale


def rebuild_design(cmap, params):
    """Dense design matrix over used rows, mirroring the decoder's layout."""
    used = sorted({pos - 1 for row in cmap.positions for pos in row})
    row_of = {pos: i for i, pos in enumerate(used)}
    design = np.zeros((len(used), len(cmap.candidates)))
    for s, row in enumerate(cmap.positions):
        for pos in set(row):
            design[row_of[pos - 1], s] = 1.0
    return design, used
