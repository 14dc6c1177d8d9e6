import numpy as np

from hjbsafe.qpsolver import QuadraticProgram


def random_qp(rng, feasible=True):
    """O(1)-scaled strictly convex QP with m <= 3 inputs and k <= 9 rows."""
    m = int(rng.integers(1, 4))
    k = int(rng.integers(0, 10))
    Q, _ = np.linalg.qr(rng.normal(size=(m, m)))
    H = Q @ np.diag(rng.uniform(0.5, 4.0, m)) @ Q.T
    H = 0.5 * (H + H.T)
    c = rng.normal(scale=2.0, size=m)
    G = rng.normal(size=(k, m))
    if feasible:
        u_in = rng.normal(scale=0.5, size=m)
        h = G @ u_in + rng.uniform(0.0, 1.0, k)
    else:
        h = rng.normal(size=k)
    return QuadraticProgram(H, c, G, h)
