"""Small-network builders and an exhaustive reference solver for the tests."""
import itertools
import math

import numpy as np

from marketclear.case_model import Bus, Generator, Line, NetworkCase

INF = math.inf


def make_case(loads, lines, gens, base_mva=100.0):
    """``lines``: (from, to, b, fmax); ``gens``: (bus, q, c[, pmin, pmax]).
    Bus positions double as 1-based ids; everything is per-unit."""
    buses = [Bus(i + 1, float(l)) for i, l in enumerate(loads)]
    lns = [Line(k + 1, f, t, float(b), float(fm)) for k, (f, t, b, fm) in enumerate(lines)]
    gs = []
    for g, spec in enumerate(gens):
        bus, q, c, *box = spec
        lo, hi = box if box else (-INF, INF)
        gs.append(Generator(g + 1, bus, float(q), float(c), float(lo), float(hi)))
    return NetworkCase(buses, lns, gs, base_mva)


def triangle(fmax=(INF, INF, INF), loads=(0.0, 0.0, 0.0), gens=((0, 0.5, 10.0),)):
    """Buses 1,2,3 with unit lines 1->2, 1->3, 3->2."""
    lines = [(0, 1, 1.0, fmax[0]), (0, 2, 1.0, fmax[1]), (2, 1, 1.0, fmax[2])]
    return make_case(loads, lines, gens)


def congested_triangle():
    """Cheap unit at bus 1, dear unit at bus 2, load at bus 3; line 1->3 is
    the only one that binds."""
    return triangle(fmax=(INF, 1.5, INF), loads=(0.0, 0.0, 3.0),
                    gens=((0, 1.0, 10.0), (1, 1.0, 12.0)))


def dense_ptdf(case):
    """PTDF by grounding bus 0 and inverting the reduced Laplacian."""
    n = case.n_bus
    A = np.zeros((case.n_line, n))
    for k, ln in enumerate(case.lines):
        A[k, ln.from_bus] = 1.0
        A[k, ln.to_bus] = -1.0
    b = case.susceptance
    B = A.T @ (b[:, None] * A)
    X = np.zeros((n, n))
    X[1:, 1:] = np.linalg.inv(B[1:, 1:])
    H = (b[:, None] * A) @ X
    return H - H.mean(axis=1, keepdims=True)


def brute_force(case, loads=None, tol=1e-9):
    """Enumerate every upper/lower/slack assignment of the lines, solve the
    equality-constrained QP of each and keep the KKT points.

    Returns a list of dicts with p, lam, mu, nu, lmps. Uses its own PTDF and
    its own KKT assembly so it shares no code with the package solvers.
    """
    loads = case.loads if loads is None else np.asarray(loads, float)
    H = dense_ptdf(case)
    gb = case.gen_bus
    q, c = case.quad_costs, case.lin_costs
    ng, nl = case.n_gen, case.n_line
    fmax = case.flow_limits
    HD = H[:, gb]
    Hl = H @ loads
    finite = [k for k in range(nl) if np.isfinite(fmax[k])]
    found = []
    for signs in itertools.product((0, 1, -1), repeat=len(finite)):
        act = [(k, s) for k, s in zip(finite, signs) if s]
        if len(act) > ng:
            continue
        # x = [p, lam, m_1..m_a]; m is the multiplier of s*F_k <= fmax_k
        m = len(act)
        K = np.zeros((ng + 1 + m, ng + 1 + m))
        r = np.zeros(ng + 1 + m)
        K[:ng, :ng] = np.diag(2 * q)
        K[:ng, ng] = 1.0
        K[ng, :ng] = 1.0
        r[:ng] = -c
        r[ng] = loads.sum()
        for j, (k, s) in enumerate(act):
            K[:ng, ng + 1 + j] = s * HD[k]
            K[ng + 1 + j, :ng] = s * HD[k]
            r[ng + 1 + j] = fmax[k] + s * Hl[k]
        x, *_ = np.linalg.lstsq(K, r, rcond=None)
        if np.max(np.abs(K @ x - r)) > 1e-9 * max(1.0, np.max(np.abs(r))):
            continue
        p, lam, mult = x[:ng], x[ng], x[ng + 1:]
        F = HD @ p - Hl
        if np.any(np.abs(F[finite]) > fmax[finite] + tol) or np.any(mult < -tol):
            continue
        mu, nu = np.zeros(nl), np.zeros(nl)
        for (k, s), v in zip(act, mult):
            (mu if s > 0 else nu)[k] = v
        found.append({"p": p, "lam": lam, "mu": mu, "nu": nu,
                      "lmps": -lam + H.T @ (nu - mu), "active": act})
    return found


def two_regime_samples(n, sigma=0.01, seed=0):
    """Loads drawn around a light and a heavy operating point of the congested
    triangle; the heavy one congests line 1->3, the light one does not. The
    labels come from the exact solver."""
    from marketclear.case_model import Commitment, reduce_commitment
    from marketclear.classifier import LabeledSample
    from marketclear.opf_oracle import solve_opf
    from marketclear.ptdf import build_ptdf

    case = congested_triangle()
    rc = reduce_commitment(case, Commitment.all_free(case))
    model = build_ptdf(case)
    rng = np.random.default_rng(seed)
    centres = np.array([[0.2, 0.3, 1.5], [0.2, 0.3, 4.0]])
    out = []
    for i in range(n):
        loads = centres[i % 2] * (1 + sigma * rng.standard_normal(3))
        sol = solve_opf(rc, model, loads=loads)
        out.append(LabeledSample.from_binding(loads, sol.binding, case.n_line))
    return out
