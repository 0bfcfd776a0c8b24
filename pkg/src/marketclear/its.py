"""Identification-then-solving: clear the market from a known binding set.

Given the lines at their limits, optimality reduces to one symmetric linear
system in the unknowns ``[p; nu*; mu*; lam]``::

    [ 2Q        -(Phi_nu D)^T  (Phi_mu D)^T  1 ] [p  ]   [ -c                ]
    [ -Phi_nu D  0             0             0 ] [nu*] = [ f_nu - Phi_nu l   ]
    [  Phi_mu D  0             0             0 ] [mu*]   [ f_mu + Phi_mu l   ]
    [  1^T       0             0             0 ] [lam]   [ sum l             ]

The first block row is generator stationarity, the next two pin the
selected flows at ``-fmax`` / ``+fmax`` and the last is power balance.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, NumericalError, OverdeterminedError, ValidationError
from .solution import BindingSet, ClearingSolution, generation_cost, kkt_report

__all__ = [
    "BindingSet", "SleSystem", "SleSolution", "assemble_sle", "solve_sle",
    "compute_lmps", "expand_duals", "its_clear",
]

RANK_RTOL = 1e-10
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SleSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    upper: tuple  # line indices of the mu* block, ascending
    lower: tuple  # line indices of the nu* block, ascending
    n_gen: int


@dataclass(frozen=True, eq=False)
class SleSolution:
    dispatch: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    lam: float
    degenerate: bool
    residual: float


def _check_bset(case, bset):
    lines = bset.upper | bset.lower
    if lines and max(lines) >= case.n_line:
        raise DimensionError(f"binding set references line {max(lines)} of {case.n_line}")
    if len(bset) > case.n_gen:
        raise OverdeterminedError(f"{len(bset)} binding lines for {case.n_gen} free generators")
    fmax = case.flow_limits
    unlimited = [k for k in lines if not np.isfinite(fmax[k])]
    if unlimited:
        raise ValidationError(f"lines {sorted(unlimited)} have no finite limit and cannot bind")


def kkt_matrix(case, model, upper, lower):
    ng = case.n_gen
    phi_d = model.ptdf[:, case.gen_bus]
    a_nu = -phi_d[list(lower)]
    a_mu = phi_d[list(upper)]
    cons = np.vstack([a_nu, a_mu, np.ones((1, ng))])
    n = ng + len(cons)
    M = np.zeros((n, n))
    M[:ng, :ng] = np.diag(2.0 * case.quad_costs)
    M[ng:, :ng] = cons
    M[:ng, ng:] = cons.T
    return M


def assemble_sle(case, model, bset, loads=None):
    _check_bset(case, bset)
    loads = case.loads if loads is None else np.asarray(loads, dtype=float)
    if loads.shape != (case.n_bus,):
        raise DimensionError(f"load vector has shape {loads.shape}, expected ({case.n_bus},)")
    upper, lower = tuple(sorted(bset.upper)), tuple(sorted(bset.lower))
    M = kkt_matrix(case, model, upper, lower)
    phi_l = model.ptdf @ loads
    fmax = case.flow_limits
    rhs = np.concatenate([
        -case.lin_costs,
        fmax[list(lower)] - phi_l[list(lower)],
        fmax[list(upper)] + phi_l[list(upper)],
        [loads.sum()],
    ])
    return SleSystem(matrix=M, rhs=rhs, upper=upper, lower=lower, n_gen=case.n_gen)


def equilibrate(M, n_gen):
    """Symmetric diagonal scaling giving a unit generator block and unit-norm
    constraint rows, so the rank cut compares like with like."""
    d = np.ones(len(M))
    d[:n_gen] = 1.0 / np.sqrt(np.diag(M)[:n_gen])
    rows = np.linalg.norm(M[n_gen:, :n_gen] * d[:n_gen], axis=1)
    d[n_gen:] = np.where(rows > 0, 1.0 / np.where(rows > 0, rows, 1.0), 1.0)
    return d


def solve_kkt(M, rhs, n_gen):
    """Solve a KKT-form system after equilibration.

    With the generator block scaled to the identity the system splits into
    ``y + N^T w = r1`` and ``N y = r2``, solved through the SVD of the scaled
    constraint rows ``N``. That keeps the conditioning at that of ``N`` rather
    than its square. Singular values below ``RANK_RTOL * sigma_max`` count as
    zero; the duals then take the minimum-norm solution. Returns the solution
    and the numerical rank of the whole system.
    """
    d = equilibrate(M, n_gen)
    r = rhs * d
    r1, r2 = r[:n_gen], r[n_gen:]
    N = M[n_gen:, :n_gen] * d[n_gen:, None] * d[:n_gen]
    if not len(N):
        return r * d, n_gen
    U, s, Vt = np.linalg.svd(N.T, full_matrices=False)
    keep = s > RANK_RTOL * s[0] if s.size and s[0] > 0 else np.zeros(s.size, bool)
    U, s, Vt = U[:, keep], s[keep], Vt[keep]
    along = (Vt @ r2) / s
    y = r1 - U @ (U.T @ r1) + U @ along
    w = Vt.T @ ((U.T @ r1 - along) / s)
    return np.concatenate([y, w]) * d, n_gen + int(keep.sum())


def solve_sle(system):
    """Minimum-norm least-squares solution of the assembled system.

    A rank-deficient matrix sets ``degenerate``. Raises NumericalError when
    no solution fits the equations.
    """
    M, rhs = system.matrix, system.rhs
    x, rank = solve_kkt(M, rhs, system.n_gen)
    residual = float(np.max(np.abs(M @ x - rhs)))
    scale = max(1.0, float(np.max(np.abs(rhs))))
    if not residual <= RESIDUAL_TOL * scale:
        raise NumericalError(f"binding set admits no solution (residual {residual:.3g})")
    ng, m_nu = system.n_gen, len(system.lower)
    return SleSolution(
        dispatch=x[:ng],
        nu=x[ng:ng + m_nu],
        mu=x[ng + m_nu:-1],
        lam=float(x[-1]),
        degenerate=bool(rank < len(rhs)),
        residual=residual,
    )


def compute_lmps(model, lam, mu_star, nu_star, bset):
    upper, lower = sorted(bset.upper), sorted(bset.lower)
    Phi = model.ptdf
    return (-lam + Phi[lower].T @ np.asarray(nu_star, dtype=float)
            - Phi[upper].T @ np.asarray(mu_star, dtype=float))


def expand_duals(n_line, bset, mu_star, nu_star):
    mu = np.zeros(n_line)
    nu = np.zeros(n_line)
    mu[sorted(bset.upper)] = mu_star
    nu[sorted(bset.lower)] = nu_star
    return mu, nu


def its_clear(case, model, bset, loads=None):
    """Dispatch, duals and LMPs for a predicted binding set.

    Recovered duals are never clipped; a wrong binding set shows up in the
    attached KKT report (overloads, negative duals).
    """
    loads = case.loads if loads is None else np.asarray(loads, dtype=float)
    sle = solve_sle(assemble_sle(case, model, bset, loads))
    mu, nu = expand_duals(case.n_line, bset, sle.mu, sle.nu)
    p = sle.dispatch
    sol = ClearingSolution(
        dispatch=p,
        lam=sle.lam,
        mu=mu,
        nu=nu,
        flows=model.ptdf @ (case.gen_map @ p - loads),
        lmps=compute_lmps(model, sle.lam, sle.mu, sle.nu, bset),
        objective=generation_cost(case, p),
        loads=loads,
        provenance="its",
        binding=bset,
        degenerate=sle.degenerate,
    )
    return replace(sol, kkt=kkt_report(case, model, sol))
