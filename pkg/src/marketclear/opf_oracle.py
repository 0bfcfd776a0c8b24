"""Exact PTDF-form DC-OPF solver used as ground truth.

The solver is a dual active-set method (Goldfarb-Idnani). It starts from the
uncongested economic dispatch, which is dual feasible, and adds the most
violated flow limit one at a time. Whenever adding a limit would drive an
active multiplier negative, that limit is dropped first. Each equality
subproblem is the ITS linear system for the current active set, so the
oracle and ITS share one linear-algebra core.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import replace

import numpy as np

from .errors import (AssumptionViolatedError, DegeneracyWarning, InfeasibleError,
                     IterationLimitError, UnboundedError)
from .its import (assemble_sle, compute_lmps, expand_duals, kkt_matrix, solve_kkt,
                  solve_sle)
from .solution import BindingSet, ClearingSolution, generation_cost, kkt_report

__all__ = ["solve_opf", "kkt_report", "extract_binding_set", "FEAS_TOL", "DUAL_THRESHOLD"]

FEAS_TOL = 1e-8
DUAL_THRESHOLD = 1e-7
DEP_TOL = 1e-9


def _bset(active):
    return BindingSet(upper=[k for k, s in active if s > 0],
                      lower=[k for k, s in active if s < 0])


def _block_order(active):
    # column order of the multipliers in the ITS system: lower then upper, ascending
    lower = sorted(k for k, s in active if s < 0)
    upper = sorted(k for k, s in active if s > 0)
    return [(k, -1) for k in lower] + [(k, 1) for k in upper]


def _clean_solve(case, model, active, loads):
    bset = _bset(active)
    sle = solve_sle(assemble_sle(case, model, bset, loads))
    duals = dict(zip(_block_order(active), np.concatenate([sle.nu, sle.mu])))
    return sle.dispatch, sle.lam, duals


def solve_opf(case, model, loads=None, enforce_bounds=True):
    """Solve the DC-OPF for ``case`` (optionally at other residual ``loads``).

    With ``enforce_bounds`` the free generators must end strictly inside
    their output limits, otherwise AssumptionViolatedError is raised.
    """
    loads = case.loads if loads is None else np.asarray(loads, dtype=float)
    q = case.quad_costs
    if np.any(q <= 0):
        raise UnboundedError("free generators need strictly positive quadratic costs")
    n_line = case.n_line
    phi_d = model.ptdf[:, case.gen_bus]
    phi_l = model.ptdf @ loads
    fmax = case.flow_limits
    inv_sqrt_g = 1.0 / np.sqrt(2.0 * q)

    active = []
    p, lam, duals = _clean_solve(case, model, active, loads)
    limit = max(10 * n_line, 1)
    steps = 0
    while True:
        F = phi_d @ p - phi_l
        viol = np.concatenate([F - fmax, -F - fmax])
        for k, s in active:
            viol[k if s > 0 else n_line + k] = -math.inf
        j = int(np.argmax(viol)) if viol.size else 0
        if not viol.size or viol[j] <= FEAS_TOL:
            break
        k, s = (j, 1) if j < n_line else (j - n_line, -1)
        normal = s * phi_d[k]
        bound = fmax[k] + s * phi_l[k]
        while True:
            steps += 1
            if steps > limit:
                raise IterationLimitError(f"no convergence after {limit} active-set steps")
            order = _block_order(active)
            upper = [kk for kk, ss in order if ss > 0]
            lower = [kk for kk, ss in order if ss < 0]
            M = kkt_matrix(case, model, upper, lower)
            rhs = np.zeros(len(M))
            rhs[:case.n_gen] = -normal
            x, _ = solve_kkt(M, rhs, case.n_gen)
            z, w = x[:case.n_gen], x[case.n_gen:]
            slack = normal @ p - bound
            curv = -(normal @ z)
            # relative squared distance of the new normal from the active span,
            # in the metric of the equilibrated system
            scaled = normal * inv_sqrt_g
            if curv > DEP_TOL * (scaled @ scaled):
                full = slack / curv
            else:
                full = math.inf
            partial, drop = math.inf, None
            wtol = 1e-12 * max(1.0, float(np.max(np.abs(w))))
            for idx, key in sorted(enumerate(order), key=lambda e: e[1][0]):
                if w[idx] < -wtol:
                    ratio = duals[key] / -w[idx]
                    if ratio < partial:
                        partial, drop = ratio, key
            if math.isinf(full) and math.isinf(partial):
                raise InfeasibleError(f"line {case.lines[k].id} limit cannot be met "
                                      "together with power balance")
            t = min(full, partial)
            p = p + t * z
            lam += t * w[-1]
            for idx, key in enumerate(order):
                duals[key] += t * w[idx]
            if partial < full:
                active.remove(drop)
                del duals[drop]
                continue
            active.append((k, s))
            break
        p, lam, duals = _clean_solve(case, model, active, loads)

    bset = _bset(active)
    order = _block_order(active)
    nu_star = np.array([duals[key] for key in order if key[1] < 0])
    mu_star = np.array([duals[key] for key in order if key[1] > 0])
    mu, nu = expand_duals(n_line, bset, mu_star, nu_star)
    if enforce_bounds:
        bad = np.flatnonzero((p <= case.p_min) | (p >= case.p_max))
        if bad.size:
            ids = [case.generators[i].id for i in bad]
            raise AssumptionViolatedError(f"free generators {ids} reach an output limit")
    sol = ClearingSolution(
        dispatch=p,
        lam=lam,
        mu=mu,
        nu=nu,
        flows=model.ptdf @ (case.gen_map @ p - loads),
        lmps=compute_lmps(model, lam, mu_star, nu_star, bset),
        objective=generation_cost(case, p),
        loads=loads,
        provenance="oracle",
        binding=bset,
        iterations=steps,
    )
    return replace(sol, kkt=kkt_report(case, model, sol))


def extract_binding_set(sol, dual_threshold=DUAL_THRESHOLD, flow_limits=None):
    """Label lines by their duals: ``C_mu = {mu > thr}``, ``C_nu = {nu > thr}``.

    With ``flow_limits`` given, saturated lines whose dual is below the
    threshold raise a DegeneracyWarning; they are still labelled slack.
    """
    bset = BindingSet(upper=np.flatnonzero(sol.mu > dual_threshold),
                      lower=np.flatnonzero(sol.nu > dual_threshold))
    if flow_limits is not None:
        fmax = np.asarray(flow_limits, dtype=float)
        sat = np.isfinite(fmax) & (np.abs(np.abs(sol.flows) - fmax) <= FEAS_TOL)
        quiet = sat & (sol.mu <= dual_threshold) & (sol.nu <= dual_threshold)
        if quiet.any():
            warnings.warn(f"lines {np.flatnonzero(quiet).tolist()} saturated with zero dual",
                          DegeneracyWarning, stacklevel=2)
    return bset
