"""Market-clearing results shared by the exact solver and the ITS path.

Sign conventions follow the partial Lagrangian

    sum_g (q p^2 + c p) + lam (sum p - sum l)
        + sum_k mu_k (F_k - fmax_k) - sum_k nu_k (F_k + fmax_k)

so ``mu`` prices the upper flow limit, ``nu`` the lower one and
``LMP_i = -lam + sum_k Phi_ki (nu_k - mu_k)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass(frozen=True)
class BindingSet:
    """Lines at their upper (``C_mu``) and lower (``C_nu``) flow limit."""

    upper: frozenset = frozenset()
    lower: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "upper", frozenset(int(k) for k in self.upper))
        object.__setattr__(self, "lower", frozenset(int(k) for k in self.lower))
        if self.upper & self.lower:
            raise ValueError(f"lines {sorted(self.upper & self.lower)} bind at both limits")
        if any(k < 0 for k in self.upper | self.lower):
            raise ValueError("negative line index in binding set")

    @classmethod
    def from_masks(cls, nu_mask, mu_mask):
        return cls(upper=np.flatnonzero(mu_mask), lower=np.flatnonzero(nu_mask))

    def masks(self, n_line):
        nu = np.zeros(n_line, dtype=np.int8)
        mu = np.zeros(n_line, dtype=np.int8)
        nu[list(self.lower)] = 1
        mu[list(self.upper)] = 1
        return nu, mu

    def __len__(self):
        return len(self.upper) + len(self.lower)

    def to_dict(self):
        return {"upper": sorted(self.upper), "lower": sorted(self.lower)}


@dataclass(frozen=True)
class KktReport:
    stationarity_residual: float
    balance_residual: float
    primal_feasibility_violation: float
    dual_feasibility_violation: float
    comp_slack_residual: float
    duality_gap: float

    @property
    def worst(self):
        return max(asdict(self).values())

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ClearingSolution:
    dispatch: np.ndarray
    lam: float
    mu: np.ndarray
    nu: np.ndarray
    flows: np.ndarray
    lmps: np.ndarray
    objective: float
    loads: np.ndarray
    provenance: str  # "oracle" or "its"
    binding: BindingSet = field(default_factory=BindingSet)
    kkt: KktReport | None = None
    degenerate: bool = False
    iterations: int = 0

    def to_dict(self):
        return {
            "provenance": self.provenance,
            "dispatch": self.dispatch.tolist(),
            "lambda": float(self.lam),
            "mu": self.mu.tolist(),
            "nu": self.nu.tolist(),
            "flows": self.flows.tolist(),
            "lmps": self.lmps.tolist(),
            "objective": float(self.objective),
            "loads": self.loads.tolist(),
            "binding": self.binding.to_dict(),
            "kkt": None if self.kkt is None else self.kkt.to_dict(),
            "degenerate": self.degenerate,
            "iterations": self.iterations,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        kkt = d.get("kkt")
        return cls(
            dispatch=np.array(d["dispatch"], dtype=float),
            lam=float(d["lambda"]),
            mu=np.array(d["mu"], dtype=float),
            nu=np.array(d["nu"], dtype=float),
            flows=np.array(d["flows"], dtype=float),
            lmps=np.array(d["lmps"], dtype=float),
            objective=float(d["objective"]),
            loads=np.array(d["loads"], dtype=float),
            provenance=d["provenance"],
            binding=BindingSet(**d["binding"]),
            kkt=None if kkt is None else KktReport(**kkt),
            degenerate=bool(d.get("degenerate", False)),
            iterations=int(d.get("iterations", 0)),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def generation_cost(case, dispatch):
    return float(np.sum(case.quad_costs * dispatch ** 2 + case.lin_costs * dispatch))


def lagrangian_terms(case, model, dispatch, lam, mu, nu, loads):
    """Flows and the value of the multiplier terms of the Lagrangian.

    The second value is zero at any point satisfying complementary
    slackness and balance; it is the strong-duality gap.
    """
    inj = case.gen_map @ dispatch - loads
    F = model.ptdf @ inj
    fmax = case.flow_limits
    finite = np.isfinite(fmax)
    up = np.where(finite, F - fmax, 0.0)
    lo = np.where(finite, F + fmax, 0.0)
    gap = lam * (dispatch.sum() - loads.sum()) + np.dot(mu, up) - np.dot(nu, lo)
    return F, float(gap)


def kkt_report(case, model, sol):
    """Residuals of the optimality conditions at ``sol`` (all nonnegative)."""
    p, mu, nu, loads = sol.dispatch, sol.mu, sol.nu, sol.loads
    F, gap = lagrangian_terms(case, model, p, sol.lam, mu, nu, loads)
    phi_d = model.ptdf[:, case.gen_bus]
    grad = 2 * case.quad_costs * p + case.lin_costs + sol.lam + phi_d.T @ (mu - nu)
    fmax = case.flow_limits
    finite = np.isfinite(fmax)
    over = np.abs(F[finite]) - fmax[finite]
    comp = np.concatenate([np.abs(mu[finite] * (F[finite] - fmax[finite])),
                           np.abs(nu[finite] * (F[finite] + fmax[finite]))])
    # a dual on a line without a limit cannot satisfy complementary slackness
    if np.any(mu[~finite] != 0) or np.any(nu[~finite] != 0):
        comp = np.append(comp, math.inf)
    return KktReport(
        stationarity_residual=float(np.max(np.abs(grad), initial=0.0)),
        balance_residual=float(abs(p.sum() - loads.sum())),
        primal_feasibility_violation=float(max(0.0, np.max(over, initial=0.0))),
        dual_feasibility_violation=float(max(0.0, -min(np.min(mu, initial=0.0),
                                                       np.min(nu, initial=0.0)))),
        comp_slack_residual=float(np.max(comp, initial=0.0)),
        duality_gap=abs(gap),
    )
