"""Synthesize the IEEE-118 study inputs: thermal limits and three commitments.

The stock case carries no usable line ratings and no commitment data, so both
are built here from the nominal operating points:

* each configuration fixes the committed units by a bounded economic dispatch
  that leaves the free units priced at a target marginal cost;
* every line gets a comfortable rating above its largest nominal flow, then a
  couple of meshed, heavily loaded lines per configuration are tightened to
  just below that flow so congestion appears and flips under load noise;
* any other line that ends up binding at nominal load is relaxed again.

Usage: python scripts/make_study.py [data/ieee118]
"""
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from marketclear.case_model import Commitment, NetworkCase, load_case, reduce_commitment, serialize_case
from marketclear.opf_oracle import solve_opf
from marketclear.ptdf import build_ptdf

FREE_SETS = {
    1: [3, 5, 11, 12, 18, 30, 34, 40, 42, 43],
    2: [2, 5, 12, 26, 30, 39],
    3: [5, 12, 14, 20, 30, 37, 39],
}
# marginal cost of the free units at nominal load, $/MWh
TARGET_PRICE = {1: 41.0, 2: 41.0, 3: 36.0}
TIGHTEN_PER_CONFIG = 2
TIGHTEN_FACTOR = 0.97
MAX_SPREAD = 0.95  # skip radial lines whose flow one free unit fully controls
MARGIN_FACTOR, MARGIN_MW = 1.5, 50.0


def commitment_for(case, free, price):
    base = case.base_mva
    q = case.quad_costs / base ** 2
    c = case.lin_costs / base
    lo, hi = case.p_min * base, case.p_max * base
    fi = [g - 1 for g in free]
    p_free = (price - c[fi]) / (2 * q[fi])
    if np.any((p_free <= lo[fi]) | (p_free >= hi[fi])):
        raise SystemExit(f"price {price} puts a free unit of {free} at a limit")
    rest = [i for i in range(case.n_gen) if i not in fi]
    target = case.loads.sum() * base - p_free.sum()

    def dispatch(lam):
        return np.clip((lam - c[rest]) / (2 * q[rest]), lo[rest], hi[rest])

    lam = brentq(lambda x: dispatch(x).sum() - target, -1e4, 1e4, xtol=1e-12)
    return Commitment(free=tuple(free),
                      committed={case.generators[i].id: round(float(p), 6)
                                 for i, p in zip(rest, dispatch(lam))})


def with_limits(case, fmax_mw):
    lines = [dataclasses.replace(ln, flow_limit=f / case.base_mva)
             for ln, f in zip(case.lines, fmax_mw)]
    return NetworkCase(case.buses, lines, case.generators, case.base_mva)


def nominal_flows(case, model, commitments):
    out = {}
    for k, cm in commitments.items():
        sol = solve_opf(reduce_commitment(case, cm), model, enforce_bounds=False)
        out[k] = sol
    return out


def synthesize(case):
    base = case.base_mva
    commitments = {k: commitment_for(case, free, TARGET_PRICE[k]) for k, free in FREE_SETS.items()}
    model = build_ptdf(case)
    sols = nominal_flows(case, model, commitments)
    flows = np.array([sols[k].flows * base for k in FREE_SETS])
    peak = np.abs(flows).max(axis=0)
    fmax = np.maximum(MARGIN_FACTOR * peak, peak + MARGIN_MW)

    tight = {}
    for row, (k, free) in enumerate(FREE_SETS.items()):
        buses = [case.generators[g - 1].bus for g in free]
        spread = np.ptp(model.ptdf[:, buses], axis=1)
        score = np.abs(flows[row]) * spread
        score[spread > MAX_SPREAD] = 0.0
        for j in np.argsort(-score, kind="stable")[:TIGHTEN_PER_CONFIG]:
            tight[int(j)] = TIGHTEN_FACTOR * peak[j]
    fmax[list(tight)] = list(tight.values())

    for _ in range(20):
        study = with_limits(case, fmax)
        sols = nominal_flows(study, build_ptdf(study), commitments)
        extra = {j: abs(sol.flows[j]) * base for sol in sols.values()
                 for j in sol.binding.upper | sol.binding.lower if j not in tight}
        if not extra:
            break
        for j, f in extra.items():
            fmax[j] = max(MARGIN_FACTOR * f, f + MARGIN_MW)
    else:
        raise SystemExit("line limits did not settle")
    return with_limits(case, np.round(fmax, 3)), commitments, sorted(tight)


def main(outdir="data/ieee118"):
    out = Path(outdir)
    case = load_case(out / "case118.m")
    study, commitments, tight = synthesize(case)
    (out / "case118_study.json").write_text(serialize_case(study))
    for k, cm in commitments.items():
        (out / f"config{k}.json").write_text(cm.to_json() + "\n")
    print("tightened lines:", [study.lines[j].id for j in tight])
    model = build_ptdf(study)
    for k, cm in commitments.items():
        sol = solve_opf(reduce_commitment(study, cm), model)
        print(f"config {k}: nominal binding upper={sorted(sol.binding.upper)} "
              f"lower={sorted(sol.binding.lower)}")
    study_cfg = {
        "case": "case118_study.json",
        "commitments": [f"config{k}.json" for k in commitments],
        "sigmas": [0.01, 0.05, 0.10],
        "train_sizes": [50, 100, 200],
        "sample_count": 500,
        "seed": 0,
    }
    (out / "study.json").write_text(json.dumps(study_cfg, indent=1) + "\n")


if __name__ == "__main__":
    main(*sys.argv[1:])
