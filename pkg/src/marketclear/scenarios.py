"""Perturbed-load scenarios labelled with the exact solver.

Noise is multiplicative Gaussian on the gross bus loads, independent per bus
and sample; committed generation is subtracted afterwards, so the residual
load seen by the clearing problem keeps the committed injections fixed.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import LabeledSample
from .errors import (AssumptionViolatedError, DatasetMismatchError, InfeasibilityRateError,
                     InfeasibleError, IterationLimitError, NumericalError)
from .opf_oracle import extract_binding_set, solve_opf
from .solution import BindingSet, ClearingSolution

log = logging.getLogger(__name__)

FORMAT_TAG = "marketclear-dataset/1"
MAX_REJECT_RATE = 0.10
_REJECTED = (InfeasibleError, AssumptionViolatedError, IterationLimitError, NumericalError)


@dataclass(frozen=True)
class VolatilitySpec:
    sigma: float
    seed: int = 0
    sample_count: int = 500

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")


@dataclass(frozen=True, eq=False)
class DatasetSample:
    id: int
    loads: np.ndarray  # residual loads, p.u.
    solution: ClearingSolution

    @property
    def binding(self):
        return self.solution.binding

    def labeled(self):
        return LabeledSample.from_binding(self.loads, self.binding, len(self.solution.mu))


@dataclass(eq=False)
class Dataset:
    fingerprint: str
    spec: VolatilitySpec
    samples: list
    train_size: int
    rejected_draws: int = 0
    n_bus: int = 0
    n_line: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def train_indices(self):
        return list(range(min(self.train_size, len(self.samples))))

    @property
    def test_indices(self):
        return list(range(min(self.train_size, len(self.samples)), len(self.samples)))

    def with_split(self, train_size):
        return Dataset(self.fingerprint, self.spec, self.samples, train_size,
                       self.rejected_draws, self.n_bus, self.n_line, dict(self.meta))

    def train(self):
        return [self.samples[i] for i in self.train_indices]

    def test(self):
        return [self.samples[i] for i in self.test_indices]

    def check_case(self, case):
        if case.fingerprint != self.fingerprint:
            raise DatasetMismatchError(f"dataset was labelled on case {self.fingerprint}, "
                                       f"not {case.fingerprint}")


def _draws(case, sigma, z):
    return case.residual_loads(case.gross_loads * (1.0 + sigma * z))


def perturb_loads(case, spec):
    """Residual load vectors ``l_nom * (1 + sigma * z) - committed``."""
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal((spec.sample_count, case.n_bus))
    return _draws(case, spec.sigma, z)


def _label(args):
    case, model, loads = args
    try:
        sol = solve_opf(case, model, loads=loads)
    except _REJECTED as exc:
        return type(exc).__name__
    bset = extract_binding_set(sol)
    return sol if bset == sol.binding else replace(sol, binding=bset)


def label_loads(case, model, loads, workers=1):
    """Oracle solutions for each load vector; rejected draws give the error name."""
    jobs = [(case, model, l) for l in loads]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_label, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_label(j) for j in jobs]


def build_dataset(case, model, spec, train_size, workers=1, max_reject_rate=MAX_REJECT_RATE):
    """Draw ``spec.sample_count`` feasible scenarios and label them.

    Draws the solver rejects (infeasible, numerically singular, or a free
    generator at a limit) are replaced by fresh draws from the same stream
    and counted.
    """
    rng = np.random.default_rng(spec.seed)
    accepted, rejected, drawn = [], 0, 0
    reasons = {}
    need = spec.sample_count
    while len(accepted) < need:
        batch = need - len(accepted)
        loads = _draws(case, spec.sigma, rng.standard_normal((batch, case.n_bus)))
        drawn += batch
        for l, res in zip(loads, label_loads(case, model, loads, workers)):
            if isinstance(res, str):
                rejected += 1
                reasons[res] = reasons.get(res, 0) + 1
            else:
                accepted.append(DatasetSample(len(accepted), l, res))
        if rejected > max_reject_rate * drawn:
            raise InfeasibilityRateError(
                f"{rejected} of {drawn} draws rejected ({reasons}); case and volatility disagree")
    if rejected:
        log.info("rejected %d of %d draws: %s", rejected, drawn, reasons)
    return Dataset(fingerprint=case.fingerprint, spec=spec, samples=accepted,
                   train_size=train_size, rejected_draws=rejected, n_bus=case.n_bus,
                   n_line=case.n_line, meta={"reject_reasons": reasons})


# -- newline-delimited JSON ---------------------------------------------------

def _record(sample):
    sol = sample.solution
    return {
        "id": sample.id,
        "loads": sample.loads.tolist(),
        "upper": sorted(sol.binding.upper),
        "lower": sorted(sol.binding.lower),
        "mu": sol.mu.tolist(),
        "nu": sol.nu.tolist(),
        "lambda": sol.lam,
        "dispatch": sol.dispatch.tolist(),
        "lmps": sol.lmps.tolist(),
        "flows": sol.flows.tolist(),
        "objective": sol.objective,
        "iterations": sol.iterations,
    }


def dataset_lines(ds):
    header = {
        "type": "header",
        "format": FORMAT_TAG,
        "fingerprint": ds.fingerprint,
        "spec": {"sigma": ds.spec.sigma, "seed": ds.spec.seed,
                 "sample_count": ds.spec.sample_count},
        "split": {"train_size": ds.train_size},
        "rejected_draws": ds.rejected_draws,
        "n_bus": ds.n_bus,
        "n_line": ds.n_line,
        "meta": ds.meta,
    }
    yield json.dumps(header, sort_keys=True)
    for s in ds.samples:
        yield json.dumps(_record(s), sort_keys=True)


def write_dataset(path, ds):
    with open(path, "w") as fh:
        for line in dataset_lines(ds):
            fh.write(line + "\n")


def read_dataset(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT_TAG:
            raise ValueError(f"{path}: not a dataset file")
        samples = []
        for line in fh:
            r = json.loads(line)
            sol = ClearingSolution(
                dispatch=np.array(r["dispatch"]), lam=r["lambda"], mu=np.array(r["mu"]),
                nu=np.array(r["nu"]), flows=np.array(r["flows"]), lmps=np.array(r["lmps"]),
                objective=r["objective"], loads=np.array(r["loads"]), provenance="oracle",
                binding=BindingSet(upper=r["upper"], lower=r["lower"]),
                iterations=r.get("iterations", 0))
            samples.append(DatasetSample(r["id"], np.array(r["loads"]), sol))
    spec = VolatilitySpec(**header["spec"])
    return Dataset(fingerprint=header["fingerprint"], spec=spec, samples=samples,
                   train_size=header["split"]["train_size"],
                   rejected_draws=header["rejected_draws"], n_bus=header["n_bus"],
                   n_line=header["n_line"], meta=header.get("meta", {}))
