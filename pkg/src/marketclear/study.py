"""Batch study: datasets per (configuration, volatility), classifiers per
training size, ITS evaluation against the stored exact solutions, and the
summary tables recomputed from per-sample records.

Output tree under ``StudyConfig.output_dir``::

    datasets/<config>_s<sigma>.ndjson
    models/<config>_s<sigma>_n<size>.json      (+ .loss.json)
    eval/<config>_s<sigma>_n<size>.ndjson      per-sample records
    table1.csv  cdf.csv  table3.csv            recomputable by ``report``
    timing.json                                wall times, not deterministic
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import classifier
from .case_model import load_case, load_commitment, reduce_commitment
from .coherence import CONDITIONS, coherence_report, format_fraction
from .errors import DatasetMismatchError, MarketClearError, ModelMissingError, ValidationError
from .its import its_clear
from .opf_oracle import solve_opf
from .ptdf import build_ptdf
from .scenarios import VolatilitySpec, build_dataset, read_dataset, write_dataset

log = logging.getLogger(__name__)

TIMING_SAMPLES = 200


@dataclass
class StudyConfig:
    case: Path
    commitments: list
    sigmas: list = field(default_factory=lambda: [0.01, 0.05, 0.10])
    train_sizes: list = field(default_factory=lambda: [50, 100, 200])
    sample_count: int = 500
    seed: int = 0
    hidden: list = field(default_factory=lambda: [500, 500, 500, 500])
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    output_dir: Path = Path("study_out")

    def __post_init__(self):
        self.case = Path(self.case)
        self.commitments = [Path(p) for p in self.commitments]
        self.output_dir = Path(self.output_dir)
        for name in ("commitments", "sigmas", "train_sizes"):
            if not getattr(self, name):
                raise ValidationError(f"study needs a nonempty {name} list")
        if max(self.train_sizes) >= self.sample_count:
            raise ValidationError("every training size must leave test samples")
        missing = [str(p) for p in [self.case, *self.commitments] if not p.exists()]
        if missing:
            raise ValidationError(f"missing input files: {missing}")

    @classmethod
    def load(cls, path, **overrides):
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        base = path.parent
        raw["case"] = base / raw["case"]
        raw["commitments"] = [base / p for p in raw["commitments"]]
        if "output_dir" in raw:
            raw["output_dir"] = base / raw["output_dir"]
        raw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ValidationError(f"{path}: {exc}") from None

    @property
    def config_names(self):
        return [p.stem for p in self.commitments]


def _tag(sigma):
    return f"s{sigma:g}"


def dataset_path(study, config, sigma):
    return study.output_dir / "datasets" / f"{config}_{_tag(sigma)}.ndjson"


def model_path(study, config, sigma, size):
    return study.output_dir / "models" / f"{config}_{_tag(sigma)}_n{size}.json"


def eval_path(study, config, sigma, size):
    return study.output_dir / "eval" / f"{config}_{_tag(sigma)}_n{size}.ndjson"


def _derived_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class _Setup:
    """Network, PTDF and residual case per configuration, built once."""

    def __init__(self, study):
        self.network = load_case(study.case)
        self.model = build_ptdf(self.network)
        self.cases = {name: reduce_commitment(self.network, load_commitment(path))
                      for name, path in zip(study.config_names, study.commitments)}


def gen_data(study, workers=None):
    setup = _Setup(study)
    written = []
    for ci, (name, case) in enumerate(setup.cases.items()):
        for si, sigma in enumerate(study.sigmas):
            spec = VolatilitySpec(sigma=sigma, seed=_derived_seed(study.seed, ci, si),
                                  sample_count=study.sample_count)
            ds = build_dataset(case, setup.model, spec, max(study.train_sizes),
                               workers=workers or 1)
            path = dataset_path(study, name, sigma)
            path.parent.mkdir(parents=True, exist_ok=True)
            write_dataset(path, ds)
            log.info("%s: %d samples, %d rejected draws", path, len(ds.samples), ds.rejected_draws)
            written.append(path)
    return written


def _load_dataset(study, name, sigma, case):
    path = dataset_path(study, name, sigma)
    if not path.exists():
        raise ValidationError(f"dataset {path} missing; run gen-data first")
    ds = read_dataset(path)
    ds.check_case(case)
    return ds


def train_models(study):
    setup = _Setup(study)
    written = []
    for ci, (name, case) in enumerate(setup.cases.items()):
        for si, sigma in enumerate(study.sigmas):
            ds = _load_dataset(study, name, sigma, case)
            for size in study.train_sizes:
                samples = [s.labeled() for s in ds.with_split(size).train()]
                seed = _derived_seed(study.seed, ci, si, size)
                net = classifier.init_mlp(case.n_bus, case.n_line, hidden=study.hidden, seed=seed)
                cfg = classifier.TrainConfig(learning_rate=study.learning_rate,
                                             epochs=study.epochs,
                                             batch_size=study.batch_size, seed=seed)
                net, history = classifier.train(net, samples, cfg)
                path = model_path(study, name, sigma, size)
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(classifier.model_to_json(net))
                path.with_suffix(".loss.json").write_text(json.dumps(history))
                written.append(path)
    return written


def _max_abs(a, b):
    return float(np.max(np.abs(a - b), initial=0.0))


def evaluate_sample(case, model, net, sample, base_mva):
    """Per-sample record: prediction, ITS mismatch against the stored exact
    solution (LMPs in $/MWh, dispatch in MW) and the coherence audit."""
    truth = sample.binding
    pred = classifier.predict_binding(net, sample.loads)
    count, _ = classifier.misidentification_count(pred, truth)
    rec = {"id": sample.id, "true": truth.to_dict(), "pred": pred.to_dict(),
           "misid": count, "n_binding": len(truth)}
    try:
        sol = its_clear(case, model, pred, loads=sample.loads)
    except MarketClearError as exc:
        rec.update(its_error=type(exc).__name__, lmp_mae=math.inf, dispatch_mae=math.inf,
                   coherence=None)
        return rec
    oracle = sample.solution
    rec.update(
        its_error=None,
        lmp_mae=_max_abs(sol.lmps, oracle.lmps) / base_mva,
        dispatch_mae=_max_abs(sol.dispatch, oracle.dispatch) * base_mva,
        coherence={k: v["passed"] for k, v in coherence_report(case, model, sol).to_dict().items()
                   if isinstance(v, dict)},
    )
    return rec


def _write_ndjson(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _read_ndjson(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def time_solvers(case, model, loads_list, repeats=1):
    """Median wall time of solve_opf and of its_clear given the exact binding set."""
    t_oracle, t_its = [], []
    for loads in loads_list:
        for _ in range(repeats):
            t0 = time.perf_counter()
            sol = solve_opf(case, model, loads=loads)
            t1 = time.perf_counter()
            its_clear(case, model, sol.binding, loads=loads)
            t2 = time.perf_counter()
            t_oracle.append(t1 - t0)
            t_its.append(t2 - t1)
    its_med, oracle_med = float(np.median(t_its)), float(np.median(t_oracle))
    return {"its_median_s": its_med, "oracle_median_s": oracle_med,
            "ratio": its_med / oracle_med, "samples": len(t_its)}


def evaluate(study):
    setup = _Setup(study)
    base = setup.network.base_mva
    timing = {}
    for name, case in setup.cases.items():
        pooled = []
        for sigma in study.sigmas:
            ds = _load_dataset(study, name, sigma, case)
            for size in study.train_sizes:
                path = model_path(study, name, sigma, size)
                if not path.exists():
                    raise ModelMissingError(f"model {path} missing; run train first")
                net = classifier.model_from_json(path.read_text())
                if net.n_input != case.n_bus or net.n_line != case.n_line:
                    raise DatasetMismatchError(f"{path} does not match case dimensions")
                split = ds.with_split(size)
                records = []
                for part, samples in (("train", split.train()), ("test", split.test())):
                    for s in samples:
                        rec = evaluate_sample(case, setup.model, net, s, base)
                        rec.update(split=part, config=name, sigma=sigma, train_size=size)
                        records.append(rec)
                _write_ndjson(eval_path(study, name, sigma, size), records)
            pooled.extend(s.loads for s in ds.test())
        step = max(1, len(pooled) // TIMING_SAMPLES)
        timing[name] = time_solvers(case, setup.model, pooled[::step][:TIMING_SAMPLES])
    ratios = [t["ratio"] for t in timing.values()]
    timing["overall"] = {"worst_ratio": max(ratios), "target": 0.1,
                         "passed": max(ratios) <= 0.1}
    (study.output_dir / "timing.json").write_text(json.dumps(timing, indent=1, sort_keys=True))
    report(study)
    return timing


# -- tables from per-sample records --------------------------------------------

def _cell(records):
    count = sum(r["misid"] for r in records)
    n_true = sum(r["n_binding"] for r in records)
    return classifier.format_cell(count, count / n_true if n_true else 0.0)


def _fractions(records):
    """Share of records passing each coherence condition; a failed ITS solve
    counts as failing all of them."""
    names = list(CONDITIONS)
    if any(r["coherence"] and "committed_cost_recovery" in r["coherence"] for r in records):
        names.append("committed_cost_recovery")
    return {n: sum(bool(r["coherence"] and r["coherence"].get(n)) for r in records) / len(records)
            for n in names}


def _fmt(x):
    return "inf" if math.isinf(x) else f"{x:.6e}"


def tables_from_records(records):
    """Rows of table1, cdf and table3 from evaluation records."""
    groups = {}
    for r in records:
        groups.setdefault((r["config"], r["sigma"], r["train_size"]), []).append(r)
    table1, cdf = [], []
    for (config, sigma, size), recs in sorted(groups.items()):
        train = [r for r in recs if r["split"] == "train"]
        test = [r for r in recs if r["split"] == "test"]
        table1.append([config, sigma, size, _cell(train), _cell(test)])
        for metric in ("lmp_mae", "dispatch_mae"):
            vals = sorted(r[metric] for r in test)
            n = len(vals)
            for i, v in enumerate(vals, 1):
                cdf.append([config, sigma, size, metric, _fmt(v), f"{i / n:.6f}"])
    # coherence over the test samples of the largest training size
    largest = {}
    for (config, sigma, size) in groups:
        largest[(config, sigma)] = max(size, largest.get((config, sigma), size))
    table3, pooled = [], {}
    for (config, sigma), size in sorted(largest.items()):
        test = [r for r in groups[(config, sigma, size)] if r["split"] == "test"]
        pooled.setdefault(sigma, []).extend(test)
        for cond, frac in _fractions(test).items():
            table3.append([config, sigma, cond, format_fraction(frac)])
    for sigma, test in sorted(pooled.items()):
        for cond, frac in _fractions(test).items():
            table3.append(["all", sigma, cond, format_fraction(frac)])
    return table1, cdf, table3


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def report(study):
    """Rebuild the summary tables from the per-sample evaluation files."""
    records = []
    for name in study.config_names:
        for sigma in study.sigmas:
            for size in study.train_sizes:
                path = eval_path(study, name, sigma, size)
                if not path.exists():
                    raise ValidationError(f"evaluation file {path} missing; run eval first")
                records.extend(_read_ndjson(path))
    table1, cdf, table3 = tables_from_records(records)
    out = study.output_dir
    _write_csv(out / "table1.csv", ["config", "sigma", "train_size", "train", "test"], table1)
    _write_csv(out / "cdf.csv", ["config", "sigma", "train_size", "metric", "value", "fraction"],
               cdf)
    _write_csv(out / "table3.csv", ["config", "sigma", "condition", "fraction"], table3)
    return table1, cdf, table3


def default_workers():
    return os.cpu_count() or 1


def with_output(study, out):
    return study if out is None else replace(study, output_dir=Path(out))
