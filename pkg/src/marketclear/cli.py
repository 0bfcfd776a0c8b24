"""Command-line entry point.

Exit codes: 0 success, 2 bad input, 3 numerical failure. Errors are printed
to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import study as st
from .case_model import Commitment, load_case, load_commitment, reduce_commitment
from .coherence import coherence_report
from .errors import MarketClearError, ParseError, ValidationError
from .opf_oracle import extract_binding_set, solve_opf
from .ptdf import build_ptdf, write_ptdf_csv


def _read_loads(path, case):
    """Gross bus loads in MW, as a JSON list in bus order or ``{bus id: MW}``."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.msg) from None
    if isinstance(raw, dict):
        gross = case.gross_loads.copy()
        for bus_id, mw in raw.items():
            idx = case.network.bus_index.get(int(bus_id))
            if idx is None:
                raise ValidationError(f"load file names unknown bus {bus_id}")
            gross[idx] = float(mw) / case.network.base_mva
    else:
        gross = np.asarray(raw, dtype=float) / case.network.base_mva
        if gross.shape != (case.n_bus,):
            raise ValidationError(f"load file has {gross.size} entries for {case.n_bus} buses")
    return case.residual_loads(gross)


def cmd_solve(args):
    network = load_case(args.case)
    commitment = load_commitment(args.commitment) if args.commitment else Commitment.all_free(network)
    case = reduce_commitment(network, commitment)
    model = build_ptdf(network)
    if args.ptdf_csv:
        write_ptdf_csv(model, network, args.ptdf_csv)
    loads = _read_loads(args.loads, case) if args.loads else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sol = solve_opf(case, model, loads=loads)
        bset = extract_binding_set(sol, flow_limits=case.flow_limits)
    out = {
        "base_mva": network.base_mva,
        "units": "p.u. and $/p.u.h",
        "generators": [g.id for g in case.generators],
        "solution": sol.to_dict(),
        "kkt": sol.kkt.to_dict(),
        "coherence": coherence_report(case, model, sol).to_dict(),
        "binding": {"upper": [network.lines[k].id for k in sorted(bset.upper)],
                    "lower": [network.lines[k].id for k in sorted(bset.lower)]},
        "warnings": [str(w.message) for w in caught],
    }
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def _study(args):
    return st.StudyConfig.load(args.study, seed=args.seed,
                               output_dir=Path(args.out) if args.out else None)


def cmd_gen_data(args):
    for path in st.gen_data(_study(args), workers=args.workers):
        print(path)


def cmd_train(args):
    for path in st.train_models(_study(args)):
        print(path)


def cmd_eval(args):
    timing = st.evaluate(_study(args))
    for name, t in timing.items():
        if name != "overall":
            print(f"{name}: its {t['its_median_s'] * 1e3:.3f} ms, "
                  f"oracle {t['oracle_median_s'] * 1e3:.3f} ms, ratio {t['ratio']:.3f}")


def cmd_report(args):
    study = _study(args)
    st.report(study)
    print(study.output_dir / "table1.csv")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the study seed")
    common.add_argument("--workers", type=int, default=st.default_workers(),
                        help="processes for scenario labelling")
    common.add_argument("--out", default=None, help="output file (solve) or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="marketclear", parents=[common],
                                     description="DC market clearing with learned binding sets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="exact clearing of one case")
    p.add_argument("--case", required=True)
    p.add_argument("--commitment", help="commitment JSON; default all generators free")
    p.add_argument("--loads", help="gross bus loads in MW (JSON list or {bus: MW})")
    p.add_argument("--ptdf-csv", help="also write the PTDF matrix here")
    p.set_defaults(func=cmd_solve)

    for name, func, text in (("gen-data", cmd_gen_data, "label perturbed-load datasets"),
                             ("train", cmd_train, "train one classifier per training size"),
                             ("eval", cmd_eval, "evaluate ITS against the exact solutions"),
                             ("report", cmd_report, "rebuild tables from evaluation records")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("study", help="study JSON")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MarketClearError as exc:
        print(json.dumps(exc.payload()), file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(json.dumps({"error": "FileNotFound", "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
