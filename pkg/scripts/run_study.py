"""Run the full IEEE-118 study end to end and print the summary tables.

    python scripts/run_study.py [--out DIR] [--workers N]

Same as running the gen-data, train and eval subcommands in turn on
data/ieee118/study.json. With the default 500x4 classifiers this takes
about five minutes on one core.
"""
import argparse
import json
import time
from pathlib import Path

from marketclear import study as st

STUDY = Path(__file__).resolve().parents[1] / "data" / "ieee118" / "study.json"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--study", default=STUDY)
    ap.add_argument("--out", default="study_out")
    ap.add_argument("--workers", type=int, default=st.default_workers())
    args = ap.parse_args()
    study = st.StudyConfig.load(args.study, output_dir=Path(args.out))
    for stage, run in (("datasets", lambda: st.gen_data(study, workers=args.workers)),
                       ("training", lambda: st.train_models(study)),
                       ("evaluation", lambda: st.evaluate(study))):
        t0 = time.perf_counter()
        run()
        print(f"{stage}: {time.perf_counter() - t0:.1f} s")
    for name in ("table1.csv", "table3.csv"):
        print(f"\n{name}\n" + (study.output_dir / name).read_text())
    print(json.dumps(json.loads((study.output_dir / "timing.json").read_text())["overall"]))


if __name__ == "__main__":
    main()
