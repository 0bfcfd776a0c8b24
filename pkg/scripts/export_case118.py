"""Export the IEEE 118-bus case from PYPOWER into the MATPOWER subset format.

Usage: python scripts/export_case118.py data/ieee118/case118.m
Needs ``pypower`` importable (``pip install pypower``); the exported file is
committed so the package itself does not depend on it.
"""
import sys

import numpy as np
from pypower.case118 import case118


def fmt_table(name, rows, ncol):
    out = [f"mpc.{name} = ["]
    for r in rows:
        out.append("\t" + "\t".join(f"{v:.10g}" for v in r[:ncol]) + ";")
    out.append("];")
    return "\n".join(out)


def main(path):
    c = case118()
    parts = [
        "function mpc = case118",
        "% IEEE 118-bus test case (PYPOWER case118), DC-relevant columns only.",
        "% bus: BUS_I BUS_TYPE PD QD GS BS BUS_AREA VM VA BASE_KV ZONE VMAX VMIN",
        "% gen: GEN_BUS PG QG QMAX QMIN VG MBASE GEN_STATUS PMAX PMIN",
        "% branch: F_BUS T_BUS BR_R BR_X BR_B RATE_A RATE_B RATE_C TAP SHIFT BR_STATUS ANGMIN ANGMAX",
        "mpc.version = '2';",
        f"mpc.baseMVA = {c['baseMVA']:g};",
        fmt_table("bus", c["bus"], 13),
        fmt_table("gen", c["gen"], 10),
        fmt_table("branch", c["branch"], 13),
        fmt_table("gencost", np.asarray(c["gencost"]), 7),
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
