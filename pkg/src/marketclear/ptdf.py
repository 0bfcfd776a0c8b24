"""Incidence matrix, weighted Laplacian, its pseudoinverse and the PTDF matrix.

Orientation: line ``k`` from bus ``i`` to bus ``j`` carries
``F_k = b_k (theta_i - theta_j)``, positive in the from->to direction.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ImbalanceWarning, SingularityError

PINV_RTOL = 1e-10
BALANCE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PtdfModel:
    incidence: np.ndarray  # (n_bus, n_line)
    susceptance: np.ndarray  # (n_line,)
    laplacian: np.ndarray  # (n_bus, n_bus)
    laplacian_pinv: np.ndarray  # (n_bus, n_bus)
    ptdf: np.ndarray  # (n_line, n_bus)

    @property
    def n_bus(self):
        return self.ptdf.shape[1]

    @property
    def n_line(self):
        return self.ptdf.shape[0]


def incidence_matrix(case):
    A = np.zeros((case.n_bus, case.n_line))
    for k, ln in enumerate(case.lines):
        A[ln.from_bus, k] = 1.0
        A[ln.to_bus, k] = -1.0
    return A


def laplacian_pinv(B):
    """Pseudoinverse of a connected-graph Laplacian.

    Eigenvalues below ``PINV_RTOL`` times the largest one are zeroed; exactly
    one such zero mode is allowed.
    """
    w, V = np.linalg.eigh(B)
    scale = max(abs(w).max(), 1.0) if w.size else 1.0
    zero = np.abs(w) <= PINV_RTOL * scale
    if zero.sum() != 1:
        raise SingularityError(f"Laplacian has {int(zero.sum())} zero eigenvalues, expected 1")
    inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, w))
    return (V * inv) @ V.T


def build_ptdf(case):
    net = getattr(case, "network", case)
    A = incidence_matrix(net)
    b = net.susceptance
    B = (A * b) @ A.T
    Bp = laplacian_pinv(B)
    Phi = (b[:, None] * A.T) @ Bp
    return PtdfModel(incidence=A, susceptance=b, laplacian=B, laplacian_pinv=Bp, ptdf=Phi)


def _check_injection(model, inj):
    inj = np.asarray(inj, dtype=float)
    if inj.shape[-1] != model.n_bus:
        raise DimensionError(f"injection has {inj.shape[-1]} entries, expected {model.n_bus}")
    imbalance = np.abs(inj.sum(axis=-1))
    if np.any(imbalance > BALANCE_TOL):
        warnings.warn(f"injection imbalance {float(np.max(imbalance)):.3g}", ImbalanceWarning,
                      stacklevel=3)
    return inj


def flows(model, inj):
    """Line flows ``Phi @ P`` for net bus injections ``P`` (also batched)."""
    inj = _check_injection(model, inj)
    return inj @ model.ptdf.T


def recover_angles(model, inj, slack_bus=0):
    """Bus angles with the slack angle pinned at zero."""
    inj = _check_injection(model, inj)
    theta = inj @ model.laplacian_pinv
    return theta - theta[..., slack_bus, None]


def angle_flows(model, theta):
    return model.susceptance * (np.asarray(theta) @ model.incidence)


def write_ptdf_csv(model, case, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["line"] + [b.id for b in case.buses])
        for ln, row in zip(case.lines, model.ptdf):
            writer.writerow([ln.id] + [repr(float(v)) for v in row])
