"""DC market clearing by identifying binding lines, then solving linear equations."""
from .case_model import Commitment, NetworkCase, load_case, load_commitment, reduce_commitment
from .its import its_clear
from .opf_oracle import extract_binding_set, solve_opf
from .ptdf import build_ptdf
from .solution import BindingSet, ClearingSolution

__all__ = [
    "BindingSet", "ClearingSolution", "Commitment", "NetworkCase", "build_ptdf",
    "extract_binding_set", "its_clear", "load_case", "load_commitment", "reduce_commitment",
    "solve_opf",
]
