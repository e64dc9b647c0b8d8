from .tensor import Tensor
from .graph import Graph, Node, roi_bins
from .gradcheck import DEFAULT_SEEDS, GradcheckCase, Problem, check_case, run_gradcheck, standard_cases

__all__ = [
    "Tensor",
    "Graph",
    "Node",
    "roi_bins",
    "DEFAULT_SEEDS",
    "GradcheckCase",
    "Problem",
    "check_case",
    "run_gradcheck",
    "standard_cases",
]
