"""Simulation and rigorous tail bounds for perpetuities ``R = MR + Q`` with ``|M| <= 1``."""
from .dist import (Discrete, PerpetuityModel, PiecewiseCdf, Uniform, atom, dist_from_json,
                   model_from_json, p_delta, sample, validate_model)
from .errors import *  # noqa: F401,F403
from .simulate import (PathDecomposition, SimConfig, TailCurve, decompose_path, estimate_tail,
                       sample_dominating_series, sample_perpetuity, simulate_tail)

__version__ = "0.1.0"
