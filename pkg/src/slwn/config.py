"""JSON configuration: domain, grid layout, fluid parameters, boundaries."""

from __future__ import annotations

import json

from .hiergrid import Forest, forest_from_config
from .solver import BoundarySpec, FluidParams, Simulation

DEFAULT_CONFIG = {
    "domain": {"lo": [0.0, 0.0, 0.0], "hi": [1.0, 1.0, 0.1]},
    "grid": {
        "cells": [10, 10, 1],
        "level0_subdiv": [1, 1, 1],
        "subdiv": [[2, 2, 1]],
        "max_depth": 3,
        "initial_refine": 3,
    },
    "fluid": {
        "rho": 1.0,
        "nu": 0.01,
        "dt": 1e-3,
        "cfl": 0.9,
        "poisson_tol": 1e-6,
        "poisson_max_iter": 2000,
        "adaptive_dt": True,
    },
    "boundaries": {
        "x-": {"kind": "no_slip"},
        "x+": {"kind": "no_slip"},
        "y-": {"kind": "no_slip"},
        "y+": {"kind": "moving_wall", "velocity": [1.0, 0.0, 0.0]},
    },
    "default_budget": 400,
}


def load_config(path: str | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    with open(path, encoding="utf-8") as f:
        cfg = json.load(f)
    if "domain" not in cfg:
        raise ValueError("config is missing the 'domain' section")
    return cfg


def build_simulation(cfg: dict, metrics_path: str | None = None) -> Simulation:
    forest: Forest = forest_from_config(cfg)
    params = FluidParams.from_config(cfg.get("fluid", {}))
    bounds = cfg.get("boundaries")
    bc = BoundarySpec.from_config(bounds) if bounds else BoundarySpec.cavity()
    metrics = metrics_path or cfg.get("metrics_csv")
    return Simulation(forest, params, bc, metrics_path=metrics)


def default_budget(cfg: dict) -> int:
    """Budget clients should start with when the operator set none."""
    return int(cfg.get("default_budget", 400))
