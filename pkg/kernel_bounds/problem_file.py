"""
JSON problem files:

    {
        "kernel": {"family": "squared-exponential", "lengthscale": 1.0},
        "inputs": [[0.5], [2.0]],
        "measurements": [[1.0], [1.0]],
        "y": [0.1, -0.3],
        "noise": {"pointwise": [0.2, 0.2]},
        "gamma_f": 1.0
    }

"noise" is one of {"pointwise": [...]}, {"energy": {"matrix": ..., "gamma": ...}} or
{"general": [[matrix, gamma], ...]}, plus the compact "blocks" form written for block-sparse
constraints. "measurements" may be omitted for scalar kernels.
"""

import json

import numpy as np

from .gp_core import Problem
from .kernels import kernel_from_dict
from .noise_model import noise_from_dict

REQUIRED_KEYS = ("kernel", "inputs", "y", "noise", "gamma_f")


def problem_from_dict(config):
    missing = [key for key in REQUIRED_KEYS if key not in config]
    if missing:
        raise ValueError("Problem file lacks required keys: {}.".format(", ".join(missing)))
    kernel = kernel_from_dict(config["kernel"])
    y = np.asarray(config["y"], dtype=float).reshape(-1)
    if "measurements" in config:
        measurements = np.asarray(config["measurements"], dtype=float).reshape(-1, kernel.output_dim)
    elif kernel.output_dim == 1:
        measurements = np.ones((y.shape[0], 1))
    else:
        raise ValueError("Multi-output kernels need explicit 'measurements'.")
    inputs = np.asarray(config["inputs"], dtype=float)
    if inputs.size == 0:
        inputs = inputs.reshape(0, config["kernel"].get("input_dim") or 1)
    return Problem(inputs=inputs, measurements=measurements, y=y, kernel=kernel,
                   noise=noise_from_dict(config["noise"], n=y.shape[0]), gamma_f=float(config["gamma_f"]))


def problem_to_dict(problem):
    return dict(kernel=problem.kernel.to_dict(), inputs=problem.inputs.tolist(),
                measurements=problem.measurements.tolist(), y=problem.y.tolist(), noise=problem.noise.to_dict(),
                gamma_f=problem.gamma_f)


def load_problem(path):
    with open(path, "r") as f:
        return problem_from_dict(json.load(f))


def dump_problem(problem, path):
    with open(path, "w") as f:
        json.dump(problem_to_dict(problem), f, indent=2)
