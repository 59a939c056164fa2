"""Derivative-free maximisation of the θ objective with Powell's direction-set method."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, minimize

from utils.errors import ConfigError, OptimizationError
from utils.validation import DEFAULT_THETA_BOUNDS, THETA_NAMES

logger = logging.getLogger(__name__)


@dataclass
class PowellTrace:
    """Best θ and objective Ω after every Powell cycle; entry 0 is the start point."""

    thetas: list = field(default_factory=list)
    omegas: list = field(default_factory=list)
    n_evaluations: int = 0

    def record(self, theta, omega):
        self.thetas.append(tuple(float(v) for v in theta))
        self.omegas.append(float(omega))

    @property
    def n_iterations(self):
        return max(len(self.omegas) - 1, 0)

    def to_csv(self, path, names=THETA_NAMES):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", *names[:len(self.thetas[0]) if self.thetas else 0], "omega"])
            for k, (theta, omega) in enumerate(zip(self.thetas, self.omegas)):
                writer.writerow([k, *(repr(v) for v in theta), repr(omega)])

    def summary(self):
        if not self.omegas:
            return "no Powell iterations recorded"
        return (
            f"Ω {self.omegas[0]:g} -> {self.omegas[-1]:g} after {self.n_iterations} cycle(s), "
            f"{self.n_evaluations} evaluations"
        )


class _CachedObjective:
    """−Ω at box-clamped θ, cached per point; remembers the best strictly improving point."""

    def __init__(self, objective, lower, upper):
        self.objective = objective
        self.lower = lower
        self.upper = upper
        self.cache = {}
        self.best_theta = None
        self.best_omega = -math.inf

    def omega(self, theta):
        theta = np.clip(np.asarray(theta, dtype=np.float64), self.lower, self.upper)
        key = tuple(theta.tolist())
        if key not in self.cache:
            value = float(self.objective(theta.copy()))
            if not math.isfinite(value):
                raise OptimizationError(f"Objective is not finite ({value}) at θ={key}", theta=key)
            self.cache[key] = value
            if value > self.best_omega:
                self.best_omega, self.best_theta = value, theta
        return self.cache[key]

    def __call__(self, theta):
        return -self.omega(theta)


def powell_search(objective, theta0, bounds=DEFAULT_THETA_BOUNDS, max_iters=20, ftol=1e-4, xtol=1e-4,
                  max_evaluations=None):
    """Maximise ``objective(θ)`` inside the box ``bounds``.

    Args:
        objective: callable θ (ndarray) -> Ω (float)
        theta0: start point, clamped into the box
        bounds: sequence of (low, high) per component
        max_iters: maximum number of direction-set cycles
        ftol: relative Ω improvement below which a cycle ends the search

    Returns:
        tuple: (θ* as ndarray, PowellTrace)
    """
    bounds = tuple(tuple(float(v) for v in b) for b in bounds)
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (len(bounds),):
        raise ConfigError(f"θ₀ has {theta0.size} components, bounds describe {len(bounds)}")
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])
    start = np.clip(theta0, lower, upper)

    wrapped = _CachedObjective(objective, lower, upper)
    trace = PowellTrace()
    trace.record(start, wrapped.omega(start))

    def on_cycle(xk):
        wrapped.omega(xk)
        trace.record(wrapped.best_theta, wrapped.best_omega)
        logger.info("Powell cycle %d: Ω=%g", trace.n_iterations, wrapped.best_omega)

    options = {"maxiter": int(max_iters), "ftol": float(ftol), "xtol": float(xtol)}
    if max_evaluations is not None:
        options["maxfev"] = int(max_evaluations)
    result = minimize(wrapped, start, method="Powell", bounds=Bounds(lower, upper), callback=on_cycle,
                      options=options)
    trace.n_evaluations = len(wrapped.cache)
    if wrapped.best_omega > trace.omegas[-1]:
        trace.record(wrapped.best_theta, wrapped.best_omega)
    logger.info("Powell search finished (%s): %s", result.message, trace.summary())
    # only a strictly better point replaces the start
    return np.array(wrapped.best_theta), trace
