"""Coupled logistic-map benchmark systems with known causal structure.

Two topologies are provided: a four-variable chain (delays 1, 5, 2 along the
chain) and a three-variable fork (two parents driving one child at delays 1
and 3).  Dynamics iterate noiselessly; measurement noise is added to the
recorded observations afterwards.  Every run is reproducible from its seed:
initial conditions and per-variable noise come from separately spawned
streams of a PCG64 generator, so noise draws do not depend on evaluation
order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, TimeSeries
from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

_GUARD_LO = -0.5
_GUARD_HI = 1.5
_MAX_ATTEMPTS = 100

CHAIN_DELAYS = {("Y1", "Y2"): 1, ("Y2", "Y3"): 5, ("Y3", "Y4"): 2}
FORK_DELAYS = {("Y1", "Y3"): 1, ("Y2", "Y3"): 3}


@dataclass(frozen=True)
class SystemSpec:
    """Parameters of one synthetic run.

    ``literal_coupling`` switches the third map's self-feedback term to
    reference variable 2 instead of itself (an alternate printed form of the
    recursion that adds an undeclared lag-1 edge; kept for comparison only).
    """

    topology: str
    alphas: tuple[float, ...]
    lambdas: tuple[float, ...]
    noise_std: float
    length: int
    burn_in: int = 500
    seed: int = 0
    literal_coupling: bool = False

    def __post_init__(self) -> None:
        if self.topology not in ("chain", "fork"):
            raise DataError(f"unknown topology {self.topology!r}")
        n_vars = 4 if self.topology == "chain" else 3
        n_links = 3 if self.topology == "chain" else 2
        if len(self.alphas) != n_vars:
            raise DataError(f"{self.topology} needs {n_vars} alpha values")
        if len(self.lambdas) != n_links:
            raise DataError(f"{self.topology} needs {n_links} coupling values")
        if self.length < 1 or self.burn_in < 0 or self.noise_std < 0:
            raise DataError("length >= 1, burn_in >= 0 and noise_std >= 0 required")
        vals = list(self.alphas) + list(self.lambdas) + [self.noise_std]
        if not all(np.isfinite(v) for v in vals):
            raise DataError("all system parameters must be finite")

    def to_dict(self) -> dict:
        return {
            "topology": self.topology,
            "alphas": list(self.alphas),
            "lambdas": list(self.lambdas),
            "noise_std": self.noise_std,
            "length": self.length,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "literal_coupling": self.literal_coupling,
        }


def chain_spec(
    noise_std: float = 0.01,
    length: int = 2000,
    seed: int = 0,
    alphas: tuple[float, ...] = (3.6, 3.6, 3.6, 3.6),
    lambdas: tuple[float, ...] = (0.5, 0.5, 0.5),
    burn_in: int = 500,
    literal_coupling: bool = False,
) -> SystemSpec:
    return SystemSpec(
        "chain", tuple(alphas), tuple(lambdas), noise_std, length, burn_in, seed,
        literal_coupling,
    )


def fork_spec(
    noise_std: float = 0.001,
    length: int = 2000,
    seed: int = 0,
    alphas: tuple[float, ...] = (4.0, 4.0, 2.2),
    lambdas: tuple[float, ...] = (0.6, 0.7),
    burn_in: int = 500,
    literal_coupling: bool = False,
) -> SystemSpec:
    return SystemSpec(
        "fork", tuple(alphas), tuple(lambdas), noise_std, length, burn_in, seed,
        literal_coupling,
    )


@dataclass(frozen=True)
class GroundTruth:
    """Directed causal edges with their integer delays."""

    edges: dict[tuple[str, str], int]
    spec: SystemSpec
    attempts: int

    def to_dict(self) -> dict:
        return {
            "edges": [
                {"cause": c, "effect": e, "delay": d}
                for (c, e), d in sorted(self.edges.items())
            ],
            "spec": self.spec.to_dict(),
            "attempts": self.attempts,
        }


def _iterate_chain(spec: SystemSpec, init: np.ndarray, total: int) -> np.ndarray | None:
    a1, a2, a3, a4 = spec.alphas
    l12, l23, l34 = spec.lambdas
    y = np.empty((4, total))
    max_lag = 5
    y[:, :max_lag] = init
    for t in range(max_lag, total):
        y[0, t] = y[0, t - 1] * (a1 - a1 * y[0, t - 1])
        y[1, t] = y[1, t - 1] * (a2 - a2 * y[1, t - 1] - l12 * y[0, t - 1])
        self3 = y[1, t - 1] if spec.literal_coupling else y[2, t - 1]
        y[2, t] = y[2, t - 1] * (a3 - a3 * self3 - l23 * y[1, t - 5])
        y[3, t] = y[3, t - 1] * (a4 - a4 * y[3, t - 1] - l34 * y[2, t - 2])
        if not np.all((y[:, t] >= _GUARD_LO) & (y[:, t] <= _GUARD_HI)):
            return None
    return y


def _iterate_fork(spec: SystemSpec, init: np.ndarray, total: int) -> np.ndarray | None:
    a1, a2, a3 = spec.alphas
    l13, l23 = spec.lambdas
    y = np.empty((3, total))
    max_lag = 3
    y[:, :max_lag] = init
    for t in range(max_lag, total):
        y[0, t] = y[0, t - 1] * (a1 - a1 * y[0, t - 1])
        y[1, t] = y[1, t - 1] * (a2 - a2 * y[1, t - 1])
        self3 = y[1, t - 1] if spec.literal_coupling else y[2, t - 1]
        y[2, t] = y[2, t - 1] * (
            a3 - a3 * self3 - l13 * y[0, t - 1] - l23 * y[1, t - 3]
        )
        if not np.all((y[:, t] >= _GUARD_LO) & (y[:, t] <= _GUARD_HI)):
            return None
    return y


def generate(spec: SystemSpec, kpi: str | None = None) -> tuple[Dataset, GroundTruth]:
    """Simulate the system, discard the burn-in, add measurement noise.

    A trajectory escaping [-0.5, 1.5] is regenerated from a perturbed seed;
    after 100 failed attempts generation aborts.
    """
    n_vars = 4 if spec.topology == "chain" else 3
    max_lag = 5 if spec.topology == "chain" else 3
    iterate = _iterate_chain if spec.topology == "chain" else _iterate_fork
    total = spec.burn_in + spec.length + max_lag
    trajectory = None
    attempts = 0
    for attempt in range(_MAX_ATTEMPTS):
        attempts = attempt + 1
        seq = np.random.SeedSequence(entropy=spec.seed, spawn_key=(attempt,))
        init_seq, *noise_seqs = seq.spawn(1 + n_vars)
        init = np.random.Generator(np.random.PCG64(init_seq)).uniform(
            0.1, 0.9, size=(n_vars, max_lag)
        )
        trajectory = iterate(spec, init, total)
        if trajectory is not None:
            break
        logger.warning(
            "trajectory escaped [%.1f, %.1f] on attempt %d; retrying",
            _GUARD_LO,
            _GUARD_HI,
            attempts,
        )
    if trajectory is None:
        raise NumericalError(
            f"{spec.topology} system diverged in {_MAX_ATTEMPTS} attempts"
        )
    observed = trajectory[:, total - spec.length :].copy()
    for i, noise_seq in enumerate(noise_seqs):
        if spec.noise_std > 0:
            rng = np.random.Generator(np.random.PCG64(noise_seq))
            observed[i] += rng.normal(0.0, spec.noise_std, spec.length)

    names = [f"Y{i + 1}" for i in range(n_vars)]
    kpi_name = kpi if kpi is not None else names[-1]
    series = [TimeSeries(name, observed[i]) for i, name in enumerate(names)]
    dataset = Dataset(series, kpi_name)

    declared = CHAIN_DELAYS if spec.topology == "chain" else FORK_DELAYS
    edges = {}
    for link_idx, (pair, delay) in enumerate(sorted(declared.items())):
        if spec.lambdas[link_idx] != 0.0:
            edges[pair] = delay
    truth = GroundTruth(edges, spec, attempts)
    return dataset, truth


def gen_chain(spec: SystemSpec, kpi: str | None = None) -> tuple[Dataset, GroundTruth]:
    if spec.topology != "chain":
        raise DataError("gen_chain requires a chain topology spec")
    return generate(spec, kpi)


def gen_fork(spec: SystemSpec, kpi: str | None = None) -> tuple[Dataset, GroundTruth]:
    if spec.topology != "fork":
        raise DataError("gen_fork requires a fork topology spec")
    return generate(spec, kpi)
