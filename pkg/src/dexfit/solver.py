"""Adam minimisation of the fitting energy, per frame and over sequences."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .energy import EnergyError, EnergyReport, FrameObservation, SceneModels, ScenePose, e_total


@dataclass(frozen=True)
class SolveConfig:
    learning_rate: float = 0.01
    iterations: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be a positive integer")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SolveConfig":
        known = {"learning_rate", "iterations", "beta1", "beta2", "eps"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown solver config keys: {sorted(extra)}")
        vals = {k: (int(v) if k == "iterations" else float(v)) for k, v in d.items()}
        return cls(**vals)

    @classmethod
    def load(cls, path) -> "SolveConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, cfg: SolveConfig = SolveConfig()) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


def adam_step(state: AdamState, params, grad) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and a new state."""
    x = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if x.shape != g.shape or x.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {x.shape}, grad {g.shape}, state {state.m.shape}")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    x_new = x - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return x_new, AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.eps)


class SolveError(RuntimeError):
    def __init__(self, frame: int, cause: Exception):
        super().__init__(f"frame {frame}: {cause}")
        self.frame = frame
        self.cause = cause


@dataclass
class FrameTrace:
    init: ScenePose
    reports: list = field(default_factory=list)   # energy before each step, then the final one

    @property
    def initial(self) -> EnergyReport:
        return self.reports[0]

    @property
    def final(self) -> EnergyReport:
        return self.reports[-1]

    def to_json(self) -> dict:
        return {"init": self.init.to_json(), "energy": [r.to_json() for r in self.reports]}


def _canonical(P: ScenePose) -> ScenePose:
    return ScenePose([h.copy() for h in P.hands], [o.canonical() for o in P.objects])


def solve_frame(obs: FrameObservation, init: ScenePose, models: SceneModels,
                config: SolveConfig = SolveConfig(), frame: int = 0) -> tuple[ScenePose, FrameTrace]:
    """Exactly ``config.iterations`` Adam steps from ``init``."""
    P = init.copy()
    x = P.flat()
    state = AdamState.zeros(x.size, config)
    trace = FrameTrace(init.copy())
    try:
        for _ in range(config.iterations):
            report, grad = e_total(P, obs, models)
            trace.reports.append(report)
            x, state = adam_step(state, x, grad.flat())
            P = _canonical(P.unflat(x))
            x = P.flat()
        trace.reports.append(e_total(P, obs, models)[0])
    except (EnergyError, ValueError) as exc:
        raise SolveError(frame, exc) from exc
    return P, trace


def solve_sequence(frames, first_init: ScenePose, models: SceneModels,
                   config: SolveConfig = SolveConfig(),
                   callback=None) -> tuple[list, list]:
    """Warm-started solves: frame t starts from the solution of frame t-1."""
    if len(frames) == 0:
        raise ValueError("solve_sequence needs at least one frame")
    poses, traces = [], []
    init: Optional[ScenePose] = first_init
    for t, obs in enumerate(frames):
        P, trace = solve_frame(obs, init, models, config, frame=t)
        poses.append(P)
        traces.append(trace)
        if callback is not None:
            callback(t, P, trace)
        init = P
    return poses, traces
