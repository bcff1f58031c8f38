"""Federated optimisation strategies: local step rules, server rules and their state.

Supported kinds (``AlgoKind.name``):

``fedavg``       plain local SGD, server averages the pseudo-gradients
``fedavgm``      server-side heavy-ball momentum on the pseudo-gradient
``fedprox``      proximal term ``mu * (theta - theta_global)`` on the client
``fedcm``        generalized heavy-ball with a one-round window (tau = 1)
``ghbm``         generalized heavy-ball, momentum from the last ``tau`` rounds
``ghbm_theory``  convex-combination variant with an auxiliary model sequence
``localghbm``    clients derive the momentum from their own stored global model
``fedhbm``       like ``localghbm`` but anchored on the client's last local model
``scaffold``     control variates, client controls by the "option II" rule

The client momentum used by ``fedcm``/``ghbm`` is the round-constant
``(theta^{t-1} - theta^{t-tau-1}) / (tau * J)`` added (times ``beta``) at every
local step, so over ``J`` steps a client re-applies ``beta`` times the average
per-round displacement of the global model.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, List, Optional, Sequence

import numpy as np

from . import params
from .errors import ConfigError, EmptyAggregateError
from .params import ParamVector

KINDS = (
    "fedavg",
    "fedavgm",
    "fedprox",
    "fedcm",
    "scaffold",
    "ghbm",
    "ghbm_theory",
    "localghbm",
    "fedhbm",
)

# Multiplier on FedAvg's per-round traffic (one model down, one model up).
COMM_OVERHEAD = {
    "fedavg": 1.0,
    "fedavgm": 1.0,
    "fedprox": 1.0,
    "localghbm": 1.0,
    "fedhbm": 1.0,
    "fedcm": 1.5,
    "ghbm": 1.5,
    "ghbm_theory": 1.5,
    "scaffold": 2.0,
}

STATEFUL = frozenset({"localghbm", "fedhbm", "scaffold"})


@dataclass(frozen=True)
class AlgoKind:
    name: str = "fedavg"
    beta: float = 0.0
    tau: int = 1
    mu: float = 0.0
    server_lr: float = 1.0
    client_lr: float = 0.01
    local_steps: int = 1
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.name not in KINDS:
            raise ConfigError(f"unknown algorithm {self.name!r}; expected one of {KINDS}")
        if self.name == "fedcm":
            object.__setattr__(self, "tau", 1)
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if int(self.tau) != self.tau or self.tau < 1:
            raise ConfigError(f"tau must be a positive integer, got {self.tau}")
        object.__setattr__(self, "tau", int(self.tau))
        if self.server_lr <= 0 or self.client_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if int(self.local_steps) != self.local_steps or self.local_steps < 1:
            raise ConfigError("local_steps must be a positive integer")
        object.__setattr__(self, "local_steps", int(self.local_steps))
        if self.mu < 0 or self.weight_decay < 0:
            raise ConfigError("mu and weight_decay must be non-negative")

    @property
    def stateful(self) -> bool:
        return self.name in STATEFUL

    @property
    def comm_overhead(self) -> float:
        return COMM_OVERHEAD[self.name]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "beta": self.beta,
            "tau": self.tau,
            "mu": self.mu,
            "server_lr": self.server_lr,
            "client_lr": self.client_lr,
            "local_steps": self.local_steps,
            "weight_decay": self.weight_decay,
        }


@dataclass
class ServerState:
    theta: ParamVector
    momentum: Optional[ParamVector] = None
    # last tau+1 global models, oldest first (ghbm / fedcm)
    model_history: Optional[Deque[ParamVector]] = None
    # last tau+1 auxiliary models, oldest first (ghbm_theory)
    bar_history: Optional[Deque[ParamVector]] = None
    server_control: Optional[ParamVector] = None


@dataclass
class ClientState:
    stored_model: Optional[ParamVector] = None
    stored_round: Optional[int] = None
    client_control: Optional[ParamVector] = None


@dataclass
class Broadcast:
    """What the server sends to every participant of a round, besides theta."""

    momentum: Optional[ParamVector] = None
    server_control: Optional[ParamVector] = None


def init_server(kind: AlgoKind, theta0: ParamVector) -> ServerState:
    theta0 = np.array(theta0, dtype=np.float64, copy=True)
    state = ServerState(theta=theta0)
    if kind.name in ("fedavgm", "ghbm_theory"):
        state.momentum = np.zeros_like(theta0)
    if kind.name in ("fedcm", "ghbm"):
        state.model_history = deque([theta0.copy()], maxlen=kind.tau + 1)
    if kind.name == "ghbm_theory":
        state.bar_history = deque([theta0.copy()], maxlen=kind.tau + 1)
    if kind.name == "scaffold":
        state.server_control = np.zeros_like(theta0)
    return state


def init_client(kind: AlgoKind, dim: int) -> ClientState:
    if kind.name == "scaffold":
        return ClientState(client_control=np.zeros(dim))
    return ClientState()


# Momentum primitives --------------------------------------------------------


def hbm_moving_average(m_prev: ParamVector, g: ParamVector, beta: float) -> ParamVector:
    """Classical momentum buffer update ``beta * m_prev + g``."""
    return params.axpy(beta, m_prev, g)


def ghbm_momentum(history: Sequence[ParamVector], tau: int, J: int, t: int) -> ParamVector:
    """``(theta^{t-1} - theta^{t-s-1}) / (s * J)`` with ``s = min(tau, t - 1)``.

    ``history`` holds consecutive global models, oldest first, ending with
    ``theta^{t-1}``. During warm-up the window shrinks to what is available;
    at ``t == 1`` the momentum is zero.
    """
    if len(history) == 0:
        raise EmptyAggregateError("model history is empty")
    latest = history[-1]
    s = min(tau, t - 1)
    if s <= 0:
        return params.zeros(latest.shape[0])
    if len(history) < s + 1:
        raise ValueError(f"history holds {len(history)} models, need {s + 1} for round {t}")
    return params.scale(1.0 / (s * J), params.sub(latest, history[-1 - s]))


def broadcast(kind: AlgoKind, state: ServerState, t: int) -> Broadcast:
    if kind.name in ("fedcm", "ghbm"):
        return Broadcast(momentum=ghbm_momentum(state.model_history, kind.tau, kind.local_steps, t))
    if kind.name == "ghbm_theory":
        return Broadcast(momentum=state.momentum.copy())
    if kind.name == "scaffold":
        return Broadcast(server_control=state.server_control.copy())
    return Broadcast()


# Client side ------------------------------------------------------------------


def client_round(
    kind: AlgoKind,
    theta_global: ParamVector,
    corrections: Broadcast,
    task,
    data,
    batches: Sequence[np.ndarray],
    client_state: Optional[ClientState] = None,
    t: int = 1,
) -> ParamVector:
    """Run ``len(batches)`` local steps from ``theta_global``; return the final model.

    ``batches`` are row indices into ``data`` (the client's local dataset).
    Nothing passed in is modified.
    """
    name = kind.name
    lr, beta = kind.client_lr, kind.beta
    J = len(batches)
    wd = kind.weight_decay
    theta = theta_global.copy()

    m = None
    anchor = None
    if name in ("fedcm", "ghbm"):
        m = corrections.momentum
    elif name == "localghbm":
        if client_state is not None and client_state.stored_model is not None:
            tau_i = t - client_state.stored_round
            m = (theta_global - client_state.stored_model) / (tau_i * J)
        else:
            m = np.zeros_like(theta)
    elif name == "fedhbm":
        if client_state is not None and client_state.stored_model is not None:
            tau_i = t - client_state.stored_round
            anchor = client_state.stored_model
            hb_coef = beta / (tau_i * J)
    elif name == "scaffold":
        correction = corrections.server_control - client_state.client_control
    elif name == "ghbm_theory":
        m = corrections.momentum

    # overflow surfaces as NonFiniteError below
    with np.errstate(over="ignore", invalid="ignore"):
        for batch in batches:
            g = task.grad(theta, data, batch)
            if wd:
                g = g + wd * theta
            if name in ("fedavg", "fedavgm"):
                theta = theta - lr * g
            elif name == "fedprox":
                theta = theta - lr * (g + kind.mu * (theta - theta_global))
            elif name in ("fedcm", "ghbm", "localghbm"):
                theta = theta - lr * g + beta * m
            elif name == "fedhbm":
                step = theta - lr * g
                if anchor is not None:
                    step = step + hb_coef * (theta - anchor)
                theta = step
            elif name == "scaffold":
                theta = theta - lr * (g + correction)
            elif name == "ghbm_theory":
                theta = theta - lr * (beta * g + (1.0 - beta) * m)
    return params.check_finite(theta)


def scaffold_client_control_update(c_i, c, theta_global, theta_local_final, J, lr):
    """Option II: ``c_i - c + (theta_global - theta_local_final) / (J * lr)``."""
    return c_i - c + (theta_global - theta_local_final) / (J * lr)


def fedhbm_store(state: ClientState, theta_local_final: ParamVector, t: int) -> ClientState:
    if t < 1:
        raise ValueError("round index must be >= 1")
    return replace(state, stored_model=theta_local_final.copy(), stored_round=t)


def localghbm_store(state: ClientState, theta_global_received: ParamVector, t: int) -> ClientState:
    if t < 1:
        raise ValueError("round index must be >= 1")
    return replace(state, stored_model=theta_global_received.copy(), stored_round=t)


def client_state_after(
    kind: AlgoKind,
    state: ClientState,
    theta_global: ParamVector,
    theta_final: ParamVector,
    corrections: Broadcast,
    t: int,
) -> ClientState:
    """Persistent client state to write back once the round is over."""
    if kind.name == "localghbm":
        return localghbm_store(state, theta_global, t)
    if kind.name == "fedhbm":
        return fedhbm_store(state, theta_final, t)
    if kind.name == "scaffold":
        c_new = scaffold_client_control_update(
            state.client_control,
            corrections.server_control,
            theta_global,
            theta_final,
            kind.local_steps,
            kind.client_lr,
        )
        return replace(state, client_control=c_new)
    return state


# Server side ------------------------------------------------------------------


def pseudo_gradient(theta_prev: ParamVector, finals: Sequence[ParamVector]) -> ParamVector:
    """Mean over participants of ``theta^{t-1} - theta_i^{t,J}``."""
    return params.mean([params.sub(theta_prev, th) for th in finals])


def server_update(
    kind: AlgoKind,
    state: ServerState,
    finals: List[ParamVector],
    K: int,
    control_deltas: Optional[List[ParamVector]] = None,
) -> ServerState:
    """Aggregate the participants' final models into the next server state.

    ``finals`` must be ordered by ascending client id. The model step
    ``theta - eta * g`` is evaluated as ``(1 - eta) * theta + eta * avg``, the
    same value written so that a unit server step reproduces the client model
    bit for bit.
    """
    if len(finals) == 0:
        raise EmptyAggregateError("no client results to aggregate")
    eta = kind.server_lr
    theta_prev = state.theta
    avg = params.mean(finals)
    new = ServerState(
        theta=theta_prev,
        momentum=state.momentum,
        model_history=state.model_history,
        bar_history=state.bar_history,
        server_control=state.server_control,
    )
    name = kind.name

    if name == "fedavgm":
        g = params.sub(theta_prev, avg)
        new.momentum = hbm_moving_average(state.momentum, g, kind.beta)
        # theta - eta * (beta * m_prev + g)
        new.theta = (1.0 - eta) * theta_prev + eta * avg - eta * (kind.beta * state.momentum)
    elif name == "ghbm_theory":
        J, lr, beta = kind.local_steps, kind.client_lr, kind.beta
        u = params.sub(theta_prev, avg) / (lr * J)
        # cumulative auxiliary sequence: differences are sums of past u - (1-beta) m
        bar_t = state.bar_history[-1] - u + (1.0 - beta) * state.momentum
        hist = deque(state.bar_history, maxlen=kind.tau + 1)
        hist.append(bar_t)
        bar_old = hist[0]
        new.momentum = (1.0 - beta) * state.momentum + (bar_old - bar_t) / kind.tau
        new.theta = theta_prev - eta * new.momentum
        new.bar_history = hist
    else:
        new.theta = (1.0 - eta) * theta_prev + eta * avg

    if name in ("fedcm", "ghbm"):
        hist = deque(state.model_history, maxlen=kind.tau + 1)
        hist.append(new.theta)
        new.model_history = hist
    if name == "scaffold":
        if control_deltas is None or len(control_deltas) != len(finals):
            raise ValueError("scaffold needs one control delta per participant")
        new.server_control = state.server_control + (len(finals) / K) * params.mean(control_deltas)

    new.theta = params.check_finite(new.theta)
    return new
