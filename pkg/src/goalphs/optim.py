"""Optimizer state machines: SGD, port-Hamiltonian momentum and goal-oriented braking.

Parameter and momentum vectors are plain 1-D ``float64`` numpy arrays
(the ``dim`` of a vector is its length).  The momentum update is the explicit
scheme

    theta_{k+1} = theta_k + alpha / m * p_k
    p_{k+1}     = p_k - alpha * gamma / m * p_k - alpha * grad L(theta_k)

whose continuous counterpart is the damped Hamiltonian system
``theta' = p / m``, ``p' = -gamma / m * p - grad L(theta)`` with energy
``H = |p|^2 / (2 m) + L(theta)``.  For ``gamma / m`` large the motion is
viscous and behaves like gradient descent with step ``alpha / gamma``.
"""
import copy
import dataclasses
import enum
import hashlib
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError, NumericInputError

__all__ = [
    "param_vector", "PhsState", "PhsConfig", "Mode", "Monitor", "GoalPolicy",
    "EnergyRecord", "StepBudget", "RunRecord", "sgd_step", "phs_step",
    "hamiltonian", "goal_trigger", "apply_braking", "run_optimizer",
    "spectral_radius", "is_stable", "check_stability",
]


def param_vector(values, name="vector"):
    """Return ``values`` as a fresh finite 1-D float64 array."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ContractError(f"{name} must have positive dimension")
    if not np.isfinite(arr).all():
        raise NumericInputError(f"{name} contains non-finite entries")
    return arr


def _same_dim(a, b, what):
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch in {what}: {a.shape[0]} vs {b.shape[0]}")


@dataclass
class PhsState:
    """Optimizer state ``x = (theta, p)`` plus the number of steps taken."""

    theta: np.ndarray
    momentum: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.theta = param_vector(self.theta, "theta")
        if self.momentum is None:
            self.momentum = np.zeros_like(self.theta)
        else:
            self.momentum = param_vector(self.momentum, "momentum")
        _same_dim(self.theta, self.momentum, "PhsState")
        if self.step < 0:
            raise ContractError("step must be non-negative")

    @property
    def dim(self):
        return self.theta.shape[0]

    @classmethod
    def _trusted(cls, theta, momentum, step):
        # skips validation; callers guarantee finite 1-D arrays of equal length
        obj = object.__new__(cls)
        obj.theta, obj.momentum, obj.step = theta, momentum, step
        return obj


@dataclass(frozen=True)
class PhsConfig:
    alpha: float
    mass: float = 1.0
    friction: float = 0.0

    def __post_init__(self):
        bad = []
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            bad.append("alpha")
        if not (math.isfinite(self.mass) and self.mass > 0):
            bad.append("mass")
        if not (math.isfinite(self.friction) and self.friction >= 0):
            bad.append("friction")
        if bad:
            raise ConfigError(f"invalid PhsConfig fields: {', '.join(bad)}", bad)


class Mode(str, enum.Enum):
    REDUCTION = "reduction"
    ABSOLUTE_FRACTION = "absolute_fraction"


@dataclass(frozen=True)
class Monitor:
    """Which loss signal the braking trigger watches.

    ``kind`` is ``"minibatch"`` (raw batch loss), ``"ema"`` (exponential
    moving average with ``decay``) or ``"full_eval"`` (loss on the fixed
    evaluation batch, refreshed every ``every`` steps).
    """

    kind: str = "ema"
    decay: float = 0.9
    every: int = 1

    def __post_init__(self):
        if self.kind not in ("minibatch", "ema", "full_eval"):
            raise ConfigError(f"unknown monitor kind {self.kind!r}", ["monitor"])
        if not 0 < self.decay < 1:
            raise ConfigError("EMA decay must lie in (0, 1)", ["ema_decay"])
        if self.every < 1:
            raise ConfigError("full_eval cadence must be >= 1", ["eval_every"])

    @classmethod
    def minibatch(cls):
        return cls("minibatch")

    @classmethod
    def ema(cls, decay=0.9):
        return cls("ema", decay=decay)

    @classmethod
    def full_eval(cls, every):
        return cls("full_eval", every=every)


@dataclass
class GoalPolicy:
    """Braking trigger: multiply friction by ``factor`` once the loss goal is met.

    The ``latched`` flag is monotone; once set it can never be cleared.
    """

    target: float
    factor: float
    mode: Mode = Mode.REDUCTION
    monitor: Monitor = field(default_factory=Monitor)
    latched: bool = False

    def __post_init__(self):
        self.mode = Mode(self.mode)
        bad = []
        if not 0 < self.target < 1:
            bad.append("target")
        if not (math.isfinite(self.factor) and self.factor > 1):
            bad.append("factor")
        if bad:
            raise ConfigError(f"invalid GoalPolicy fields: {', '.join(bad)}", bad)

    def __setattr__(self, name, value):
        if name == "latched" and getattr(self, "latched", False) and not value:
            raise ContractError("a fired braking latch cannot be reset")
        super().__setattr__(name, value)

    def threshold(self, initial_loss):
        if not initial_loss > 0:
            raise ConfigError(
                f"initial loss must be positive to define a goal, got {initial_loss}",
                ["initial_loss"])
        if self.mode is Mode.REDUCTION:
            return (1.0 - self.target) * initial_loss
        return self.target * initial_loss


@dataclass(frozen=True)
class EnergyRecord:
    kinetic: float
    potential: float
    total: float
    step: int


@dataclass(frozen=True)
class StepBudget:
    """Run length, either in optimizer steps or in data epochs."""

    steps: Optional[int] = None
    epochs: Optional[int] = None

    def __post_init__(self):
        if (self.steps is None) == (self.epochs is None):
            raise ConfigError("give exactly one of steps or epochs", ["budget"])
        if (self.epochs if self.steps is None else self.steps) < 1:
            raise ConfigError("budget must be positive", ["budget"])


def sgd_step(theta, grad, alpha):
    """One plain gradient-descent step ``theta - alpha * grad``."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    _same_dim(theta, grad, "sgd_step")
    if not np.isfinite(grad).all():
        raise NumericInputError("gradient contains non-finite entries")
    if not alpha > 0:
        raise ConfigError("alpha must be positive", ["alpha"])
    return theta - alpha * grad


def phs_step(state, grad, config):
    """Advance the momentum dynamics by one explicit step.

    Both updates read the old momentum ``p_k``; ``grad`` must be the loss
    gradient at ``state.theta``.
    """
    grad = np.asarray(grad, dtype=np.float64)
    _same_dim(state.theta, grad, "phs_step")
    if not np.isfinite(grad).all():
        raise NumericInputError("gradient contains non-finite entries")
    a, m, g = config.alpha, config.mass, config.friction
    p = state.momentum
    theta_next = state.theta + (a / m) * p
    p_next = p - (a * g / m) * p - a * grad
    if not (np.isfinite(theta_next).all() and np.isfinite(p_next).all()):
        raise NumericInputError("phs_step produced non-finite state")
    return PhsState._trusted(theta_next, p_next, state.step + 1)


def hamiltonian(state, loss_value, mass):
    """Energy of ``state`` given ``loss_value = L(state.theta)``."""
    if not math.isfinite(loss_value):
        raise NumericInputError(f"loss value {loss_value} is not finite")
    if not mass > 0:
        raise ConfigError("mass must be positive", ["mass"])
    p = state.momentum
    kinetic = float(p @ p) / (2.0 * mass)
    potential = float(loss_value)
    return EnergyRecord(kinetic, potential, kinetic + potential, state.step)


def goal_trigger(monitored_loss, initial_loss, policy):
    """True exactly once: the first time the monitored loss meets the goal."""
    threshold = policy.threshold(initial_loss)
    if policy.latched:
        return False
    if monitored_loss <= threshold:
        policy.latched = True
        return True
    return False


def apply_braking(config, policy):
    if not policy.latched:
        raise ContractError("apply_braking called before the goal trigger fired")
    return dataclasses.replace(config, friction=config.friction * policy.factor)


# -- stability of the explicit scheme on a quadratic with curvature lam ------

def _iteration_matrix(config, curvature, method="phs"):
    a, m, g = config.alpha, config.mass, config.friction
    if method == "sgd":
        return np.array([[1.0 - a * curvature]])
    return np.array([[1.0, a / m], [-a * curvature, 1.0 - a * g / m]])


def spectral_radius(config, curvature, method="phs"):
    """Spectral radius of the linear step map on ``L = curvature * x**2 / 2``."""
    return float(max(abs(np.linalg.eigvals(_iteration_matrix(config, curvature, method)))))


def is_stable(config, curvature, method="phs"):
    """Closed-form (Jury) test for the explicit scheme on a quadratic.

    For PHS with ``c = alpha * gamma / m`` and ``d = alpha**2 * curvature / m``
    the map is asymptotically stable iff ``d < c``, ``c - d < 2`` and
    ``2 c - d < 4``.  For SGD it is ``alpha * curvature < 2``.
    """
    if method == "sgd":
        return 0 < config.alpha * curvature < 2
    c = config.alpha * config.friction / config.mass
    d = config.alpha ** 2 * curvature / config.mass
    return d > 0 and d < c and c - d < 2 and 2 * c - d < 4


def check_stability(config, curvature_max, method="phs"):
    """Warn (do not raise) if the step map is unstable at ``curvature_max``."""
    ok = is_stable(config, curvature_max, method)
    if not ok:
        warnings.warn(
            f"{method} config {config} is outside the explicit-Euler stability "
            f"region for curvature {curvature_max}", RuntimeWarning, stacklevel=2)
    return ok


# -- run loop ----------------------------------------------------------------

@dataclass
class RunRecord:
    """History of one optimizer run.

    Row ``k`` of the per-step lists describes the iterate ``theta_k`` before
    its update: the loss and gradient used, the EMA of losses, the energy and
    the friction applied by the step.  ``eval_steps``/``test_accuracy`` hold
    evaluations made after the update of the listed step.
    """

    method: str
    seed: int
    initial_loss: float
    losses: list = field(default_factory=list)
    ema_losses: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    frictions: list = field(default_factory=list)
    eval_steps: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)
    trigger_step: Optional[int] = None
    final_state: Optional[PhsState] = None
    diverged: bool = False
    diagnostic: str = ""
    config: dict = field(default_factory=dict)
    duration: float = 0.0

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else float("nan")

    @property
    def final_accuracy(self):
        return self.test_accuracy[-1] if self.test_accuracy else None

    @property
    def best_accuracy(self):
        return max(self.test_accuracy) if self.test_accuracy else None

    def digest(self):
        if self.final_state is None:
            return ""
        h = hashlib.sha256(self.final_state.theta.tobytes())
        h.update(self.final_state.momentum.tobytes())
        return h.hexdigest()

    def to_dict(self):
        """JSON-ready dictionary. Wall-clock ``duration`` is left out on purpose."""
        return {
            "method": self.method,
            "seed": self.seed,
            "config": self.config,
            "initial_loss": self.initial_loss,
            "losses": list(self.losses),
            "ema_losses": list(self.ema_losses),
            "energies": [[e.step, e.kinetic, e.potential, e.total] for e in self.energies],
            "frictions": list(self.frictions),
            "eval_steps": list(self.eval_steps),
            "test_accuracy": list(self.test_accuracy),
            "trigger_step": self.trigger_step,
            "diverged": self.diverged,
            "diagnostic": self.diagnostic,
            "final_theta": None if self.final_state is None else self.final_state.theta.tolist(),
            "final_momentum": None if self.final_state is None else self.final_state.momentum.tolist(),
            "final_step": None if self.final_state is None else self.final_state.step,
            "digest": self.digest(),
        }

    @classmethod
    def from_dict(cls, d):
        state = None
        if d.get("final_theta") is not None:
            state = PhsState(np.array(d["final_theta"]), np.array(d["final_momentum"]),
                             d["final_step"])
        return cls(
            method=d["method"], seed=d["seed"], initial_loss=d["initial_loss"],
            losses=list(d["losses"]), ema_losses=list(d["ema_losses"]),
            energies=[EnergyRecord(kin, pot, tot, int(s)) for s, kin, pot, tot in d["energies"]],
            frictions=list(d["frictions"]), eval_steps=list(d["eval_steps"]),
            test_accuracy=list(d["test_accuracy"]), trigger_step=d["trigger_step"],
            final_state=state, diverged=d["diverged"], diagnostic=d["diagnostic"],
            config=d.get("config", {}),
        )


def _batch_stream(objective, schedule, batch_plan, rng):
    """Yield ``(batch, end_of_epoch)`` pairs for the whole run."""
    from .data import BatchPlan, minibatches

    n = getattr(objective, "n_samples", None)
    if n:
        plan = batch_plan or BatchPlan(seed=int(rng.integers(2**31)))
        plan = dataclasses.replace(plan, batch_size=min(plan.batch_size, n))
        produced, epoch = 0, 0
        while True:
            batches = minibatches(n, plan, epoch)
            for i, idx in enumerate(batches):
                if schedule.steps is not None and produced >= schedule.steps:
                    return
                produced += 1
                yield idx, i == len(batches) - 1
            epoch += 1
            if schedule.epochs is not None and epoch >= schedule.epochs:
                return
    else:
        if schedule.steps is None:
            raise ConfigError("objectives without data need a step budget", ["budget"])
        # stochastic objectives draw their noise from one per-run generator
        noise = rng.spawn(1)[0] if getattr(objective, "stochastic", False) else None
        for _ in range(schedule.steps):
            yield noise, False


def run_optimizer(objective, init, config, policy=None, schedule=StepBudget(steps=1000),
                  rng_seed=0, *, method="phs", batch_plan=None,
                  evaluate: Optional[Callable] = None, eval_every=None,
                  baseline_size=2048, divergence_factor=10.0, divergence_patience=3):
    """Run SGD (``method="sgd"``) or PHS, optionally with goal-oriented braking.

    The baseline loss for the goal is measured once before training on a
    fixed evaluation batch (``baseline_size`` training samples, or the
    deterministic full objective for analytic landscapes).  The run stops
    with :class:`DivergenceError` (carrying the partial record) if the loss
    turns non-finite, or if the EMA loss exceeds ``divergence_factor`` times
    the baseline for ``divergence_patience`` consecutive evaluations.

    ``evaluate(theta) -> float`` is called at the end of every epoch, or every
    ``eval_every`` steps when given.  Objectives without data have no epochs;
    there ``eval_every`` defaults to 100 steps.
    """
    if method not in ("sgd", "phs"):
        raise ConfigError(f"unknown method {method!r}", ["method"])
    if not isinstance(init, PhsState):
        init = PhsState(init)
    if init.dim != objective.dim:
        raise ContractError(f"init dimension {init.dim} != objective dimension {objective.dim}")
    policy = copy.deepcopy(policy)
    if method == "sgd" and policy is not None:
        raise ConfigError("SGD does not take a braking policy", ["policy"])

    rng = np.random.default_rng(rng_seed)
    n = getattr(objective, "n_samples", None)
    if not n and eval_every is None:
        eval_every = 100
    if n:
        size = min(baseline_size, n)
        eval_batch = np.sort(np.random.default_rng([rng_seed, 7919]).choice(n, size, replace=False))
    else:
        eval_batch = None
    initial_loss = float(objective.loss(init.theta, eval_batch))
    if policy is not None:
        policy.threshold(initial_loss)  # raises for non-positive baselines

    record = RunRecord(method=method, seed=rng_seed, initial_loss=initial_loss)
    state = init
    if method == "sgd":
        state = PhsState(init.theta, np.zeros_like(init.theta), init.step)
    decay = _ema_decay(policy)
    ema = None
    monitored = None
    strikes = 0
    start = time.perf_counter()

    def abort(message):
        record.diverged = True
        record.diagnostic = message
        record.final_state = state
        record.duration = time.perf_counter() - start
        raise DivergenceError(message, record)

    with np.errstate(over="ignore", invalid="ignore"):
        for k, (batch, end_of_epoch) in enumerate(_batch_stream(objective, schedule, batch_plan, rng)):
            loss, grad = objective.loss_grad(state.theta, batch)
            loss = float(loss)
            if not math.isfinite(loss) or not np.isfinite(grad).all():
                abort(f"non-finite loss or gradient at step {k}")
            ema = loss if ema is None else decay * ema + (1 - decay) * loss

            if policy is not None and not policy.latched:
                mon = policy.monitor
                if mon.kind == "minibatch":
                    monitored = loss
                elif mon.kind == "ema":
                    monitored = ema
                elif k % mon.every == 0:
                    monitored = float(objective.loss(state.theta, eval_batch))
                if monitored is not None and goal_trigger(monitored, initial_loss, policy):
                    config = apply_braking(config, policy)
                    record.trigger_step = k

            record.losses.append(loss)
            record.ema_losses.append(ema)
            record.energies.append(hamiltonian(state, loss, config.mass))
            record.frictions.append(0.0 if method == "sgd" else config.friction)

            try:
                if method == "sgd":
                    theta = sgd_step(state.theta, grad, config.alpha)
                    if not np.isfinite(theta).all():
                        raise NumericInputError("sgd_step produced non-finite parameters")
                    state = PhsState._trusted(theta, state.momentum, state.step + 1)
                else:
                    state = phs_step(state, grad, config)
            except NumericInputError as exc:
                abort(f"{exc} at step {k}")

            due = (k + 1) % eval_every == 0 if eval_every else end_of_epoch
            if due:
                if evaluate is not None:
                    record.eval_steps.append(k)
                    record.test_accuracy.append(float(evaluate(state.theta)))
                strikes = strikes + 1 if ema > divergence_factor * abs(initial_loss) else 0
                if strikes >= divergence_patience:
                    abort(f"EMA loss above {divergence_factor}x baseline for "
                          f"{divergence_patience} consecutive evaluations (step {k})")

    record.final_state = state
    record.duration = time.perf_counter() - start
    return record


def _ema_decay(policy):
    # the logged EMA column uses the policy's decay when it monitors an EMA
    if policy is not None and policy.monitor.kind == "ema":
        return policy.monitor.decay
    return 0.9
