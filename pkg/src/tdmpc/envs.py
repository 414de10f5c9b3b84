"""Built-in desk-scale continuous-control tasks: pendulum swing-up, cart-pole
swing-up and balance, and a damped point mass with dense and sparse goal
rewards.

Shared conventions: fixed-length episodes with no early termination, action
repeat 2 over an inner physics step of 0.01 s, actions in [-1, 1]^act_dim,
per-effective-step rewards in [0, 1] (each inner repeat contributes up to
1/action_repeat). Trajectories are fully determined by (seed, actions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# inner 0.01 s split into substeps; semi-implicit Euler drifts ~1e-2 relative
# energy per 100 steps at h=0.01, ~5e-4 at h=2e-4
PHYSICS_DT = 0.01
SUBSTEPS = 50

EPISODE_LENGTH = 1000
ACTION_REPEAT = 2


class MetricMismatchError(RuntimeError):
    """Success queried on a task scored by return (or vice versa)."""


@dataclass(frozen=True)
class TaskSpec:
    name: str
    obs_dim: int
    act_dim: int
    episode_length: int = EPISODE_LENGTH
    action_repeat: int = ACTION_REPEAT
    metric: str = "return"          # "return" | "success"
    discount: float = 0.0           # filled from the heuristic below

    def __post_init__(self):
        if self.episode_length % self.action_repeat != 0:
            raise ValueError("episode_length must be divisible by action_repeat")
        if self.metric not in ("return", "success"):
            raise ValueError(f"unknown metric {self.metric!r}")

    @property
    def effective_length(self):
        return self.episode_length // self.action_repeat


def discount_heuristic(effective_length):
    """clip((T/5 - 1) / (T/5), 0.95, 0.995); 0.99 at T=500."""
    if effective_length < 1:
        raise ValueError("episode length must be positive")
    x = effective_length / 5.0
    return float(np.clip((x - 1.0) / x, 0.95, 0.995))


def _make_spec(name, obs_dim, act_dim, metric):
    T = EPISODE_LENGTH // ACTION_REPEAT
    return TaskSpec(name, obs_dim, act_dim, metric=metric,
                    discount=discount_heuristic(T))


class ControlEnv:
    """Base loop: action validation, repeat/substep integration, step counting."""

    def __init__(self, spec, seed=0):
        self._spec = spec
        self._rng = np.random.default_rng(seed)
        self._steps = 0
        self._state = None

    def spec(self):
        return self._spec

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._steps = 0
        self._state = self._init_state(self._rng)
        return self._observe()

    def step(self, action):
        if self._state is None:
            raise RuntimeError("call reset() before step()")
        if self._steps >= self._spec.effective_length:
            raise RuntimeError("episode complete; call reset()")
        a = np.asarray(action, np.float64).reshape(-1)
        if a.shape[0] != self._spec.act_dim:
            raise ValueError(f"action dim {a.shape[0]} != {self._spec.act_dim}")
        if not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1.0 + 1e-6):
            raise ValueError(f"action out of [-1, 1]: {a}")
        a = np.clip(a, -1.0, 1.0)
        reward = 0.0
        h = PHYSICS_DT / SUBSTEPS
        for _ in range(self._spec.action_repeat):
            for _ in range(SUBSTEPS):
                self._integrate(a, h)
            reward += self._reward() / self._spec.action_repeat
        self._steps += 1
        done = self._steps >= self._spec.effective_length
        return self._observe(), float(reward), done

    def is_success(self, episode):
        if self._spec.metric != "success":
            raise MetricMismatchError(
                f"{self._spec.name} is scored by return, not success")
        return self._success_at(np.asarray(episode.obs[-1], np.float64))

    # subclass hooks
    def _init_state(self, rng):
        raise NotImplementedError

    def _integrate(self, action, h):
        raise NotImplementedError

    def _reward(self):
        raise NotImplementedError

    def _observe(self):
        raise NotImplementedError

    def _success_at(self, final_obs):
        raise MetricMismatchError(f"{self._spec.name} has no success predicate")


class PendulumSwingup(ControlEnv):
    """Rigid rod pendulum, angle measured from upright (theta=0 is up).

    theta_dd = 15 sin(theta) + 3 * torque with torque = 2a; swing-up requires
    pumping since max torque is well below the gravity torque at horizontal.
    """

    GRAVITY_TERM = 15.0   # 3g / (2l) with g=10, l=1
    TORQUE_TERM = 3.0     # 3 / (m l^2)
    TORQUE_GAIN = 2.0
    MAX_SPEED = 8.0

    def __init__(self, seed=0):
        super().__init__(_make_spec("pendulum-swingup", 3, 1, "return"), seed)

    def _init_state(self, rng):
        theta = math.pi + rng.uniform(-0.1, 0.1)
        return np.array([theta, rng.uniform(-0.05, 0.05)])

    def _integrate(self, action, h):
        theta, omega = self._state
        torque = self.TORQUE_GAIN * action[0]
        omega += h * (self.GRAVITY_TERM * math.sin(theta) + self.TORQUE_TERM * torque)
        omega = min(max(omega, -self.MAX_SPEED), self.MAX_SPEED)
        theta += h * omega
        self._state[0], self._state[1] = theta, omega

    def energy(self):
        """Rod energy: omega^2/6 + 5 cos(theta); conserved under zero torque."""
        theta, omega = self._state
        return omega * omega / 6.0 + 5.0 * math.cos(theta)

    def _reward(self):
        return (1.0 + math.cos(self._state[0])) / 2.0

    def _observe(self):
        theta, omega = self._state
        return np.array([math.cos(theta), math.sin(theta), omega], np.float32)


class Cartpole(ControlEnv):
    """Pole on a force-driven cart; theta=0 upright. Hitting a track end stops
    the cart. Reward is uprightness scaled by distance from the track center."""

    CART_MASS = 1.0
    POLE_MASS = 0.1
    HALF_LEN = 0.5
    FORCE_GAIN = 10.0
    GRAVITY = 10.0
    TRACK = 2.4
    MAX_SPIN = 20.0

    def __init__(self, name, balance, seed=0):
        super().__init__(_make_spec(name, 5, 1, "return"), seed)
        self._balance = balance

    def _init_state(self, rng):
        x = rng.uniform(-0.05, 0.05)
        if self._balance:
            theta = rng.uniform(-0.05, 0.05)
        else:
            theta = math.pi + rng.uniform(-0.1, 0.1)
        return np.array([x, rng.uniform(-0.05, 0.05), theta, rng.uniform(-0.05, 0.05)])

    def _integrate(self, action, h):
        x, xdot, theta, omega = self._state
        force = self.FORCE_GAIN * action[0]
        total = self.CART_MASS + self.POLE_MASS
        ml = self.POLE_MASS * self.HALF_LEN
        sin, cos = math.sin(theta), math.cos(theta)
        tmp = (force + ml * omega * omega * sin) / total
        theta_dd = (self.GRAVITY * sin - cos * tmp) / (
            self.HALF_LEN * (4.0 / 3.0 - self.POLE_MASS * cos * cos / total))
        x_dd = tmp - ml * theta_dd * cos / total
        omega += h * theta_dd
        omega = min(max(omega, -self.MAX_SPIN), self.MAX_SPIN)
        xdot += h * x_dd
        theta += h * omega
        x += h * xdot
        if x < -self.TRACK:
            x, xdot = -self.TRACK, 0.0
        elif x > self.TRACK:
            x, xdot = self.TRACK, 0.0
        self._state[:] = (x, xdot, theta, omega)

    def _reward(self):
        x, _, theta, _ = self._state
        upright = (1.0 + math.cos(theta)) / 2.0
        centered = max(0.0, 1.0 - (x / self.TRACK) ** 2)
        return upright * centered

    def _observe(self):
        x, xdot, theta, omega = self._state
        return np.array([x, math.cos(theta), math.sin(theta), xdot, omega], np.float32)


class PointmassReach(ControlEnv):
    """Damped point mass in the [-1, 1]^2 arena; goal is a disc at the origin.

    vdot = 10 a - 5 v. Dense variant pays exp(-3 * distance); sparse pays 1
    inside the goal disc and 0 elsewhere. Success = inside the disc on the
    final step. Starts are rejected until at least 0.35 from the goal.
    """

    GAIN = 10.0
    DAMPING = 4.0
    GOAL_RADIUS = 0.25
    MIN_START = 0.35

    def __init__(self, name, sparse, seed=0):
        super().__init__(_make_spec(name, 4, 2, "success"), seed)
        self._sparse = sparse

    def _init_state(self, rng):
        while True:
            p = rng.uniform(-0.9, 0.9, size=2)
            if np.hypot(p[0], p[1]) >= self.MIN_START:
                return np.array([p[0], p[1], 0.0, 0.0])

    def _integrate(self, action, h):
        s = self._state
        s[2:] += h * (self.GAIN * action - self.DAMPING * s[2:])
        s[:2] += h * s[2:]
        for i in range(2):
            if s[i] < -1.0:
                s[i], s[2 + i] = -1.0, 0.0
            elif s[i] > 1.0:
                s[i], s[2 + i] = 1.0, 0.0

    def _distance(self):
        return math.hypot(self._state[0], self._state[1])

    def _reward(self):
        d = self._distance()
        if self._sparse:
            return 1.0 if d <= self.GOAL_RADIUS else 0.0
        return math.exp(-3.0 * d)

    def _observe(self):
        return self._state.astype(np.float32)

    def _success_at(self, final_obs):
        return bool(math.hypot(final_obs[0], final_obs[1]) <= self.GOAL_RADIUS)


_REGISTRY = {
    "pendulum-swingup": lambda seed: PendulumSwingup(seed),
    "cartpole-swingup": lambda seed: Cartpole("cartpole-swingup", balance=False, seed=seed),
    "cartpole-balance": lambda seed: Cartpole("cartpole-balance", balance=True, seed=seed),
    "pointmass-reach": lambda seed: PointmassReach("pointmass-reach", sparse=False, seed=seed),
    "pointmass-reach-sparse": lambda seed: PointmassReach("pointmass-reach-sparse", sparse=True, seed=seed),
}


def task_names():
    return sorted(_REGISTRY)


def make_env(name, seed=0):
    if name not in _REGISTRY:
        raise ValueError(f"unknown task {name!r}; available: {', '.join(task_names())}")
    return _REGISTRY[name](seed)
