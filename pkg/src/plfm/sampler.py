"""Stochastic generation: discretisation schedules, Langevin scaling and Euler-Maruyama.

Each modality m in {x, z} is integrated on its own clock t_m[n] = f_m(n/N):

    m <- m + [v_m + beta_m(t_m) * score_m] dt_m + sqrt(2 beta_m(t_m) eta_m dt_m) * eps

with the score recovered from the velocity as (t v - m_t) / (1 - t).
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import features as F
from .errors import IndexOutOfRange, InvalidConfig, LengthOutOfRange, TimeAtOne, TimeAtZero
from .flow import velocity
from .vae import decode, structure_from_decoding

SCHEDULES = ("exponential", "quadratic", "uniform")
SCALINGS = ("inv_t", "tan")
MAX_LENGTH = 512


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 400
    schedule_x: str = "exponential"
    schedule_z: str = "quadratic"
    langevin_x: str = "inv_t"
    langevin_z: str = "tan"
    eta_x: float = 0.1
    eta_z: float = 0.1
    langevin: bool = True  # False disables the score term and the noise together
    t_ode: float = 0.98  # above this time a modality takes plain ODE steps
    seed: int = 0

    def validate(self):
        if self.n_steps < 1:
            raise InvalidConfig("n_steps must be >= 1")
        for name in ("schedule_x", "schedule_z"):
            if getattr(self, name) not in SCHEDULES:
                raise InvalidConfig(f"{name} must be one of {SCHEDULES}")
        for name in ("langevin_x", "langevin_z"):
            if getattr(self, name) not in SCALINGS:
                raise InvalidConfig(f"{name} must be one of {SCALINGS}")
        for name in ("eta_x", "eta_z", "t_ode"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must be in [0, 1]")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


def score_from_velocity(v, x_t, t):
    """Marginal score implied by a velocity under the Gaussian linear path."""
    if t >= 1.0 - 1e-9:
        raise TimeAtOne(f"t={t} too close to 1")
    return (t * np.asarray(v) - np.asarray(x_t)) / (1.0 - t)


def _schedule(kind, u):
    if kind == "exponential":
        return (1.0 - 10.0 ** (-2.0 * u)) / (1.0 - 10.0 ** -2.0)
    if kind == "quadratic":
        return u * u
    if kind == "uniform":
        return u
    raise InvalidConfig(f"unknown schedule {kind!r}")


def schedule_value(kind, n, N):
    """Time at step ``n`` of ``N``; endpoints are exactly 0 and 1."""
    if not 0 <= n <= N:
        raise IndexOutOfRange(f"step {n} outside [0, {N}]")
    if n == 0:
        return 0.0
    if n == N:
        return 1.0
    return float(_schedule(kind, n / N))


def schedule_grid(kind, N):
    return np.array([schedule_value(kind, n, N) for n in range(N + 1)])


def langevin_scale(kind, t):
    if kind == "inv_t":
        if t <= 1e-9:
            raise TimeAtZero(f"1/t undefined at t={t}")
        return 1.0 / t
    if kind == "tan":
        return (math.pi / 2) * math.tan((math.pi / 2) * (1.0 - t))
    raise InvalidConfig(f"unknown scaling {kind!r}")


@dataclass
class FlowState:
    x: np.ndarray  # [L, 3] model units, or None without the x modality
    z: np.ndarray  # [L, 8]
    t_x: float
    t_z: float


def _modality_step(value, v, t, t_next, kind, eta, langevin, last, t_ode, rng):
    dt = t_next - t
    eps = rng.standard_normal(value.shape)
    # The score is singular at t = 1 and both scalings degenerate at t = 0,
    # so the Langevin term and its noise are skipped on those steps. Close to
    # t = 1 the score pulls deviations back at a rate of order
    # beta / (1 - t)^2, which an explicit step of size dt cannot follow once
    # dt * beta / (1 - t)^2 exceeds 2; past ``t_ode`` the step is plain ODE.
    if not langevin or last or t <= 1e-9 or t > t_ode:
        return value + v * dt
    beta = langevin_scale(kind, t)
    drift = v + beta * score_from_velocity(v, value, t)
    return value + drift * dt + math.sqrt(max(2.0 * beta * eta * dt, 0.0)) * eps


def em_step(state, velocity_fn, cfg, n, rng):
    """Advance both modalities from step ``n`` to ``n + 1``.

    ``velocity_fn(x, z, t_x, t_z)`` returns ``(v_x, v_z)``. Noise for x is
    always drawn before noise for z so trajectories are reproducible.
    """
    N = cfg.n_steps
    if not 0 <= n < N:
        raise IndexOutOfRange(f"step {n} outside [0, {N})")
    tx1 = schedule_value(cfg.schedule_x, n + 1, N)
    tz1 = schedule_value(cfg.schedule_z, n + 1, N)
    v_x, v_z = velocity_fn(state.x, state.z, state.t_x, state.t_z)
    last = n + 1 == N
    x = state.x
    if x is not None:
        x = _modality_step(x, v_x, state.t_x, tx1, cfg.langevin_x, cfg.eta_x, cfg.langevin, last,
                           cfg.t_ode, rng)
    z = _modality_step(state.z, v_z, state.t_z, tz1, cfg.langevin_z, cfg.eta_z, cfg.langevin, last,
                       cfg.t_ode, rng)
    return FlowState(x=x, z=z, t_x=tx1, t_z=tz1)


def integrate(x0, z0, velocity_fn, cfg, rng, callback=None):
    """Run all ``N`` steps from the noise sample ``(x0, z0)`` at t = (0, 0)."""
    cfg.validate()
    state = FlowState(x=None if x0 is None else np.array(x0, dtype=np.float64),
                      z=np.array(z0, dtype=np.float64), t_x=0.0, t_z=0.0)
    for n in range(cfg.n_steps):
        state = em_step(state, velocity_fn, cfg, n, rng)
        if callback is not None:
            callback(n, state)
    return state


def sample_rng(seed, index, length):
    """Independent stream for sample ``index`` of ``length`` residues in run ``seed``."""
    return np.random.default_rng([seed, 3, length, index])


def generate(den, vae, length, cfg, index=0, motif_cond=None, name=None):
    """Draw one structure of ``length`` residues: noise, SDE integration, decoding.

    Generation is per sample with its own rng stream so results do not
    depend on how samples are batched or ordered.
    """
    cfg.validate()
    if not 1 <= length <= MAX_LENGTH:
        raise LengthOutOfRange(f"length {length} outside [1, {MAX_LENGTH}]")
    rng = sample_rng(cfg.seed, index, length)
    use_x = den.cfg.use_x
    x0 = rng.standard_normal((length, 3)) if use_x else None
    z0 = rng.standard_normal((length, F.LATENT_DIM))

    def vfn(x, z, t_x, t_z):
        return velocity(den, x, z, t_x, t_z, motif_cond)

    final = integrate(x0, z0, vfn, cfg, rng)
    z = final.z
    if use_x:
        x = final.x - final.x.mean(axis=0) if den.cfg.motif_mode is None else final.x
        ca = x / F.COORD_SCALE
    else:
        ca = np.zeros((length, 3))
    out = decode(vae, ca, z)
    p = structure_from_decoding(ca, out, name=name or f"sample_{length}_{index}")
    return p.centered() if den.cfg.motif_mode is None else p
