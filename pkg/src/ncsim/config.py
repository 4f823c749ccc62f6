"""Simulation configuration, YAML loading and the compiled model bundle."""

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import priority
from .channel import SigmaStarDistribution
from .errors import ConfigError
from .plant import ContinuousPlant, discretize, is_diagonal, solve_dare, whiten

POLICIES = (
    "proposed-feedback",
    "proposed-virtual",
    "epds",
    "adp",
    "efc-via",
    "spsis-via",
    "oracle-via",
)


def _mat(x, name):
    try:
        m = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is not numeric") from exc
    if m.ndim != 2:
        raise ConfigError(f"{name} must be a matrix (nested row-major lists)")
    return m


@dataclass
class SimConfig:
    """Everything needed to run closed-loop episodes (row-major matrices)."""

    A_tilde: np.ndarray
    B_tilde: np.ndarray
    W_tilde: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    n_t: int = 3
    n_r: int = 2
    tau: float = 0.05
    F_bar: float = 2.0
    lam: float = 1500.0
    eta_th: float = 0.31
    policy: str = "proposed-feedback"
    horizon: int = 100_000
    burn_in: int = -1          # -1 -> 10% of horizon
    episodes: int = 20
    master_seed: int = 0
    diverge_limit: float = 1e12
    joseph: bool = False
    c_anchor_steps: int = 10
    c_anchor_direction: list = None

    def __post_init__(self):
        self.A_tilde = _mat(self.A_tilde, "A_tilde")
        self.B_tilde = _mat(self.B_tilde, "B_tilde")
        self.W_tilde = _mat(self.W_tilde, "W_tilde")
        self.Q = _mat(self.Q, "Q")
        self.R = _mat(self.R, "R")
        self.S = _mat(self.S, "S")
        if self.burn_in < 0:
            self.burn_in = self.horizon // 10
        self.validate()

    def validate(self):
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.F_bar <= 0:
            raise ConfigError("F_bar must be > 0")
        if self.lam <= 0:
            raise ConfigError("lambda must be > 0")
        if not (self.horizon > self.burn_in >= 0):
            raise ConfigError("need horizon > burn_in >= 0")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.n_t < 1 or self.n_r < 1:
            raise ConfigError("antenna counts must be >= 1")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        L = self.A_tilde.shape[0]
        if L > min(self.n_t, self.n_r):
            raise ConfigError("state dimension exceeds min(N_t, N_r) stream limit")

    @property
    def L(self):
        return self.A_tilde.shape[0]

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    @classmethod
    def reference_preset(cls, **overrides):
        """Default two-state MIMO configuration used throughout the docs."""
        base = dict(
            A_tilde=[[1.0, 2.0], [-1.0, 3.0]],
            B_tilde=[[1.0, 0.2], [0.1, 1.0]],
            W_tilde=[[1.0, 0.0], [0.0, 2.0]],
            Q=[[1.0, 0.0], [0.0, 2.0]],
            R=[[1.0, 0.0], [0.0, 0.2]],
            S=[[1.0, 0.0], [0.0, 1.0]],
            n_t=3, n_r=2, tau=0.05,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_yaml(cls, path):
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a key/value mapping")
        if raw.pop("preset", None) == "reference":
            return cls.reference_preset(**raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_yaml(self, path):
        data = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            data[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        with open(path, "w") as fh:
            yaml.safe_dump(data, fh, sort_keys=False)


@dataclass(frozen=True)
class SimModel:
    """Config compiled into the objects episodes actually consume."""

    config: SimConfig
    plant: ContinuousPlant
    disc: "object"
    gain: "object"
    dist: SigmaStarDistribution
    coeff: priority.PriorityCoefficients
    S: np.ndarray

    @property
    def normalizer(self):
        """Normalized MSE divides E[Delta' S Delta] by Tr(S W)."""
        return float(np.trace(self.S @ self.disc.W))


def build_model(config: SimConfig) -> SimModel:
    """Whiten if needed, discretize, solve the controller gain, build the
    channel law and priority coefficients."""
    plant = ContinuousPlant(config.A_tilde, config.B_tilde, config.W_tilde)
    s = config.S
    q = config.Q
    if not is_diagonal(plant.W_tilde):
        plant = whiten(plant)
        m = plant.whiten_map
        s = m @ s @ m.T
        q = m @ q @ m.T
    disc = discretize(plant, config.tau)
    gain = solve_dare(disc, q, config.R)
    dist = SigmaStarDistribution(config.n_t, config.n_r)
    coeff = priority.build_coefficients(
        plant, disc, s, dist, config.F_bar, config.lam, config.eta_th,
        anchor_direction=config.c_anchor_direction,
        dormant_steps=config.c_anchor_steps,
    )
    return SimModel(config=config, plant=plant, disc=disc, gain=gain,
                    dist=dist, coeff=coeff, S=np.asarray(s, float))
