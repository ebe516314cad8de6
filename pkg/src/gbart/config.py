"""Sampler configuration and the flat ``key=value`` config-file format."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

#: Config keys forwarded to the likelihood family constructor.
FAMILY_OPTION_KEYS = ("link", "variance", "phi_prior")


@dataclass
class SamplerConfig:
    """All tuning constants of a fit.

    ``k`` is the half-Cauchy multiplier: the prior scale of ``sigma_mu`` is
    ``c = k / sqrt(num_trees)``.
    """

    model: str = "gaussian"
    num_trees: int = 50
    gamma: float = 0.95
    beta: float = 2.0
    k: float = 1.0
    xi: float = 1.0
    p_birth: float = 0.25
    p_death: float = 0.25
    p_change: float = 0.5
    iterations: int = 2000
    burn_in: int = 1000
    thin: int = 1
    chains: int = 1
    seed: int = 0
    fd_delta: float = 1e-6
    sampler: str = "rjmcmc"
    update_sigma_mu: bool = True
    update_split_probs: bool = True
    update_nuisance: bool = True
    family_options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.iterations > self.burn_in >= 0:
            raise ValidationError("need iterations > burn_in >= 0")
        if self.thin < 1 or self.chains < 1 or self.num_trees < 1:
            raise ValidationError("thin, chains and num_trees must be at least 1")
        if (self.iterations - self.burn_in) % self.thin:
            raise ValidationError("iterations - burn_in must be a multiple of thin")
        if min(self.p_birth, self.p_death, self.p_change) < 0 or self.p_birth + self.p_death <= 0:
            raise ValidationError("move probabilities must be nonnegative with p_birth + p_death > 0")
        if self.k <= 0 or self.xi <= 0 or self.fd_delta <= 0:
            raise ValidationError("k, xi and fd_delta must be positive")
        if self.sampler not in ("rjmcmc", "conjugate"):
            raise ValidationError(f"unknown sampler {self.sampler!r}")

    @property
    def sigma_mu_scale(self) -> float:
        """Half-Cauchy scale ``c = k / sqrt(T)``."""
        return self.k / math.sqrt(self.num_trees)

    @property
    def num_kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        options = out.pop("family_options")
        out.update(options)
        return out


def _coerce(name: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(SamplerConfig)}
    default = fields[name].default
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except ValueError:
        raise ValidationError(f"{name}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(pairs: dict[str, str]) -> SamplerConfig:
    """Build a config from string key/value pairs (unknown keys are errors)."""
    names = {f.name for f in dataclasses.fields(SamplerConfig)} - {"family_options"}
    kwargs, options = {}, {}
    for key, raw in pairs.items():
        key = key.strip()
        if key in FAMILY_OPTION_KEYS:
            options[key] = raw.strip()
        elif key in names:
            kwargs[key] = _coerce(key, raw.strip())
        else:
            raise ValidationError(f"unknown config key {key!r}")
    return SamplerConfig(family_options=options, **kwargs)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Read ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs
