"""
Settings and run configuration.

Process-wide defaults come from the environment (prefix WORKBENCH_, a local
.env is honoured by the entry point through load_dotenv). Per-run parameters
come from a TOML file and are validated before any module runs.
"""

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from tools.errors import ConfigError

# === Path Configuration ===
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class WorkbenchSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="WORKBENCH_", extra="ignore")

    output_dir: str = os.path.join(BASE_DIR, "reports")
    log_dir: str = os.path.join(BASE_DIR, "logs")
    drop_tolerance: float = 1e-16
    absolute_divisor_floor: float = 1e-13
    lie_order: int = 4
    rho_exponent: float = 0.05
    step_constant: float = 1.0
    radius_exponent: float = 1.0
    cardinality_threshold: int = 10**6
    max_search_attempts: int = 2000
    whitney_step: float = 1e-2


_settings: Optional[WorkbenchSettings] = None


def get_settings() -> WorkbenchSettings:
    """Return the cached settings instance"""
    global _settings
    if _settings is None:
        _settings = WorkbenchSettings()
    return _settings


def reset_settings() -> None:
    global _settings
    _settings = None


# ---------- Run configuration ----------

class RunConfig(BaseModel):
    """Key-value set shared by all subcommands; unused keys are ignored by a command"""

    sites: Optional[List[Tuple[int, int]]] = None
    xi: Optional[List[float]] = None
    eps: float = 0.1
    gamma: Optional[float] = None
    tau: float = 2.0
    K0: int = 2
    r: float = 0.5
    s: Optional[float] = None
    rho: Optional[float] = None
    mode_bound: int = 3
    degree_bound: int = 4
    steps: int = 3
    seed: int = 0
    samples: int = 10000
    box: Tuple[float, float] = (1.0, 2.0)
    Delta: int = 2
    b: int = 2
    site_bound: int = 10
    check_bound: int = 60
    T: float = 100.0
    dt: float = 0.01
    gammas: List[float] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2]
    threads: int = 1
    output: Optional[str] = None

    @field_validator("eps", "tau", "r", "T", "dt")
    @classmethod
    def must_be_positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator("s", "rho", "gamma")
    @classmethod
    def optional_positive(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v < 0:
            raise ValueError("must be nonnegative")
        return v

    @field_validator("K0", "mode_bound", "degree_bound", "samples", "b", "site_bound",
                     "check_bound", "threads")
    @classmethod
    def positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be a positive integer")
        return v

    @field_validator("steps", "Delta", "seed")
    @classmethod
    def nonnegative_int(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be nonnegative")
        return v

    @field_validator("sites", mode="before")
    @classmethod
    def parse_sites(cls, v: Any) -> Any:
        if v is None:
            return v
        sites = [tuple(int(c) for c in site) for site in v]
        if len(sites) < 2:
            raise ValueError("need at least two tangential sites")
        if len(set(sites)) != len(sites):
            raise ValueError("tangential sites must be distinct")
        return sites

    @model_validator(mode="after")
    def check_xi(self) -> "RunConfig":
        lo, hi = self.box
        if not 0 < lo <= hi:
            raise ValueError("box must satisfy 0 < xi_min <= xi_max")
        if self.xi is not None:
            if self.sites is not None and len(self.xi) != len(self.sites):
                raise ValueError("xi and sites must have the same length")
            for x in self.xi:
                if not lo <= x <= hi:
                    raise ValueError(f"xi component {x} outside box [{lo}, {hi}]")
        return self


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load a run config from TOML and apply flag overrides (flags win).

    Args:
        path: TOML file, or None for defaults only
        overrides: values from the command line; None entries are ignored

    Returns:
        Validated RunConfig
    """
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}", {"path": path})
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config file is not valid TOML: {e}", {"path": path})

    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("run config failed validation",
                          {"errors": [{"loc": list(err["loc"]), "msg": err["msg"]} for err in e.errors()]})
