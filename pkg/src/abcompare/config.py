"""Pipeline and gateway configuration, loaded from an INI-style file."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import TokenBudget, to_data
from .text import digest


@dataclass(frozen=True)
class PipelineConfig:
    budget: TokenBudget = field(default_factory=TokenBudget)
    webpages_per_entity: int = 10
    cr_enabled: bool = True
    cr_max_iterations: int = 3
    majority_threshold: float = 0.5
    rank_weights: tuple[float, float] = (0.5, 0.5)
    top_k_rows: int = 10

    def __post_init__(self):
        if not 5 <= self.webpages_per_entity <= 20:
            raise ConfigError(f"webpages_per_entity must be in [5, 20], got {self.webpages_per_entity}")
        if self.cr_max_iterations < 1:
            raise ConfigError("cr_max_iterations must be >= 1")
        # the threshold is compared strictly (support share > threshold)
        if not 0.5 <= self.majority_threshold <= 1.0:
            raise ConfigError(f"majority_threshold must be in [0.5, 1], got {self.majority_threshold}")
        wc, wp = self.rank_weights
        if wc < 0 or wp < 0 or abs(wc + wp - 1.0) > 1e-9:
            raise ConfigError(f"rank_weights must be non-negative and sum to 1, got {self.rank_weights}")
        if self.top_k_rows < 1:
            raise ConfigError("top_k_rows must be >= 1")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        return digest(to_data(self), 12)


@dataclass(frozen=True)
class GatewayConfig:
    endpoint_url: str = ""
    timeout_ms: int = 30_000
    max_parallel: int = 8
    api_key_env: str = "ABCOMPARE_API_KEY"
    rate_per_s: float = 0.0

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ConfigError("timeout_ms must be positive")
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be >= 1")


@dataclass(frozen=True)
class AppConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    seed: int = 0


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _get(section, key, conv, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        if conv is bool:
            return _BOOL[raw.lower()]
        return conv(raw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {raw!r}") from exc


def parse_config(text: str, source: str = "<string>") -> AppConfig:
    """Parse INI text with [pipeline], [gateway] and [run] sections."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {source}: {exc}") from exc
    known = {"pipeline", "gateway", "run"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    p = cp["pipeline"] if cp.has_section("pipeline") else None
    g = cp["gateway"] if cp.has_section("gateway") else None
    r = cp["run"] if cp.has_section("run") else None
    d = PipelineConfig()
    try:
        budget = TokenBudget(
            _get(p, "context_window", int, d.budget.context_window),
            _get(p, "prompt_reserve", int, d.budget.prompt_reserve),
        )
        pipeline = PipelineConfig(
            budget=budget,
            webpages_per_entity=_get(p, "webpages_per_entity", int, d.webpages_per_entity),
            cr_enabled=_get(p, "cr_enabled", bool, d.cr_enabled),
            cr_max_iterations=_get(p, "cr_max_iterations", int, d.cr_max_iterations),
            majority_threshold=_get(p, "majority_threshold", float, d.majority_threshold),
            rank_weights=(
                _get(p, "w_contrast", float, d.rank_weights[0]),
                _get(p, "w_popularity", float, d.rank_weights[1]),
            ),
            top_k_rows=_get(p, "top_k_rows", int, d.top_k_rows),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    gd = GatewayConfig()
    gateway = GatewayConfig(
        endpoint_url=_get(g, "endpoint_url", str, gd.endpoint_url),
        timeout_ms=_get(g, "timeout_ms", int, gd.timeout_ms),
        max_parallel=_get(g, "max_parallel", int, gd.max_parallel),
        api_key_env=_get(g, "api_key_env", str, gd.api_key_env),
        rate_per_s=_get(g, "rate_per_s", float, gd.rate_per_s),
    )
    return AppConfig(pipeline, gateway, _get(r, "seed", int, 0))


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def config_to_ini(cfg: AppConfig) -> str:
    """Snapshot that :func:`parse_config` reads back to an equal config."""
    p, g = cfg.pipeline, cfg.gateway
    return (
        "[pipeline]\n"
        f"context_window = {p.budget.context_window}\n"
        f"prompt_reserve = {p.budget.prompt_reserve}\n"
        f"webpages_per_entity = {p.webpages_per_entity}\n"
        f"cr_enabled = {'on' if p.cr_enabled else 'off'}\n"
        f"cr_max_iterations = {p.cr_max_iterations}\n"
        f"majority_threshold = {p.majority_threshold!r}\n"
        f"w_contrast = {p.rank_weights[0]!r}\n"
        f"w_popularity = {p.rank_weights[1]!r}\n"
        f"top_k_rows = {p.top_k_rows}\n\n"
        "[gateway]\n"
        f"endpoint_url = {g.endpoint_url}\n"
        f"timeout_ms = {g.timeout_ms}\n"
        f"max_parallel = {g.max_parallel}\n"
        f"api_key_env = {g.api_key_env}\n"
        f"rate_per_s = {g.rate_per_s!r}\n\n"
        "[run]\n"
        f"seed = {cfg.seed}\n"
    )
