"""Layered run configuration: flags over environment over file over defaults.

The config file is INI (one key per line, one section per concern).  Every
key can also be set through the environment as FUNFACTOR_<SECTION>_<KEY>;
a handful of common knobs additionally have short environment aliases
(FUNFACTOR_SEED, FUNFACTOR_OUT, ...) matching the CLI flags.
"""

from __future__ import annotations

import configparser
import os

from .model import Hyperparameters
from .sampler import ChainConfig
from .simgen import ScenarioSpec
from .splines import BasisConfig

__all__ = ["Settings", "ConfigError", "EXIT_CONFIG", "EXIT_CHAIN",
           "EXIT_VERSION", "EXIT_HASH"]

EXIT_CONFIG = 2
EXIT_CHAIN = 3
EXIT_VERSION = 4
EXIT_HASH = 5

ENV_PREFIX = "FUNFACTOR"

# short env aliases for the common flag set
_ALIASES = {
    ("chain", "seed"): "FUNFACTOR_SEED",
    ("chain", "chains"): "FUNFACTOR_CHAINS",
    ("chain", "iterations"): "FUNFACTOR_ITERATIONS",
    ("chain", "burnin"): "FUNFACTOR_BURNIN",
    ("chain", "thin"): "FUNFACTOR_THIN",
    ("bands", "alpha"): "FUNFACTOR_ALPHA",
    ("output", "dir"): "FUNFACTOR_OUT",
}

_DEFAULTS = {
    ("data", "path"): "",
    ("basis_s", "degree"): "3",
    ("basis_s", "knots"): "0.2,0.4,0.6,0.8",
    ("basis_s", "domain"): "0,1",
    ("basis_t", "degree"): "3",
    ("basis_t", "knots"): ",".join(str(v) for v in
                                   (1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6, 5 / 6)),
    ("basis_t", "domain"): "0,1",
    ("factors", "q1"): "6",
    ("factors", "q2"): "6",
    ("priors", "nu1"): "5", ("priors", "nu2"): "5",
    ("priors", "r1"): "1", ("priors", "r2"): "2",
    ("priors", "a_sigma"): "0.5", ("priors", "b_sigma"): "0.5",
    ("priors", "a_h"): "1", ("priors", "b_h"): "1",
    ("priors", "a_phi"): "1e-4", ("priors", "b_phi"): "1e-4",
    ("chain", "iterations"): "2000",
    ("chain", "burnin"): "500",
    ("chain", "thin"): "3",
    ("chain", "chains"): "1",
    ("chain", "seed"): "0",
    ("chain", "mh_step_sd"): "0.3",
    ("scenario", "case"): "1",
    ("scenario", "subjects"): "30",
    ("scenario", "n_s"): "10",
    ("scenario", "n_t"): "20",
    ("scenario", "noise_var"): "0.025",
    ("scenario", "matern_sigma2"): "1.0",
    ("scenario", "matern_rho"): "0.5",
    ("scenario", "alpha"): "1.0",
    ("scenario", "k_terms"): "50",
    ("scenario", "projection"): "",
    ("bands", "alpha"): "0.05",
    ("bands", "components"): "3",
    ("output", "dir"): "out",
    ("output", "figures"): "true",
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class Settings:
    """Resolves (section, key) through overrides, env, file, defaults."""

    def __init__(self, config_path: str | None = None,
                 overrides: dict | None = None, env=None):
        self._file = configparser.ConfigParser()
        self._env = os.environ if env is None else env
        if config_path:
            if not os.path.exists(config_path):
                raise ConfigError(f"config file not found: {config_path}")
            try:
                self._file.read(config_path, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse config file: {exc}") from None
        self._overrides = {k: v for k, v in (overrides or {}).items()
                           if v is not None}

    def get(self, section: str, key: str) -> str:
        if (section, key) in self._overrides:
            return str(self._overrides[(section, key)])
        alias = _ALIASES.get((section, key))
        if alias and alias in self._env:
            return self._env[alias]
        generic = f"{ENV_PREFIX}_{section.upper()}_{key.upper()}"
        if generic in self._env:
            return self._env[generic]
        if self._file.has_option(section, key):
            return self._file.get(section, key)
        if (section, key) in _DEFAULTS:
            return _DEFAULTS[(section, key)]
        raise ConfigError(f"missing configuration value [{section}] {key}")

    def _typed(self, section, key, cast, what):
        raw = self.get(section, key)
        try:
            return cast(raw)
        except (TypeError, ValueError):
            raise ConfigError(
                f"[{section}] {key} must be {what}, got {raw!r}") from None

    def get_int(self, section, key) -> int:
        return self._typed(section, key, int, "an integer")

    def get_float(self, section, key) -> float:
        return self._typed(section, key, float, "a number")

    def get_bool(self, section, key) -> bool:
        raw = self.get(section, key).strip().lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean, got {raw!r}")

    def get_floats(self, section, key) -> tuple[float, ...]:
        raw = self.get(section, key).strip()
        if not raw:
            return ()
        return self._typed(section, key,
                           lambda s: tuple(float(v) for v in s.split(",")),
                           "a comma-separated list of numbers")

    # ------------------------------------------------------------------
    # assembled objects

    def basis(self, axis: str) -> BasisConfig:
        section = f"basis_{axis}"
        domain = self.get_floats(section, "domain")
        if len(domain) != 2:
            raise ConfigError(f"[{section}] domain must be two numbers")
        try:
            return BasisConfig(degree=self.get_int(section, "degree"),
                               interior_knots=self.get_floats(section, "knots"),
                               domain=(domain[0], domain[1]))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    def hyper(self) -> Hyperparameters:
        try:
            return Hyperparameters(
                q1=self.get_int("factors", "q1"),
                q2=self.get_int("factors", "q2"),
                nu1=self.get_float("priors", "nu1"),
                nu2=self.get_float("priors", "nu2"),
                r1=self.get_float("priors", "r1"),
                r2=self.get_float("priors", "r2"),
                a_sigma=self.get_float("priors", "a_sigma"),
                b_sigma=self.get_float("priors", "b_sigma"),
                a_h=self.get_float("priors", "a_h"),
                b_h=self.get_float("priors", "b_h"),
                a_phi=self.get_float("priors", "a_phi"),
                b_phi=self.get_float("priors", "b_phi"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def chain(self) -> ChainConfig:
        try:
            return ChainConfig(
                n_iterations=self.get_int("chain", "iterations"),
                burn_in=self.get_int("chain", "burnin"),
                thin=self.get_int("chain", "thin"),
                n_chains=self.get_int("chain", "chains"),
                seed=self.get_int("chain", "seed"),
                mh_step_sd=self.get_float("chain", "mh_step_sd"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def scenario(self) -> ScenarioSpec:
        proj = self.get("scenario", "projection").strip()
        projection = None
        if proj:
            parts = proj.split(",")
            if len(parts) != 2:
                raise ConfigError("[scenario] projection must be 'p1,p2'")
            projection = (int(parts[0]), int(parts[1]))
        try:
            return ScenarioSpec(
                case_id=self.get_int("scenario", "case"),
                n_subjects=self.get_int("scenario", "subjects"),
                n_s=self.get_int("scenario", "n_s"),
                n_t=self.get_int("scenario", "n_t"),
                noise_var=self.get_float("scenario", "noise_var"),
                matern_sigma2=self.get_float("scenario", "matern_sigma2"),
                matern_rho=self.get_float("scenario", "matern_rho"),
                alpha=self.get_float("scenario", "alpha"),
                k_terms=self.get_int("scenario", "k_terms"),
                projection_dims=projection,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def effective(self) -> str:
        """Every resolved value, INI-formatted, for the provenance log."""
        sections: dict[str, list[tuple[str, str]]] = {}
        keys = set(_DEFAULTS)
        keys.update((s, k) for s in self._file.sections() for k in self._file[s])
        keys.update(self._overrides)
        for section, key in sorted(keys):
            sections.setdefault(section, []).append((key, self.get(section, key)))
        lines = []
        for section, pairs in sections.items():
            lines.append(f"[{section}]")
            for key, val in pairs:
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)
