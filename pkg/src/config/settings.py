# src/config/settings.py
from __future__ import annotations

import copy
import json
import os
from dataclasses import fields
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Optional

from src.core.errors import ValidationError
from src.core.rdp_solver import SolverConfig
from src.simulation.coding_sim import ENCODERS

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "app": {
        "schema_version": 1,
        "problems_path": "problems",
    },
    "solver": {f.name: f.default for f in fields(SolverConfig)},
    "simulation": {
        "trials": 200,
        "master_seed": 2024,
        "codebook_seed": 7,
        "encoder": "exact",
        "message_budget": 1 << 22,
    },
    "soft_covering": {
        "seed_count": 50,
        "enumeration_budget": 10_000_000,
    },
    "converse": {
        "search_space_limit": 1_000_000,
        "samples": 10_000,
        "tol": 1e-6,
    },
    "output": {
        "float_format": "repr",
        "log_level": "WARNING",
    },
    "parallel": {
        "threads": 1,
    },
}


# -----------------------
# Settings (Singleton API)
# -----------------------

class Settings:
    """
    Singleton settings object with JSON (de)serialization and soft validation.

    - Every section falls back to DEFAULTS key by key.
    - Values of the wrong type or out of range are replaced by the default and noted in
      self.warnings; nothing here raises on bad content.
    - RDP_THREADS in the environment overrides parallel.threads.
    """

    _instance: ClassVar[Optional["Settings"]] = None

    # ---- Construction ----------------------------------------------------------

    def __init__(self, data: Dict[str, Any], path: Path):
        self._path = path
        # Project root (directory where settings.json resides)
        self._root: Path = self._path.parent

        self.warnings: List[str] = []

        self.app = self._section(data, "app")
        self.solver = self._section(data, "solver")
        self.simulation = self._section(data, "simulation")
        self.soft_covering = self._section(data, "soft_covering")
        self.converse = self._section(data, "converse")
        self.output = self._section(data, "output")
        self.parallel = self._section(data, "parallel")

        self._soft_validate()
        self._apply_environment()

    def _section(self, data: Dict[str, Any], name: str) -> Dict[str, Any]:
        raw = data.get(name, {}) or {}
        if not isinstance(raw, dict):
            self.warnings.append(f"Section '{name}' should be an object; using defaults.")
            raw = {}
        merged = copy.deepcopy(DEFAULTS[name])
        for key, value in raw.items():
            if key not in merged:
                self.warnings.append(f"Unknown key '{name}.{key}' ignored.")
                continue
            default = merged[key]
            if isinstance(default, bool) or not isinstance(default, (int, float)):
                ok = isinstance(value, type(default))
            elif isinstance(default, int) and not isinstance(default, bool):
                ok = isinstance(value, int) and not isinstance(value, bool)
                if not ok and isinstance(value, float) and value.is_integer():
                    value, ok = int(value), True
            else:
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
                value = float(value) if ok else value
            if ok:
                merged[key] = value
            else:
                self.warnings.append(f"'{name}.{key}' has the wrong type; using default {default!r}.")
        return merged

    # ---- Path helpers ----------------------------------------------------------

    def _abs(self, p: str | os.PathLike[str]) -> Path:
        """Return an absolute path, resolved against the folder with settings.json."""
        q = Path(p)
        return q if q.is_absolute() else (self._root / q)

    @property
    def problems_dir(self) -> Path:
        return self._abs(self.app["problems_path"])

    # ---- Loading ---------------------------------------------------------------

    @classmethod
    def load(cls, path: Path) -> "Settings":
        """Load once and return singleton instance. Never crashes on missing/empty file; uses defaults."""
        if cls._instance is not None:
            return cls._instance

        if not path.exists():
            inst = cls({}, path)
            cls._instance = inst
            return inst

        # Safely read JSON; handle empty/invalid content
        try:
            raw = path.read_text(encoding="utf-8")
            data = json.loads(raw) if raw.strip() else {}
            if not isinstance(data, dict):
                raise ValueError("top level must be an object")
        except Exception as ex:
            inst = cls({}, path)
            inst.warnings.append(f"Settings file '{path}' could not be parsed (using in-memory defaults): {ex}")
            cls._instance = inst
            return inst

        inst = cls(data, path)
        cls._instance = inst
        return inst

    @classmethod
    def reset(cls) -> None:
        cls._instance = None

    # ---- Validation & normalization -------------------------------------------

    def _fallback(self, section: str, key: str, reason: str) -> None:
        self.warnings.append(f"'{section}.{key}' {reason}; using default {DEFAULTS[section][key]!r}.")
        getattr(self, section)[key] = DEFAULTS[section][key]

    def _soft_validate(self) -> None:
        """Replace out-of-range values by defaults; collect a warning for each."""
        try:
            SolverConfig(**self.solver)
        except ValidationError as ex:
            self.warnings.append(f"Section 'solver' rejected ({ex}); using defaults.")
            self.solver = copy.deepcopy(DEFAULTS["solver"])

        if self.simulation["encoder"] not in ENCODERS:
            self._fallback("simulation", "encoder", f"must be one of {', '.join(ENCODERS)}")
        for key in ("trials", "message_budget"):
            if self.simulation[key] < 1:
                self._fallback("simulation", key, "must be positive")
        for key in ("seed_count", "enumeration_budget"):
            if self.soft_covering[key] < 1:
                self._fallback("soft_covering", key, "must be positive")
        if self.converse["search_space_limit"] < 1:
            self._fallback("converse", "search_space_limit", "must be positive")
        if self.converse["samples"] < 0:
            self._fallback("converse", "samples", "must be >= 0")
        if not self.converse["tol"] > 0:
            self._fallback("converse", "tol", "must be > 0")
        if str(self.output["log_level"]).upper() not in _LOG_LEVELS:
            self._fallback("output", "log_level", "is not a logging level")
        fmt = self.output["float_format"]
        if fmt != "repr":
            try:
                format(1.5, fmt)
            except ValueError:
                self._fallback("output", "float_format", "is not a float format spec")
        if self.parallel["threads"] < 1:
            self._fallback("parallel", "threads", "must be >= 1")

    def _apply_environment(self) -> None:
        env = os.environ.get("RDP_THREADS")
        if env is None:
            return
        try:
            threads = int(env)
            if threads < 1:
                raise ValueError(env)
        except ValueError:
            self.warnings.append(f"RDP_THREADS={env!r} is not a positive integer; ignored.")
            return
        self.parallel["threads"] = threads

    # ---- Public API ------------------------------------------------------------

    @property
    def threads(self) -> int:
        return int(self.parallel["threads"])

    def solver_config(self, **overrides: Any) -> SolverConfig:
        """Immutable solver configuration; keyword overrides win over the file."""
        values = dict(self.solver)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return SolverConfig(**values)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "app": dict(self.app),
            "solver": dict(self.solver),
            "simulation": dict(self.simulation),
            "soft_covering": dict(self.soft_covering),
            "converse": dict(self.converse),
            "output": dict(self.output),
            "parallel": dict(self.parallel),
        }

    def save(self) -> None:
        """Serialize to JSON on disk (idempotent)."""
        self._path.write_text(json.dumps(self.as_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
