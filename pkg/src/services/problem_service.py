# src/services/problem_service.py
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.backends.fs_backend import sha256_hex
from src.config.settings import Settings
from src.core.errors import ValidationError
from src.core.probability import Channel, DistortionMatrix, JointTable
from src.core.rdp_solver import ProblemSpec
from src.simulation.codebook import SchemeSpec
from src.simulation.soft_covering import SynthesisSpec

_SCHEME_KEYS = ("u_alphabet", "u_given_z", "x_given_zu", "y_given_zu")


@dataclass(frozen=True)
class ProblemFile:
    """Parsed problem document: labels, the solver instance and an optional coding scheme."""
    path: Path
    digest: str
    x_labels: Tuple[str, ...]
    z_labels: Tuple[str, ...]
    y_labels: Tuple[str, ...]
    spec: ProblemSpec
    u_labels: Tuple[str, ...] = ()
    scheme: Optional[SchemeSpec] = None


@dataclass(frozen=True)
class SynthesisFile:
    path: Path
    digest: str
    w_labels: Tuple[str, ...]
    u_labels: Tuple[str, ...]
    v_labels: Tuple[str, ...]
    p_w: np.ndarray
    u_given_w: Channel
    v_given_uw: Channel


def _require(doc: Dict[str, Any], key: str) -> Any:
    if key not in doc:
        raise ValidationError(f"missing key '{key}'")
    return doc[key]


def _labels(doc: Dict[str, Any], key: str) -> Tuple[str, ...]:
    raw = _require(doc, key)
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"'{key}' must be a nonempty list of labels")
    labels = tuple(str(v) for v in raw)
    if len(set(labels)) != len(labels):
        raise ValidationError(f"'{key}' has duplicate labels")
    return labels


def _table(doc: Dict[str, Any], key: str, shape: Sequence[int]) -> np.ndarray:
    raw = _require(doc, key)
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError) as ex:
        raise ValidationError(f"'{key}' is not a numeric table: {ex}") from ex
    if arr.shape != tuple(shape):
        raise ValidationError(f"'{key}' has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def _wrap(key: str, build):
    try:
        return build()
    except ValidationError as ex:
        raise ValidationError(f"'{key}': {ex}") from ex


def _read_document(path: Path) -> Tuple[Dict[str, Any], str]:
    try:
        raw = Path(path).read_bytes()
    except OSError as ex:
        raise ValidationError(f"cannot read '{path}': {ex}") from ex
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as ex:
        raise ValidationError(f"'{path}' is not valid JSON: {ex}") from ex
    if not isinstance(doc, dict):
        raise ValidationError(f"'{path}' must hold a JSON object")
    return doc, sha256_hex(raw)


def parse_problem(doc: Dict[str, Any], path: Path = Path("<memory>"), digest: str = "") -> ProblemFile:
    xl, zl, yl = _labels(doc, "x_alphabet"), _labels(doc, "z_alphabet"), _labels(doc, "y_alphabet")
    kx, kz, ky = len(xl), len(zl), len(yl)
    p_xz = _wrap("p_xz", lambda: JointTable(_table(doc, "p_xz", (kx, kz))))
    d = _wrap("distortion", lambda: DistortionMatrix(_table(doc, "distortion", (kx, ky))))
    spec = ProblemSpec(p_xz, ky, d)

    present = [k for k in _SCHEME_KEYS if k in doc]
    if not present:
        return ProblemFile(path, digest, xl, zl, yl, spec)
    if len(present) != len(_SCHEME_KEYS):
        missing = [k for k in _SCHEME_KEYS if k not in doc]
        raise ValidationError(f"incomplete scheme: missing key '{missing[0]}'")
    ul = _labels(doc, "u_alphabet")
    ku = len(ul)
    u_given_z = _wrap("u_given_z", lambda: Channel(_table(doc, "u_given_z", (kz, ku))))
    x_given_zu = _wrap("x_given_zu", lambda: Channel(_table(doc, "x_given_zu", (kz, ku, kx))))
    y_given_zu = _wrap("y_given_zu", lambda: Channel(_table(doc, "y_given_zu", (kz, ku, ky))))
    scheme = _wrap("scheme", lambda: SchemeSpec(p_xz, u_given_z, x_given_zu, y_given_zu, d))
    return ProblemFile(path, digest, xl, zl, yl, spec, ul, scheme)


def parse_synthesis(doc: Dict[str, Any], path: Path = Path("<memory>"), digest: str = "") -> SynthesisFile:
    wl, ul, vl = _labels(doc, "w_alphabet"), _labels(doc, "u_alphabet"), _labels(doc, "v_alphabet")
    kw, ku, kv = len(wl), len(ul), len(vl)
    p_w = _table(doc, "p_w", (kw,))
    if np.any(p_w < 0) or abs(p_w.sum() - 1.0) > 1e-9:
        raise ValidationError("'p_w' must be a probability vector")
    u_given_w = _wrap("u_given_w", lambda: Channel(_table(doc, "u_given_w", (kw, ku))))
    v_given_uw = _wrap("v_given_uw", lambda: Channel(_table(doc, "v_given_uw", (ku, kw, kv))))
    return SynthesisFile(path, digest, wl, ul, vl, p_w, u_given_w, v_given_uw)


class ProblemService:
    """
    Loads problem documents relative to the configured problems folder.
    Parsed files are cached; an entry is dropped when the file's mtime changes.
    """

    def __init__(self, settings: Settings):
        self.settings = settings
        self._cache: Dict[Path, Tuple[float, Any]] = {}

    def resolve(self, name: str | Path) -> Path:
        """Absolute path as given, else relative to cwd, else inside the problems folder."""
        p = Path(name)
        if p.is_absolute() or p.exists():
            return p
        candidate = self.settings.problems_dir / p
        return candidate if candidate.exists() else p

    def _load(self, name: str | Path, parse) -> Any:
        path = self.resolve(name)
        try:
            mtime = path.stat().st_mtime
        except OSError:
            mtime = -1.0
        hit = self._cache.get(path)
        if hit is not None and hit[0] == mtime:
            return hit[1]
        doc, digest = _read_document(path)
        try:
            parsed = parse(doc, path, digest)
        except ValidationError as ex:
            raise ValidationError(f"{path}: {ex}") from ex
        self._cache[path] = (mtime, parsed)
        return parsed

    def load_problem(self, name: str | Path) -> ProblemFile:
        return self._load(name, parse_problem)

    def load_synthesis(self, name: str | Path) -> SynthesisFile:
        return self._load(name, parse_synthesis)

    def available(self) -> List[str]:
        base = self.settings.problems_dir
        return sorted(p.name for p in base.glob("*.json")) if base.exists() else []

    def synthesis_spec(self, sf: SynthesisFile, n: int, R: float, seeds: Sequence[int]) -> SynthesisSpec:
        return SynthesisSpec(sf.p_w, sf.u_given_w, sf.v_given_uw, n, R, seeds=tuple(seeds),
                             budget=int(self.settings.soft_covering["enumeration_budget"]))
