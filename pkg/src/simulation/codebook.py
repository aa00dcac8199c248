# src/simulation/codebook.py
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Tuple

import numpy as np

from src.core.errors import ValidationError
from src.core.probability import Channel, DistortionMatrix, JointTable

# Consistency tolerance between the scheme's (X, Z) marginal and the source law.
SCHEME_TOL = 1e-9

# ----------------------------
# Keyed pseudo-random function
# ----------------------------
#
# Codewords are never stored. Symbol i of codeword (z^n, m, m0) is
#   u_i = inverse_cdf(P(U | Z = z_i), uniform(key, (m - 1) * n + i))
# with key = blake2b-64(codebook_seed, blake2b-64(z^n bytes), m0) and
#   uniform(key, c) = top 53 bits of splitmix64(key XOR splitmix64(c)) / 2^53.
# Encoder and decoder regenerate identical codewords from the same arguments.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MUL1
        z = (z ^ (z >> np.uint64(27))) * _MUL2
        return z ^ (z >> np.uint64(31))


def prf_uniforms(key: int, counters: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1), a pure function of (key, counter)."""
    mixed = _splitmix64(np.uint64(key & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(np.asarray(counters, dtype=np.uint64)))
    return (mixed >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_key(*parts: object) -> int:
    """64-bit key from an ordered tuple of ints / strings / byte strings."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        data = part if isinstance(part, bytes) else repr(part).encode("utf-8")
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


def sequence_digest(seq: Sequence[int]) -> bytes:
    return hashlib.blake2b(np.asarray(seq, dtype=np.int64).tobytes(), digest_size=8).digest()


def trial_generator(*parts: object) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by the derived key of `parts`."""
    return np.random.Generator(np.random.Philox(key=derive_key(*parts)))


def inverse_cdf(cdf_rows: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Symbol index for each uniform given the matching cumulative row."""
    k = cdf_rows.shape[-1]
    idx = (cdf_rows[..., :-1] <= uniforms[..., None]).sum(axis=-1)
    return np.minimum(idx, k - 1)


def floor_pow2(exponent: float) -> int:
    """floor(2^exponent), robust to round-off in n * R."""
    if exponent < 0:
        raise ValidationError("rate must be >= 0")
    if exponent > 1000:
        return 2 ** int(exponent)
    return max(1, int(math.floor(2.0 ** exponent + 1e-9)))


# ----------------------------
# Scheme and configuration
# ----------------------------

@dataclass(frozen=True)
class SchemeSpec:
    """
    Base joint P(x, y, z, u) = P(z) P(u|z) P(x|z,u) P(y|z,u).

    The factorization makes X and Y conditionally independent given (U, Z); the (X, Z)
    marginal must reproduce the source law p_xz.
    """
    p_xz: JointTable
    u_given_z: Channel
    x_given_zu: Channel
    y_given_zu: Channel
    d: DistortionMatrix

    def __post_init__(self) -> None:
        kx, kz = self.p_xz.dims
        ku = self.u_given_z.out_dim
        if self.u_given_z.in_dims != (kz,):
            raise ValidationError("SchemeSpec: u_given_z must be indexed by z")
        if self.x_given_zu.in_dims != (kz, ku) or self.x_given_zu.out_dim != kx:
            raise ValidationError("SchemeSpec: x_given_zu must map (z, u) to x")
        if self.y_given_zu.in_dims != (kz, ku):
            raise ValidationError("SchemeSpec: y_given_zu must map (z, u) to y")
        if self.d.shape != (kx, self.y_given_zu.out_dim):
            raise ValidationError("SchemeSpec: distortion shape does not match (x, y)")
        joint_xz = self.base_joint().sum(axis=(1, 3))
        if np.abs(joint_xz - self.p_xz.p).max() > SCHEME_TOL:
            raise ValidationError("SchemeSpec: base joint does not reproduce p_xz")

    @property
    def x_size(self) -> int:
        return self.p_xz.dims[0]

    @property
    def z_size(self) -> int:
        return self.p_xz.dims[1]

    @property
    def u_size(self) -> int:
        return self.u_given_z.out_dim

    @property
    def y_size(self) -> int:
        return self.y_given_zu.out_dim

    @property
    def p_z(self) -> np.ndarray:
        return self.p_xz.p.sum(axis=0)

    def base_joint(self) -> np.ndarray:
        """P(x, y, z, u) as an array with axes (x, y, z, u)."""
        pz = self.p_xz.p.sum(axis=0)
        pu = self.u_given_z.p                      # (z, u)
        px = self.x_given_zu.p                     # (z, u, x)
        py = self.y_given_zu.p                     # (z, u, y)
        return np.einsum("z,zu,zux,zuy->xyzu", pz, pu, px, py)


def scheme_from_channel(p_xz: JointTable, channel: Channel, d: DistortionMatrix) -> SchemeSpec:
    """Factor a solver channel W(y|x,z) with U = Y: P(u|z) = P(y|z), P(x|z,u) = posterior, Y = U."""
    w = np.nan_to_num(channel.p)                               # (x, z, y)
    joint = p_xz.p[..., None] * w                              # (x, z, y)
    pzy = joint.sum(axis=0)                                    # (z, y)
    pz = pzy.sum(axis=1, keepdims=True)
    ky = w.shape[-1]
    kx = w.shape[0]
    u_given_z = np.where(pz > 0, pzy / np.where(pz > 0, pz, 1.0), 1.0 / ky)
    post = np.transpose(joint, (1, 2, 0))                      # (z, u=y, x)
    mass = post.sum(axis=-1, keepdims=True)
    x_given_zu = np.where(mass > 0, post / np.where(mass > 0, mass, 1.0), 1.0 / kx)
    y_given_zu = np.broadcast_to(np.eye(ky)[None, :, :], (pzy.shape[0], ky, ky)).copy()
    return SchemeSpec(p_xz, Channel.from_rows(u_given_z), Channel.from_rows(x_given_zu),
                      Channel(y_given_zu), d)


@dataclass(frozen=True)
class CodeConfig:
    n: int
    R: float
    R0: float = 0.0
    master_seed: int = 0
    trials: int = 100

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValidationError("CodeConfig: n must be >= 1")
        if self.R < 0 or self.R0 < 0:
            raise ValidationError("CodeConfig: rates must be >= 0")
        if self.trials < 0:
            raise ValidationError("CodeConfig: trials must be >= 0")

    @property
    def message_count(self) -> int:
        return floor_pow2(self.n * self.R)

    @property
    def randomness_count(self) -> int:
        return floor_pow2(self.n * self.R0)


# ----------------------------
# Lazily generated codebook
# ----------------------------

@dataclass(frozen=True)
class Codebook:
    """
    Random codebook u^n(z^n, m, m0) ~ prod P(u_i | z_i), indexed by m in 1..M and
    m0 in 1..M0, regenerated on demand from the keyed PRF.
    """
    scheme: SchemeSpec
    config: CodeConfig
    codebook_seed: int = 0
    _u_cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_u_cdf", np.cumsum(self.scheme.u_given_z.p, axis=-1))

    @property
    def n(self) -> int:
        return self.config.n

    def check_indices(self, m: int, m0: int) -> None:
        if not 1 <= m <= self.config.message_count:
            raise ValidationError(f"message index {m} outside 1..{self.config.message_count}")
        if not 1 <= m0 <= self.config.randomness_count:
            raise ValidationError(f"common randomness {m0} outside 1..{self.config.randomness_count}")

    def check_sequence(self, seq: Sequence[int], k: int, what: str) -> np.ndarray:
        arr = np.asarray(seq, dtype=np.int64)
        if arr.shape != (self.n,):
            raise ValidationError(f"{what}: expected length {self.n}")
        if arr.min() < 0 or arr.max() >= k:
            raise ValidationError(f"{what}: symbol outside alphabet of size {k}")
        return arr

    def block(self, z: np.ndarray, m0: int, start: int, stop: int) -> np.ndarray:
        """Codewords for messages start..stop-1 (1-based), shape (stop - start, n)."""
        n = self.n
        key = derive_key(self.codebook_seed, sequence_digest(z), m0)
        rows = np.arange(start - 1, stop - 1, dtype=np.uint64)
        counters = rows[:, None] * np.uint64(n) + np.arange(n, dtype=np.uint64)[None, :]
        u = prf_uniforms(key, counters)
        return inverse_cdf(self._u_cdf[z][None, :, :], u)

    def blocks(self, z: np.ndarray, m0: int, chunk: int = 65536) -> Iterator[Tuple[int, np.ndarray]]:
        total = self.config.message_count
        for start in range(1, total + 1, chunk):
            stop = min(total + 1, start + chunk)
            yield start, self.block(z, m0, start, stop)


def codeword(cb: Codebook, z: Sequence[int], m: int, m0: int) -> np.ndarray:
    """u^n(z^n, m, m0); identical for every caller with the same arguments."""
    zz = cb.check_sequence(z, cb.scheme.z_size, "codeword z^n")
    cb.check_indices(m, m0)
    return cb.block(zz, m0, m, m + 1)[0]
