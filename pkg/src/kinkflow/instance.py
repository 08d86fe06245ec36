"""Random ferromagnetic chains and their block-spin embeddings.

A logical chain of ``N`` spins carries couplings ``J_1..J_{N-1}``. Embedding
replaces each logical spin by a block of ``M`` physical spins; inside block
``i`` every bond has strength ``K_i``, and the bond joining block ``i-1`` to
block ``i`` sits at physical position ``M*i`` and carries ``J_i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    ConstraintViolationError,
    InvalidSizeError,
    RGValidityError,
    SingularCouplingError,
    ValidationError,
)

FORMAT_VERSION = 1


class DisorderKind(str, Enum):
    UNIFORM_STRONG = "uniform_strong"
    UNIFORM_SCALED = "uniform_scaled"


class EmbeddingKind(str, Enum):
    NONE = "none"
    CANONICAL = "canonical"
    BALANCED = "balanced"


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``seed`` and an optional sub-key path.

    Streams with distinct keys are independent, so ensemble members can be
    drawn in any order (or in parallel) without changing their values.
    """
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *(int(k) for k in key)])
    return np.random.Generator(np.random.Philox(ss))


def instance_seed(ensemble_seed: int, index: int) -> int:
    """64-bit seed of the ``index``-th member of an ensemble."""
    ss = np.random.SeedSequence([int(ensemble_seed) & (2**64 - 1), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class DisorderSpec:
    kind: DisorderKind
    j_min: float
    j_max: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.j_min < self.j_max:
            raise ValidationError(f"need 0 <= j_min < j_max, got [{self.j_min}, {self.j_max}]")

    @classmethod
    def strong(cls, seed: int) -> DisorderSpec:
        return cls(DisorderKind.UNIFORM_STRONG, 0.0, 1.0, seed)

    @classmethod
    def scaled(cls, m: int, seed: int) -> DisorderSpec:
        if m < 2:
            raise InvalidSizeError(f"block size must be >= 2, got {m}")
        return cls(DisorderKind.UNIFORM_SCALED, 1.0 / m, 1.0, seed)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ChainInstance:
    """Physical coupling sequence plus the logical data it was built from."""

    n_logical: int
    block_size: int
    couplings: np.ndarray
    logical_couplings: np.ndarray
    block_couplings: np.ndarray = field(default_factory=lambda: _frozen([]))
    rescale_factor: float = 1.0
    embedding_kind: EmbeddingKind = EmbeddingKind.NONE
    seed: int | None = None

    def __post_init__(self):
        for name in ("couplings", "logical_couplings", "block_couplings"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "embedding_kind", EmbeddingKind(self.embedding_kind))
        n, m = self.n_logical, self.block_size
        if n < 2 or m < 1:
            raise InvalidSizeError(f"invalid chain size N={n}, M={m}")
        if len(self.couplings) != n * m - 1:
            raise ValidationError(f"expected {n * m - 1} couplings, got {len(self.couplings)}")
        if len(self.logical_couplings) != n - 1:
            raise ValidationError("logical coupling count must be N-1")
        if np.any(self.couplings <= 0):
            raise ValidationError("couplings must be strictly positive (ferromagnetic)")

    @property
    def n_spins(self) -> int:
        return self.n_logical * self.block_size

    def __eq__(self, other):
        if not isinstance(other, ChainInstance):
            return NotImplemented
        return (
            self.n_logical == other.n_logical
            and self.block_size == other.block_size
            and self.embedding_kind == other.embedding_kind
            and self.seed == other.seed
            and self.rescale_factor == other.rescale_factor
            and np.array_equal(self.couplings, other.couplings)
            and np.array_equal(self.logical_couplings, other.logical_couplings)
            and np.array_equal(self.block_couplings, other.block_couplings)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "n_logical": self.n_logical,
            "block_size": self.block_size,
            "embedding_kind": self.embedding_kind.value,
            "seed": self.seed,
            "logical_couplings": [float(x) for x in self.logical_couplings],
            "block_couplings": [float(x) for x in self.block_couplings],
            "couplings": [float(x) for x in self.couplings],
            "rescale_factor": float(self.rescale_factor),
        }

    @classmethod
    def from_dict(cls, data: dict) -> ChainInstance:
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported instance format_version {version!r}")
        return cls(
            n_logical=int(data["n_logical"]),
            block_size=int(data["block_size"]),
            couplings=data["couplings"],
            logical_couplings=data["logical_couplings"],
            block_couplings=data["block_couplings"],
            rescale_factor=float(data["rescale_factor"]),
            embedding_kind=data["embedding_kind"],
            seed=data["seed"],
        )


def save_instance(inst: ChainInstance, path: str | Path) -> None:
    # json writes floats via repr(), which round-trips binary64 exactly
    Path(path).write_text(json.dumps(inst.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_instance(path: str | Path) -> ChainInstance:
    return ChainInstance.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def sample_logical(n: int, spec: DisorderSpec) -> ChainInstance:
    """Draw ``n - 1`` i.i.d. couplings uniform on ``[j_min, j_max]``."""
    if n < 2:
        raise InvalidSizeError(f"chain needs at least 2 spins, got {n}")
    rng = make_rng(spec.seed)
    u = rng.random(n - 1)
    j = spec.j_min + (spec.j_max - spec.j_min) * u
    if np.any(j <= 0):  # U[0,1) can return exactly 0
        j = np.where(j > 0, j, np.nextafter(0.0, 1.0))
    return ChainInstance(n, 1, j, j, seed=spec.seed)


def uniform_chain(n: int, j: float = 1.0) -> ChainInstance:
    """Clean chain with every coupling equal to ``j``."""
    couplings = np.full(n - 1, float(j))
    return ChainInstance(n, 1, couplings, couplings)


def layout(logical_couplings, block_couplings, m: int) -> np.ndarray:
    """Interleave inter-block ``J`` and intra-block ``K`` into a physical sequence.

    Physical bond ``k`` (1-based) joins spins ``k-1`` and ``k``; stored at index ``k-1``.
    """
    j = np.asarray(logical_couplings, dtype=float)
    k = np.asarray(block_couplings, dtype=float)
    n = len(k)
    out = np.repeat(k, m)[:-1].copy()
    out[m - 1 :: m] = j
    assert len(out) == n * m - 1
    return out


def decompose(couplings, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`layout`; returns ``(J, K)``."""
    c = np.asarray(couplings, dtype=float)
    n = (len(c) + 1) // m
    j = c[m - 1 :: m].copy()
    padded = np.append(c, np.nan).reshape(n, m)
    intra = padded[:, : m - 1]
    if not np.all(intra == intra[:, :1]):
        raise ValidationError("intra-block couplings are not uniform within each block")
    return j, intra[:, 0].copy()


def check_dominance(j, k) -> None:
    """Raise unless ``min K > max J`` so no intra-block bond breaks in a local minimum."""
    if np.min(k) <= np.max(j):
        raise ConstraintViolationError(
            f"embedding constraint min K > max J violated: min K = {np.min(k):.17g}, "
            f"max J = {np.max(j):.17g}"
        )


def _check_block_size(m: int) -> None:
    if m < 2:
        raise InvalidSizeError(f"block size must be >= 2, got {m}")


def embed_canonical(logical: ChainInstance, m: int) -> ChainInstance:
    _check_block_size(m)
    j = logical.logical_couplings
    k = np.ones(logical.n_logical)
    check_dominance(j, k)
    return ChainInstance(
        logical.n_logical, m, layout(j, k, m), j, k,
        rescale_factor=logical.rescale_factor,
        embedding_kind=EmbeddingKind.CANONICAL,
        seed=logical.seed,
    )


def balanced_constant(m: int) -> float:
    """Prefactor that makes the largest balanced coupling at most 1."""
    return m ** (-m / (m - 1) ** 2)


def balanced_downscale(m: int) -> float:
    """Factor mapping logical couplings in ``[1/M, 1]`` into the programmable range."""
    return m ** (-1.0 / (m - 1))


def balanced_block_couplings(j, m: int, c: float, edge_exponent: float | None = None) -> np.ndarray:
    """Intra-block couplings that equalise the renormalised block fields.

    Bulk blocks get ``c * (J_i J_{i+1})^(-1/(2(M-1)))``; the two end blocks see a
    single neighbour and use ``c * J^edge_exponent`` (default ``-1/(M+1)``).
    """
    j = np.asarray(j, dtype=float)
    if edge_exponent is None:
        edge_exponent = -1.0 / (m + 1)
    k = np.empty(len(j) + 1)
    k[1:-1] = c * (j[:-1] * j[1:]) ** (-1.0 / (2 * (m - 1)))
    k[0] = c * j[0] ** edge_exponent
    k[-1] = c * j[-1] ** edge_exponent
    return k


def embed_balanced(
    logical: ChainInstance,
    m: int,
    c: float = 1.0,
    apply_rescale: bool = False,
    edge_exponent: float | None = None,
) -> ChainInstance:
    """Embed with the balanced ansatz for the intra-block couplings.

    With ``apply_rescale`` the logical couplings are first multiplied by
    ``M^(-1/(M-1))`` and ``c`` is replaced by ``M^(-M/(M-1)^2)``; for inputs in
    ``[1/M, 1]`` every bulk coupling then lies in ``(0, 1]``.
    """
    _check_block_size(m)
    j = np.array(logical.logical_couplings, dtype=float)
    if np.any(j <= 0):
        raise SingularCouplingError("balanced embedding needs strictly positive J")
    factor = logical.rescale_factor
    if apply_rescale:
        lam = balanced_downscale(m)
        j = j * lam
        factor *= lam
        c = balanced_constant(m)
    k = balanced_block_couplings(j, m, c, edge_exponent)
    check_dominance(j, k)
    return ChainInstance(
        logical.n_logical, m, layout(j, k, m), j, k,
        rescale_factor=factor,
        embedding_kind=EmbeddingKind.BALANCED,
        seed=logical.seed,
    )


def renormalized_fields(emb: ChainInstance, gamma_bare: float) -> np.ndarray:
    """Effective transverse field on each block after decimating its intra-block bonds."""
    m = emb.block_size
    if m == 1:
        return np.full(emb.n_logical, float(gamma_bare))
    k = emb.block_couplings
    if gamma_bare >= np.min(k):
        raise RGValidityError(
            f"bare field {gamma_bare} must be below min K = {np.min(k)} for block decimation"
        )
    return gamma_bare**m / k ** (m - 1)


def rescale(inst: ChainInstance, lam: float) -> ChainInstance:
    if not lam > 0:
        raise ValidationError(f"rescale factor must be positive, got {lam}")
    return replace(
        inst,
        couplings=inst.couplings * lam,
        logical_couplings=inst.logical_couplings * lam,
        block_couplings=inst.block_couplings * lam,
        rescale_factor=inst.rescale_factor * lam,
    )


def gamma_from_s(s: float) -> float:
    """Transverse field measured in units of the coupling scale: ``(1-s)/s``."""
    return (1.0 - s) / s


def s_from_gamma(gamma: float) -> float:
    return 1.0 / (1.0 + gamma)


def build_instance(
    n: int,
    seed: int,
    disorder: str = "strong",
    embedding: str = "none",
    m: int = 1,
    edge_exponent: float | None = None,
) -> ChainInstance:
    """Sample a logical chain from ``seed`` and optionally embed it.

    ``disorder`` is ``strong`` (J in [0,1]), ``scaled`` (J in [1/M,1]) or
    ``uniform`` (all J = 1). The same seed gives the same logical couplings
    under every embedding choice.
    """
    if disorder == "uniform":
        logical = uniform_chain(n)
    elif disorder == "strong":
        logical = sample_logical(n, DisorderSpec.strong(seed))
    elif disorder == "scaled":
        logical = sample_logical(n, DisorderSpec.scaled(m, seed))
    else:
        raise ValidationError(f"unknown disorder {disorder!r}")
    if embedding == "none":
        return logical
    if embedding == "canonical":
        return embed_canonical(logical, m)
    if embedding == "balanced":
        return embed_balanced(logical, m, apply_rescale=True, edge_exponent=edge_exponent)
    raise ValidationError(f"unknown embedding {embedding!r}")


def build_ensemble_instance(
    n: int,
    ensemble_seed: int,
    index: int,
    disorder: str = "strong",
    embedding: str = "none",
    m: int = 1,
    edge_exponent: float | None = None,
) -> ChainInstance:
    """Construct one ensemble member from its ``(ensemble_seed, index)`` substream."""
    return build_instance(n, instance_seed(ensemble_seed, index), disorder, embedding, m, edge_exponent)


def edge_exponent_variant(name: str, m: int) -> float | None:
    """Resolve the edge-exponent config value: ``m+1`` (default) or ``m-1``."""
    if name in (None, "m+1"):
        return None
    if name == "m-1":
        return -1.0 / (m - 1)
    try:
        return float(name)
    except ValueError:
        raise ValidationError(f"unknown edge exponent {name!r}") from None


__all__ = [
    "AnnealSchedule",
    "ChainInstance",
    "DisorderKind",
    "DisorderSpec",
    "EmbeddingKind",
    "balanced_constant",
    "balanced_downscale",
    "build_ensemble_instance",
    "build_instance",
    "check_dominance",
    "decompose",
    "embed_balanced",
    "edge_exponent_variant",
    "embed_canonical",
    "gamma_from_s",
    "instance_seed",
    "layout",
    "load_instance",
    "make_rng",
    "renormalized_fields",
    "rescale",
    "sample_logical",
    "s_from_gamma",
    "save_instance",
    "uniform_chain",
]


@dataclass(frozen=True)
class AnnealSchedule:
    """Linear sweep ``A(s) = 1 - s``, ``B(s) = s`` with ``s = t / T``."""

    total_time: float

    def __post_init__(self):
        if not self.total_time > 0:
            raise ValidationError(f"anneal time must be positive, got {self.total_time}")

    def s(self, t: float) -> float:
        return t / self.total_time
