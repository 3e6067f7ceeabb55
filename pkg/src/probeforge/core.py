"""Domain types shared by all modules, plus dataset assembly and validation.

A *chip* is one fixed-size image tile; each chip carries per-class cover
fractions and a mean elevation. An *embedding set* is a row-aligned matrix
of fixed-dimension vectors produced upstream by a frozen encoder model; we
never run the encoder here, embeddings are inputs. ``assemble_dataset``
joins the two by chip id so downstream stages can index rows positionally.

Core types are passive records: structural problems (wrong key sets, shape
mismatches, duplicate ids) fail at construction, while value-level problems
(fractions out of range, non-finite entries) are data and are reported by
``validate_dataset`` instead of raised.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AlignmentError

logger = logging.getLogger(__name__)

#: Tolerance on the per-chip sum of the seven class fractions. Fractions come
#: from integer pixel counts over the chip grid, so the exact sum never
#: exceeds 1; the slack only absorbs float round-trips.
FRACTION_SUM_TOL = 1e-9


class ClassId(IntEnum):
    """The seven land-cover regression targets, with stable integer codes."""

    TREE_COVER = 0
    SHRUBLAND = 1
    GRASSLAND = 2
    CROPLAND = 3
    BUILTUP = 4
    BARE_SPARSE_VEGETATION = 5
    PERMANENT_WATER = 6

    @property
    def label(self) -> str:
        return _CLASS_LABELS[self.value]

    @classmethod
    def from_label(cls, label: str) -> "ClassId":
        try:
            return _LABEL_TO_CLASS[label]
        except KeyError:
            raise ValueError(f"unknown class label: {label!r}") from None


_CLASS_LABELS = (
    "tree-cover",
    "shrubland",
    "grassland",
    "cropland",
    "builtup",
    "bare-sparse-vegetation",
    "permanent-water",
)
_LABEL_TO_CLASS = {lbl: ClassId(i) for i, lbl in enumerate(_CLASS_LABELS)}

CLASS_LABELS: tuple[str, ...] = _CLASS_LABELS
N_CLASSES = len(CLASS_LABELS)


class Modality(str, Enum):
    """Input sensor family an embedding model consumes."""

    S1 = "S1"
    S2 = "S2"


@dataclass(frozen=True)
class FMDescriptor:
    """Identity and shape of one upstream embedding model."""

    fm_id: str
    modality: Modality
    dim: int

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValueError(f"embedding dim must be positive, got {self.dim}")


@dataclass(frozen=True)
class Chip:
    """One tile: identity, location, per-class cover fractions, elevation.

    ``fractions`` must have exactly the seven :class:`ClassId` keys. Values
    are accepted as-is; range and finiteness are checked by
    :func:`validate_dataset`.
    """

    chip_id: str
    aoi: str
    lon: float
    lat: float
    fractions: Mapping[ClassId, float]
    elevation_m: float

    def __post_init__(self) -> None:
        fr = {ClassId(k): float(v) for k, v in self.fractions.items()}
        if set(fr) != set(ClassId):
            missing = sorted(c.label for c in set(ClassId) - set(fr))
            raise ValueError(
                f"chip {self.chip_id!r}: fractions must cover all seven classes"
                f" (missing: {missing})"
            )
        object.__setattr__(self, "fractions", fr)

    def fraction_vector(self) -> np.ndarray:
        """Fractions as a length-7 float array in class-code order."""
        return np.array([self.fractions[c] for c in ClassId], dtype=np.float64)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmbeddingSet:
    """Row-aligned embedding matrix for one model over one chip collection.

    The matrix is stored read-only; row ``i`` belongs to ``chip_ids[i]``.
    Non-finite entries are representable (validation reports them) but the
    file loader in :mod:`probeforge.ingest` refuses to produce them.
    """

    fm: FMDescriptor
    chip_ids: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        ids = tuple(self.chip_ids)
        m = np.asarray(self.matrix)
        if m.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {m.shape}")
        if m.shape[0] != len(ids):
            raise ValueError(
                f"row count {m.shape[0]} does not match {len(ids)} chip ids"
            )
        if m.shape[1] != self.fm.dim:
            raise ValueError(
                f"matrix width {m.shape[1]} does not match fm dim {self.fm.dim}"
            )
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate chip_id in embedding index")
        object.__setattr__(self, "chip_ids", ids)
        object.__setattr__(self, "matrix", _readonly(m))

    def __len__(self) -> int:
        return len(self.chip_ids)


@dataclass(frozen=True)
class ChipTable:
    """Ordered chip collection with a chip_id -> position index."""

    chips: tuple[Chip, ...]
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        chips = tuple(self.chips)
        idx = {c.chip_id: i for i, c in enumerate(chips)}
        if len(idx) != len(chips):
            seen: set[str] = set()
            for c in chips:
                if c.chip_id in seen:
                    raise ValueError(f"duplicate chip_id: {c.chip_id!r}")
                seen.add(c.chip_id)
        object.__setattr__(self, "chips", chips)
        object.__setattr__(self, "index", idx)

    def __len__(self) -> int:
        return len(self.chips)

    def __iter__(self):
        return iter(self.chips)

    def get(self, chip_id: str) -> Chip:
        return self.chips[self.index[chip_id]]


@dataclass(frozen=True)
class Dataset:
    """Chips joined to their embedding rows, with positional accessors.

    Row ``i`` of ``matrix``, ``fractions`` and ``elevations`` all describe
    ``chips[i]``. ``fractions`` has one column per :class:`ClassId` in code
    order. Everything is immutable; samplers and the runner address rows by
    position.
    """

    fm: FMDescriptor
    chips: tuple[Chip, ...]
    matrix: np.ndarray
    fractions: np.ndarray
    elevations: np.ndarray
    dropped_table_only: int = 0
    dropped_embedding_only: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "chips", tuple(self.chips))
        if self.matrix.shape != (len(self.chips), self.fm.dim):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match "
                f"({len(self.chips)}, {self.fm.dim})"
            )
        object.__setattr__(self, "matrix", _readonly(self.matrix))
        object.__setattr__(self, "fractions", _readonly(self.fractions))
        object.__setattr__(self, "elevations", _readonly(self.elevations))

    def __len__(self) -> int:
        return len(self.chips)

    @property
    def chip_ids(self) -> tuple[str, ...]:
        return tuple(c.chip_id for c in self.chips)

    @property
    def aois(self) -> tuple[str, ...]:
        return tuple(c.aoi for c in self.chips)

    def subset(self, positions: Sequence[int] | np.ndarray) -> "Dataset":
        pos = np.asarray(positions, dtype=np.intp)
        return Dataset(
            fm=self.fm,
            chips=tuple(self.chips[int(i)] for i in pos),
            matrix=self.matrix[pos],
            fractions=self.fractions[pos],
            elevations=self.elevations[pos],
        )

    def positions_for_aoi(self, aoi: str) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.chips) if c.aoi == aoi], dtype=np.intp
        )

    def by_aoi(self) -> dict[str, "Dataset"]:
        """Split into one Dataset per AOI label, preserving row order."""
        order: list[str] = []
        for c in self.chips:
            if c.aoi not in order:
                order.append(c.aoi)
        return {a: self.subset(self.positions_for_aoi(a)) for a in order}


def assemble_dataset(table: ChipTable, emb: EmbeddingSet) -> Dataset:
    """Join chips to embedding rows by chip_id.

    The result covers the intersection in table order; records present on
    only one side are counted and logged, never fatal. An empty intersection
    or an embedding width that contradicts the declared model dim raises
    :class:`AlignmentError`.
    """
    if emb.matrix.shape[1] != emb.fm.dim:
        raise AlignmentError(
            f"embedding dim {emb.matrix.shape[1]} does not match "
            f"fm {emb.fm.fm_id!r} dim {emb.fm.dim}"
        )
    row_of = {cid: i for i, cid in enumerate(emb.chip_ids)}
    kept = [(chip, row_of[chip.chip_id]) for chip in table if chip.chip_id in row_of]
    if not kept:
        raise AlignmentError("no aligned chips")

    dropped_table = len(table) - len(kept)
    dropped_emb = len(emb) - len(kept)
    if dropped_table or dropped_emb:
        logger.info(
            "join for fm %s dropped %d table-only and %d embedding-only records",
            emb.fm.fm_id,
            dropped_table,
            dropped_emb,
        )

    chips = tuple(chip for chip, _ in kept)
    rows = np.array([row for _, row in kept], dtype=np.intp)
    return Dataset(
        fm=emb.fm,
        chips=chips,
        matrix=emb.matrix[rows],
        fractions=np.stack([c.fraction_vector() for c in chips]),
        elevations=np.array([c.elevation_m for c in chips], dtype=np.float64),
        dropped_table_only=dropped_table,
        dropped_embedding_only=dropped_emb,
    )


@dataclass(frozen=True)
class Violation:
    """One invariant breach, addressable by chip and rule name."""

    chip_id: str
    rule: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    n_chips: int

    @property
    def valid(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        lines = [f"checked {self.n_chips} chips: "
                 f"{'OK' if self.valid else f'{len(self.violations)} violation(s)'}"]
        for v in self.violations:
            detail = f" ({v.detail})" if v.detail else ""
            lines.append(f"  {v.chip_id}: {v.rule}{detail}")
        return "\n".join(lines)


RULE_FRACTION_RANGE = "fraction out of range"
RULE_FRACTION_SUM = "fraction sum exceeds 1"
RULE_ELEVATION = "non-finite elevation"
RULE_EMBEDDING = "non-finite embedding"


def validate_dataset(ds: Dataset) -> ValidationReport:
    """Check every chip- and embedding-level value invariant.

    Violations are data, not errors: the report lists each offending chip
    with a stable rule name and the ``valid`` flag is true iff none exist.
    """
    violations: list[Violation] = []
    row_finite = np.isfinite(ds.matrix).all(axis=1)
    for i, chip in enumerate(ds.chips):
        for c in ClassId:
            f = chip.fractions[c]
            if not (np.isfinite(f) and 0.0 <= f <= 1.0):
                violations.append(
                    Violation(chip.chip_id, RULE_FRACTION_RANGE, f"{c.label}={f!r}")
                )
        total = float(sum(chip.fractions.values()))
        if np.isfinite(total) and total > 1.0 + FRACTION_SUM_TOL:
            violations.append(
                Violation(chip.chip_id, RULE_FRACTION_SUM, f"sum={total!r}")
            )
        if not np.isfinite(chip.elevation_m):
            violations.append(
                Violation(chip.chip_id, RULE_ELEVATION, f"elevation_m={chip.elevation_m!r}")
            )
        if not row_finite[i]:
            violations.append(Violation(chip.chip_id, RULE_EMBEDDING))
    return ValidationReport(violations=tuple(violations), n_chips=len(ds))


def infer_modality(fm_id: str) -> Modality | None:
    """Guess the sensor family from an fm id like ``s1-foo`` or ``x-s2-bar``.

    Returns None when neither an ``s1`` nor an ``s2`` token appears.
    """
    tokens = [t for t in _tokenize(fm_id.lower())]
    if "s1" in tokens:
        return Modality.S1
    if "s2" in tokens:
        return Modality.S2
    return None


def _tokenize(s: str) -> Iterable[str]:
    buf = ""
    for ch in s:
        if ch.isalnum():
            buf += ch
        else:
            if buf:
                yield buf
            buf = ""
    if buf:
        yield buf
