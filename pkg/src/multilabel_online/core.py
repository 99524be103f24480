"""Core types for online games with multiple correct answers.

An instance admits a *set* of acceptable labels.  Hypotheses map instances to
label sets, the learner predicts a single label per round and suffers 0/1 loss
for predicting outside the hidden acceptable set.  Everything downstream
(dimensions, learners, adversaries) works over the types defined here.

Conventions:
  * labels, instances and hypotheses are identified by their index in the
    owning :class:`HypothesisClass`; the order in the source file is
    authoritative and fixes all deterministic tie-breaking;
  * a label set is an ``int`` bitmask over label indices (bit ``i`` set means
    label ``i`` is acceptable), which keeps membership/intersection/union at
    word speed and gives stable, order-free canonical encodings;
  * a version space is an ``int`` bitmask over hypothesis indices.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

MAX_LABELS = 64
PROB_TOL = 1e-12


# ---------------------------------------------------------------------------
# errors


class MloError(Exception):
    """Base class for all library errors."""


class ClassValidationError(MloError):
    """A class description is malformed; ``problems`` lists every violation."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class EmptyCellWarning(UserWarning):
    """A hypothesis maps some instance to the empty label set."""


class EmptyVersionSpace(MloError):
    pass


class StateBudgetExceeded(MloError):
    pass


class HorizonCapExceeded(MloError):
    pass


class DivergentDimension(MloError):
    """The set-valued dimension is unbounded (only possible when some
    hypothesis in the version space has an empty output cell)."""


class MalformedCertificate(MloError):
    pass


class RealizabilityViolated(MloError):
    pass


class ExpertBudgetExceeded(MloError):
    pass


class HorizonTooShort(MloError):
    pass


class IdentityViolation(MloError):
    """An exact algebraic identity failed; signals an implementation bug."""


class DegenerateProbability(MloError):
    pass


class ModelMismatch(MloError):
    pass


class ShapeMismatch(MloError):
    pass


class EmptyTruthSet(MloError):
    pass


class SourceNotRealizable(MloError):
    pass


# ---------------------------------------------------------------------------
# feedback models


class Model(Enum):
    """The three feedback models, ordered by information revealed."""

    UNKNOWN = "unknown"  # a single acceptable label y_t
    KNOWN = "known"      # y_t plus the learner's own mistake bit
    SET = "set"          # the full acceptable set S_t

    @staticmethod
    def parse(name: str) -> "Model":
        try:
            return Model(name.lower())
        except ValueError:
            raise MloError(f"unknown feedback model {name!r}") from None


@dataclass(frozen=True)
class UnknownFeedback:
    y: int


@dataclass(frozen=True)
class KnownFeedback:
    y: int
    b: int  # 1 iff the learner's realized prediction was a mistake


@dataclass(frozen=True)
class SetFeedback:
    S: int  # bitmask


Feedback = UnknownFeedback | KnownFeedback | SetFeedback

_FEEDBACK_TYPE = {
    Model.UNKNOWN: UnknownFeedback,
    Model.KNOWN: KnownFeedback,
    Model.SET: SetFeedback,
}


def feedback_type(model: Model) -> type:
    return _FEEDBACK_TYPE[model]


# ---------------------------------------------------------------------------
# label-set helpers (bitmask ints)


def mask_of(labels: Iterable[int]) -> int:
    m = 0
    for y in labels:
        m |= 1 << y
    return m


def labels_of(mask: int) -> tuple[int, ...]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return tuple(out)


def set_size(mask: int) -> int:
    return mask.bit_count()


def full_mask(n: int) -> int:
    return (1 << n) - 1


def iter_bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


# ---------------------------------------------------------------------------
# hypothesis classes


@dataclass(frozen=True)
class HypothesisClass:
    """A finite table of multi-label hypotheses.

    ``table[h][x]`` is the bitmask of labels hypothesis ``h`` accepts on
    instance ``x``.  Instances are immutable; share freely across threads.
    """

    label_names: tuple[str, ...]
    instance_names: tuple[str, ...]
    hypothesis_names: tuple[str, ...]
    table: tuple[tuple[int, ...], ...]

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    @property
    def n_instances(self) -> int:
        return len(self.instance_names)

    @property
    def n_hypotheses(self) -> int:
        return len(self.hypothesis_names)

    def cell(self, h: int, x: int) -> int:
        return self.table[h][x]

    def all_hypotheses(self) -> int:
        """Version space containing every hypothesis."""
        return full_mask(self.n_hypotheses)

    def label_index(self, name: str) -> int:
        return self.label_names.index(name)

    def instance_index(self, name: str) -> int:
        return self.instance_names.index(name)

    def hypothesis_index(self, name: str) -> int:
        return self.hypothesis_names.index(name)

    def to_raw(self) -> dict:
        """Canonical plain-dict form (inverse of :func:`validate_class`)."""
        return {
            "labels": list(self.label_names),
            "instances": list(self.instance_names),
            "hypotheses": {
                hname: {
                    xname: [self.label_names[y] for y in labels_of(self.table[h][x])]
                    for x, xname in enumerate(self.instance_names)
                }
                for h, hname in enumerate(self.hypothesis_names)
            },
        }


def validate_class(raw: Mapping) -> HypothesisClass:
    """Check a parsed class description and build a :class:`HypothesisClass`.

    Collects *every* violation before failing so a bad file is diagnosed in
    one pass.  Empty output cells are legal but warn: they make every
    prediction a mistake against that hypothesis.
    """
    problems: list[str] = []
    if not isinstance(raw, Mapping):
        raise ClassValidationError(["class description must be a mapping"])
    unknown_keys = set(raw) - {"labels", "instances", "hypotheses"}
    if unknown_keys:
        problems.append(f"unknown top-level keys: {sorted(unknown_keys)}")
    labels = list(raw.get("labels") or [])
    instances = list(raw.get("instances") or [])
    hypotheses = raw.get("hypotheses") or {}
    if not labels:
        problems.append("no labels given")
    if len(labels) > MAX_LABELS:
        problems.append(f"AlphabetTooLarge: {len(labels)} labels exceeds the {MAX_LABELS} cap")
    if not instances:
        problems.append("no instances given")
    if not hypotheses:
        problems.append("no hypotheses given")
    for kind, names in (("label", labels), ("instance", instances), ("hypothesis", list(hypotheses))):
        seen = set()
        for n in names:
            if n in seen:
                problems.append(f"DuplicateName: {kind} {n!r} appears twice")
            seen.add(n)
    label_idx = {n: i for i, n in enumerate(labels)}
    table: list[tuple[int, ...]] = []
    empty_cells: list[str] = []
    for hname, row in hypotheses.items():
        if not isinstance(row, Mapping):
            problems.append(f"hypothesis {hname!r} is not a mapping of instances to label lists")
            continue
        stray = set(row) - set(instances)
        if stray:
            problems.append(f"hypothesis {hname!r} references unknown instances {sorted(stray)}")
        cells = []
        for xname in instances:
            if xname not in row:
                problems.append(f"UndefinedCell: hypothesis {hname!r} omits instance {xname!r}")
                cells.append(0)
                continue
            mask = 0
            for yname in row[xname]:
                if yname not in label_idx:
                    problems.append(
                        f"UnknownLabel: hypothesis {hname!r} at {xname!r} uses {yname!r}"
                    )
                else:
                    mask |= 1 << label_idx[yname]
            if mask == 0:
                empty_cells.append(f"{hname}@{xname}")
            cells.append(mask)
        table.append(tuple(cells))
    if problems:
        raise ClassValidationError(problems)
    if empty_cells:
        warnings.warn(
            f"empty output cells ({', '.join(empty_cells)}): every prediction is a mistake "
            "against these hypotheses",
            EmptyCellWarning,
            stacklevel=2,
        )
    return HypothesisClass(
        label_names=tuple(labels),
        instance_names=tuple(instances),
        hypothesis_names=tuple(hypotheses),
        table=tuple(table),
    )


# ---------------------------------------------------------------------------
# structural predicates


def intersection_at(cls: HypothesisClass, V: int, x: int) -> int:
    """Intersection of ``h(x)`` over the version space ``V`` (bitmask)."""
    if V == 0:
        raise EmptyVersionSpace("intersection over an empty version space")
    out = full_mask(cls.n_labels)
    for h in iter_bits(V):
        out &= cls.table[h][x]
        if out == 0:
            break
    return out


def union_at(cls: HypothesisClass, V: int, x: int) -> int:
    if V == 0:
        raise EmptyVersionSpace("union over an empty version space")
    out = 0
    for h in iter_bits(V):
        out |= cls.table[h][x]
    return out


def all_points_intersect(cls: HypothesisClass, V: Optional[int] = None) -> bool:
    """True iff every instance has a label accepted by the whole version space."""
    if V is None:
        V = cls.all_hypotheses()
    if V == 0:
        raise EmptyVersionSpace("all_points_intersect over an empty version space")
    return all(intersection_at(cls, V, x) != 0 for x in range(cls.n_instances))


def check_svwm_condition(cls: HypothesisClass) -> bool:
    """True iff ``2|h'(x) \\ h(x)| <= |h(x)|`` for all hypothesis pairs and
    instances — the structural condition under which the doubling/halving
    majority learner keeps its expected total weight non-increasing."""
    for x in range(cls.n_instances):
        cells = [cls.table[h][x] for h in range(cls.n_hypotheses)]
        for a in cells:
            size_a = set_size(a)
            for b in cells:
                if 2 * set_size(b & ~a) > size_a:
                    return False
    return True


# ---------------------------------------------------------------------------
# prediction distributions


def point_mass(n_labels: int, y: int) -> np.ndarray:
    p = np.zeros(n_labels)
    p[y] = 1.0
    return p


def uniform_distribution(n_labels: int) -> np.ndarray:
    return np.full(n_labels, 1.0 / n_labels)


def check_distribution(p: np.ndarray) -> np.ndarray:
    if np.any(p < 0):
        raise DegenerateProbability(f"negative probability in {p}")
    s = float(math.fsum(p.tolist()))
    if abs(s - 1.0) > PROB_TOL:
        raise DegenerateProbability(f"probabilities sum to {s}, not 1")
    return p


# ---------------------------------------------------------------------------
# transcripts


@dataclass(frozen=True)
class RoundRecord:
    x: int
    p: tuple[float, ...]          # the learner's prediction distribution
    yhat: int                     # realized prediction
    S: int                        # hidden acceptable set (bitmask)
    y: Optional[int]              # revealed label, when the model has one
    feedback_shown: Feedback
    loss: int                     # 1 iff yhat not in S


@dataclass
class Transcript:
    model: Model
    horizon: int
    seed: int
    rounds: list[RoundRecord] = field(default_factory=list)

    @property
    def total_loss(self) -> int:
        return sum(r.loss for r in self.rounds)

    def check(self) -> None:
        """Internal consistency of every recorded round."""
        assert len(self.rounds) == self.horizon
        for r in self.rounds:
            assert r.loss == int(not ((r.S >> r.yhat) & 1))
            if self.model in (Model.UNKNOWN, Model.KNOWN):
                assert r.y is not None and (r.S >> r.y) & 1, "revealed label outside S"
            if self.model is Model.UNKNOWN:
                assert isinstance(r.feedback_shown, UnknownFeedback)
                assert r.feedback_shown.y == r.y
            elif self.model is Model.KNOWN:
                assert isinstance(r.feedback_shown, KnownFeedback)
                assert r.feedback_shown == KnownFeedback(r.y, r.loss)
            else:
                assert r.feedback_shown == SetFeedback(r.S)


def comparator_loss(cls: HypothesisClass, rounds: Sequence[RoundRecord]) -> int:
    """Best fixed hypothesis under the exact-match loss ``1[h(x_t) != S_t]``."""
    best = None
    for h in range(cls.n_hypotheses):
        tot = sum(1 for r in rounds if cls.table[h][r.x] != r.S)
        best = tot if best is None else min(best, tot)
    return 0 if best is None else best


# ---------------------------------------------------------------------------
# deterministic seed derivation

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(master: int, *parts: int | str) -> int:
    """Stable 64-bit mix of a master seed and a path of parts.

    ``derive_seed(s, "trial", i)`` is the documented per-trial seed rule: each
    part is folded in with a splitmix64 step (strings via sha256).  Fixed for
    reproducibility; identical inputs give identical seeds on every platform.
    """
    h = _splitmix64(master & _MASK64)
    for p in parts:
        if isinstance(p, str):
            p = int.from_bytes(hashlib.sha256(p.encode()).digest()[:8], "big")
        h = _splitmix64(h ^ (p & _MASK64))
    return h


def rng_from(master: int, *parts: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *parts)))
