"""Exact dimensions of the three feedback-model games, with certificates.

For a version space V the engine computes the value of the adversarial
shattering game:

  * set-valued (``lds``):      children  V[S,yhat] = {h in V : h(x)=S, yhat not in h(x)}
  * mistake-known (``ldk``):   children  V[y,yhat] = {h in V : y in h(x), yhat not in h(x)}
  * mistake-unknown (``ldu``): children  (V[y], mu + [yhat not in h(x)]),  V[y] = {h : y in h(x)}

Values are the least fixpoint of the monotone one-step backup; null moves
(children equal to the current state) are resolved in closed form rather than
by iteration:

  * an instance whose version-space intersection is nonempty never helps the
    adversary (the learner predicts inside the intersection), so only
    instances with empty intersection are searched — at those, every child is
    a strict sub-state and plain memoized recursion terminates;
  * the one genuinely divergent configuration is a set-valued state whose
    members all share the same *empty* output cell (every prediction is a
    mistake and the state never changes); this surfaces as
    :class:`DivergentDimension` and can only occur with empty cells.

``brute_force_dimension`` is an independent oracle: synchronous value
iteration of the raw backup (no null-move analysis, no instance pruning) over
the reachable state graph, stopped when one more sweep changes nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

from .core import (
    DivergentDimension,
    EmptyVersionSpace,
    HorizonCapExceeded,
    HypothesisClass,
    MalformedCertificate,
    Model,
    StateBudgetExceeded,
    full_mask,
    iter_bits,
)

DEFAULT_STATE_BUDGET = 5_000_000

_INF = math.inf


def _as_mask(cls: HypothesisClass, V) -> int:
    if V is None:
        return cls.all_hypotheses()
    if isinstance(V, int):
        mask = V
    else:
        mask = 0
        for h in V:
            mask |= 1 << h
    if mask == 0:
        raise EmptyVersionSpace("version space is empty")
    if mask >> cls.n_hypotheses:
        raise EmptyVersionSpace("version space references hypotheses outside the class")
    return mask


def _as_offsets(cls: HypothesisClass, V: int, offsets) -> dict[int, int]:
    members = list(iter_bits(V))
    if offsets is None:
        return {h: 0 for h in members}
    if isinstance(offsets, Mapping):
        out = {h: int(offsets.get(h, 0)) for h in members}
    else:
        seq = list(offsets)
        out = {h: int(seq[h]) for h in members}
    if any(v < 0 for v in out.values()):
        raise ValueError("offsets must be non-negative")
    return out


class DimensionEngine:
    """Shared, memoized dimension computations for one hypothesis class.

    The memo tables persist for the lifetime of the engine; learners that
    issue many queries per round share one engine per class (see
    :func:`engine_for`).
    """

    def __init__(self, cls: HypothesisClass, max_states: int = DEFAULT_STATE_BUDGET):
        self.cls = cls
        self.max_states = max_states
        n_y, n_x, n_h = cls.n_labels, cls.n_instances, cls.n_hypotheses
        # members_by_y[x][y]: hypotheses accepting label y at x
        self._members = [
            [sum(1 << h for h in range(n_h) if (cls.table[h][x] >> y) & 1) for y in range(n_y)]
            for x in range(n_x)
        ]
        self._lds_memo: dict[int, float] = {}
        self._ldk_memo: dict[int, float] = {}
        self._ldu_memo: dict[tuple, int] = {}
        self._budget_used = 0

    # -- public API ---------------------------------------------------------

    def lds(self, V=None) -> int:
        val = self._lds(_as_mask(self.cls, V))
        if val is _INF or val == _INF:
            raise DivergentDimension(
                "set-valued dimension is unbounded: some hypothesis in the version "
                "space has an empty output cell"
            )
        return int(val)

    def ldk(self, V=None) -> int:
        return int(self._ldk(_as_mask(self.cls, V)))

    def ldu(self, V=None, offsets=None) -> int:
        mask = _as_mask(self.cls, V)
        mu = _as_offsets(self.cls, mask, offsets)
        return self._ldu(mask, mu)

    # -- bookkeeping ---------------------------------------------------------

    def _charge(self) -> None:
        self._budget_used += 1
        if self._budget_used > self.max_states:
            raise StateBudgetExceeded(
                f"dimension engine exceeded {self.max_states} memo states"
            )

    def _active_instances(self, V: int) -> list[int]:
        """Instances where the version space has empty intersection.

        Elsewhere the learner can predict a label every member accepts, which
        zeroes the game value of that instance.
        """
        cls = self.cls
        out = []
        for x in range(cls.n_instances):
            inter = full_mask(cls.n_labels)
            for h in iter_bits(V):
                inter &= cls.table[h][x]
                if inter == 0:
                    break
            if inter == 0:
                out.append(x)
        return out

    # -- set-valued ----------------------------------------------------------

    def _lds(self, V: int) -> float:
        memo = self._lds_memo
        got = memo.get(V)
        if got is not None:
            return got
        self._charge()
        cls = self.cls
        best: float = 0
        for x in self._active_instances(V):
            groups: dict[int, int] = {}
            for h in iter_bits(V):
                s = cls.table[h][x]
                groups[s] = groups.get(s, 0) | (1 << h)
            if len(groups) == 1:
                # constant at x with empty intersection => the common cell is
                # empty: every prediction errs and the state never changes
                best = _INF
                break
            term: float = _INF
            for yhat in range(cls.n_labels):
                edge: float = 0
                for s, sub in groups.items():
                    if not (s >> yhat) & 1:
                        edge = max(edge, 1 + self._lds(sub))
                term = min(term, edge)
                if term == 0:
                    break
            best = max(best, term)
        memo[V] = best
        return best

    # -- mistake-known -------------------------------------------------------

    def _ldk(self, V: int) -> int:
        memo = self._ldk_memo
        got = memo.get(V)
        if got is not None:
            return got
        self._charge()
        cls = self.cls
        best = 0
        for x in self._active_instances(V):
            members = self._members[x]
            term: float = _INF
            for yhat in range(cls.n_labels):
                miss = V & ~members[yhat]
                edge = 0
                for y in range(cls.n_labels):
                    child = miss & members[y]
                    if child:
                        edge = max(edge, 1 + self._ldk(child))
                term = min(term, edge)
                if term == 0:
                    break
            best = max(best, int(term))
        memo[V] = best
        return best

    # -- mistake-unknown -----------------------------------------------------

    def _ldu_key(self, V: int, mu: dict[int, int]) -> tuple:
        """Canonical (shift-normalized, floor-clamped) state key.

        The value shifts by exactly c when every offset shifts by c, and
        offsets more than |V| below the maximum can never set the value
        (a member gains at most one mistake per remaining round and the game
        on V lasts at most |V|-1 rounds beyond the best offset).
        """
        members = list(iter_bits(V))
        top = max(mu[h] for h in members)
        floor = max(0, top - len(members))
        key = (V, tuple(mu[h] - floor for h in members))
        return key, floor

    def _ldu(self, V: int, mu: dict[int, int]) -> int:
        key, base = self._ldu_key(V, mu)
        got = self._ldu_memo.get(key)
        if got is not None:
            return got + base
        self._charge()
        cls = self.cls
        norm = {h: mu[h] - base for h in iter_bits(V)}
        best = max(norm.values())
        for x in self._active_instances(V):
            members = self._members[x]
            valid_y = [y for y in range(cls.n_labels) if V & members[y]]
            if not valid_y:
                continue
            term: float = _INF
            for yhat in range(cls.n_labels):
                bump = V & ~members[yhat]
                edge = 0
                for y in valid_y:
                    child = V & members[y]
                    child_mu = {
                        h: norm[h] + ((bump >> h) & 1) for h in iter_bits(child)
                    }
                    edge = max(edge, self._ldu(child, child_mu))
                term = min(term, edge)
            best = max(best, int(term))
        self._ldu_memo[key] = best
        return best + base


_ENGINES: dict[int, DimensionEngine] = {}


def engine_for(cls: HypothesisClass, max_states: int = DEFAULT_STATE_BUDGET) -> DimensionEngine:
    """One shared engine per class object (memo caches persist across callers)."""
    key = id(cls)
    eng = _ENGINES.get(key)
    if eng is None or eng.cls is not cls or eng.max_states != max_states:
        eng = DimensionEngine(cls, max_states=max_states)
        _ENGINES[key] = eng
    return eng


def lds(cls: HypothesisClass, V=None) -> int:
    return engine_for(cls).lds(V)


def ldk(cls: HypothesisClass, V=None) -> int:
    return engine_for(cls).ldk(V)


def ldu(cls: HypothesisClass, V=None, offsets=None) -> int:
    return engine_for(cls).ldu(V, offsets)


# ---------------------------------------------------------------------------
# finite-horizon oracle


def _raw_children(cls: HypothesisClass, model: Model, state, x: int, yhat: int):
    """All children of the raw one-step backup, self-loops included."""
    if model is Model.SET:
        V = state
        groups: dict[int, int] = {}
        for h in iter_bits(V):
            s = cls.table[h][x]
            groups[s] = groups.get(s, 0) | (1 << h)
        return [sub for s, sub in sorted(groups.items()) if not (s >> yhat) & 1]
    if model is Model.KNOWN:
        V = state
        out = []
        for y in range(cls.n_labels):
            child = 0
            for h in iter_bits(V):
                cell = cls.table[h][x]
                if (cell >> y) & 1 and not (cell >> yhat) & 1:
                    child |= 1 << h
            if child:
                out.append(child)
        return out
    V, mu = state
    out = []
    for y in range(cls.n_labels):
        child = 0
        for h in iter_bits(V):
            if (cls.table[h][x] >> y) & 1:
                child |= 1 << h
        if child:
            child_mu = tuple(
                mu[i] + (0 if (cls.table[h][x] >> yhat) & 1 else 1)
                for i, h in enumerate(iter_bits(V))
                if (child >> h) & 1
            )
            out.append((child, child_mu))
    return out


def brute_force_dimension(
    cls: HypothesisClass,
    model: Model,
    V=None,
    offsets=None,
    horizon_cap: int = 256,
) -> int:
    """Independent oracle: synchronous finite-horizon dynamic programming.

    ``value[h+1] = backup(value[h])`` starting from the horizon-0 value
    (zero, or the best offset for the mistake-unknown game), over every state
    reachable from the root under the raw game operators.  Stops at the first
    ``h`` with ``value[h+1] == value[h]`` on all reachable states; failure to
    stabilize within ``horizon_cap`` sweeps raises :class:`HorizonCapExceeded`
    (for well-formed inputs that signals an engine bug, for classes with empty
    output cells it reflects a genuinely unbounded set-valued game).
    """
    root_V = _as_mask(cls, V)
    if model is Model.UNKNOWN:
        mu = _as_offsets(cls, root_V, offsets)
        root = (root_V, tuple(mu[h] for h in iter_bits(root_V)))
    else:
        root = root_V

    # reachable state set (self-loops collapse automatically)
    reachable = {root}
    frontier = [root]
    while frontier:
        nxt = []
        for st in frontier:
            for x in range(cls.n_instances):
                for yhat in range(cls.n_labels):
                    for child in _raw_children(cls, model, st, x, yhat):
                        if child not in reachable:
                            reachable.add(child)
                            nxt.append(child)
        frontier = nxt
        if len(reachable) > 2_000_000:
            raise StateBudgetExceeded("oracle reachable-state set too large")

    def base(st) -> int:
        if model is Model.UNKNOWN:
            return max(st[1])
        return 0

    value = {st: base(st) for st in reachable}
    for _ in range(horizon_cap):
        changed = False
        new_value = {}
        for st in reachable:
            best = base(st)
            for x in range(cls.n_instances):
                term = None
                for yhat in range(cls.n_labels):
                    kids = _raw_children(cls, model, st, x, yhat)
                    if model is Model.UNKNOWN:
                        edge = max((value[c] for c in kids), default=None)
                        if edge is None:
                            term = None
                            break
                    else:
                        edge = max((1 + value[c] for c in kids), default=0)
                    term = edge if term is None else min(term, edge)
                if term is not None:
                    best = max(best, term)
            new_value[st] = best
            changed = changed or best != value[st]
        value = new_value
        if not changed:
            return value[root]
    raise HorizonCapExceeded(
        f"oracle did not stabilize within {horizon_cap} sweeps"
    )


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class CertNode:
    """A non-root certificate node: the adversary's reply on one edge.

    Exactly one of ``y`` / ``S`` is set depending on the model.  ``x`` is the
    next queried instance; leaves have ``x is None`` and no children.
    ``children[yhat]`` continues the game after the learner plays ``yhat``.
    """

    y: Optional[int]
    S: Optional[int]
    x: Optional[int]
    children: tuple["CertNode", ...]
    witness: Optional[int] = None  # optional per-leaf bookkeeping


@dataclass(frozen=True)
class ShatteringCertificate:
    model: Model
    value: int
    root_x: Optional[int]                 # None for depth-0 certificates
    children: tuple[CertNode, ...]        # indexed by the learner's label
    offsets: tuple[int, ...] = ()         # mistake offsets (mistake-unknown only)
    witness: Optional[int] = None         # depth-0 mistake-unknown witness


class _HorizonTable:
    """Depth-budgeted values G_k(state) for certificate extraction.

    G_k is the value of the game truncated at k more rounds; the smallest k
    with G_k(root) equal to the engine value yields certificates whose paths
    are as short as possible (for the mistake-unknown game: one forced
    mistake per round, which is what makes replay lower bounds tight at
    horizons equal to the dimension).
    """

    def __init__(self, cls: HypothesisClass, model: Model):
        self.cls = cls
        self.model = model
        self.memo: dict[tuple, int] = {}

    def base(self, state) -> int:
        if self.model is Model.UNKNOWN:
            return max(state[1])
        return 0

    def value(self, state, k: int) -> int:
        key = (state, k)
        got = self.memo.get(key)
        if got is not None:
            return got
        cls = self.cls
        best = self.base(state)
        if k > 0:
            for x in range(cls.n_instances):
                term = None
                for yhat in range(cls.n_labels):
                    kids = _raw_children(cls, self.model, state, x, yhat)
                    if self.model is Model.UNKNOWN:
                        edge = max((self.value(c, k - 1) for c in kids), default=None)
                        if edge is None:
                            term = None
                            break
                    else:
                        edge = max((1 + self.value(c, k - 1) for c in kids), default=0)
                    term = edge if term is None else min(term, edge)
                if term is not None:
                    best = max(best, term)
        self.memo[key] = best
        return best

    def pick_instance(self, state, k: int, need: int) -> Optional[int]:
        """Lowest instance whose k-budget game value reaches ``need``."""
        cls = self.cls
        for x in range(cls.n_instances):
            term = None
            for yhat in range(cls.n_labels):
                kids = _raw_children(cls, self.model, state, x, yhat)
                if self.model is Model.UNKNOWN:
                    edge = max((self.value(c, k - 1) for c in kids), default=None)
                    if edge is None:
                        term = None
                        break
                else:
                    edge = max((1 + self.value(c, k - 1) for c in kids), default=0)
                term = edge if term is None else min(term, edge)
            if term is not None and term >= need:
                return x
        return None


def extract_certificate(
    cls: HypothesisClass,
    V=None,
    model: Model = Model.SET,
    offsets=None,
    max_depth_slack: int = 64,
) -> ShatteringCertificate:
    """Build an explicit tree witnessing the computed dimension.

    The tree replays the value recursion: a maximizing instance at each
    state, and for every learner label the lowest adversary reply whose
    truncated-game value still attains the target.  Ties break to the lowest
    instance index, then the lowest label / set encoding.
    """
    eng = engine_for(cls)
    root_V = _as_mask(cls, V)
    if model is Model.SET:
        d = eng.lds(root_V)
    elif model is Model.KNOWN:
        d = eng.ldk(root_V)
    else:
        d = eng.ldu(root_V, offsets)
    mu = _as_offsets(cls, root_V, offsets)
    state_mu = tuple(mu[h] for h in iter_bits(root_V))
    full_mu = tuple(mu.get(h, 0) for h in range(cls.n_hypotheses))
    state = (root_V, state_mu) if model is Model.UNKNOWN else root_V

    table = _HorizonTable(cls, model)
    depth = None
    for k in range(d + max_depth_slack + 1):
        if table.value(state, k) >= d:
            depth = k
            break
    if depth is None:
        raise HorizonCapExceeded(
            "no depth-bounded tree attains the fixpoint value; engine bug"
        )

    def replies(st, x: int, yhat: int):
        # (reply, child) pairs of the one-step backup, in tie-break order
        if model is Model.SET:
            Vst = st
            groups: dict[int, int] = {}
            for h in iter_bits(Vst):
                s = cls.table[h][x]
                groups[s] = groups.get(s, 0) | (1 << h)
            return [
                (("S", s), sub)
                for s, sub in sorted(groups.items())
                if not (s >> yhat) & 1
            ]
        if model is Model.KNOWN:
            Vst = st
            out = []
            for y in range(cls.n_labels):
                child = 0
                for h in iter_bits(Vst):
                    cell = cls.table[h][x]
                    if (cell >> y) & 1 and not (cell >> yhat) & 1:
                        child |= 1 << h
                if child:
                    out.append((("y", y), child))
            return out
        Vst, must = st
        out = []
        for y in range(cls.n_labels):
            child = 0
            for h in iter_bits(Vst):
                if (cls.table[h][x] >> y) & 1:
                    child |= 1 << h
            if child:
                child_mu = tuple(
                    must[i] + (0 if (cls.table[h][x] >> yhat) & 1 else 1)
                    for i, h in enumerate(iter_bits(Vst))
                    if (child >> h) & 1
                )
                out.append((("y", y), (child, child_mu)))
        return out

    def build_node(st, k: int, need: int) -> tuple[Optional[int], tuple[CertNode, ...]]:
        if table.base(st) >= need or k == 0:
            return None, ()
        x = table.pick_instance(st, k, need)
        if x is None:
            raise HorizonCapExceeded("certificate extraction lost the value; engine bug")
        out = []
        for yhat in range(cls.n_labels):
            chosen_reply, chosen_child = None, None
            for reply, child in replies(st, x, yhat):
                val = (
                    table.value(child, k - 1)
                    if model is Model.UNKNOWN
                    else 1 + table.value(child, k - 1)
                )
                if val >= need:
                    chosen_reply, chosen_child = reply, child
                    break
            assert chosen_reply is not None, "edge lost the certificate value"
            child_need = need if model is Model.UNKNOWN else need - 1
            cx, cc = build_node(chosen_child, k - 1, child_need)
            witness = None
            if cx is None:
                witness = _leaf_witness(cls, model, chosen_child, child_need)
            kind, val_ = chosen_reply
            out.append(
                CertNode(
                    y=val_ if kind == "y" else None,
                    S=val_ if kind == "S" else None,
                    x=cx,
                    children=cc,
                    witness=witness,
                )
            )
        return x, tuple(out)

    def _leaf_witness(cls_, model_, st, need_) -> Optional[int]:
        if model_ is Model.UNKNOWN:
            Vst, must = st
            for i, h in enumerate(iter_bits(Vst)):
                if must[i] >= need_:
                    return h
            return None
        return next(iter_bits(st if isinstance(st, int) else st[0]), None)

    if d == 0 and model is not Model.UNKNOWN:
        return ShatteringCertificate(model=model, value=0, root_x=None, children=())
    if model is Model.UNKNOWN and (d == 0 or table.base(state) >= d):
        w = _leaf_witness(cls, model, state, d)
        return ShatteringCertificate(
            model=model, value=d, root_x=None, children=(), offsets=full_mu, witness=w
        )
    root_x, children = build_node(state, depth, d)
    assert root_x is not None
    return ShatteringCertificate(
        model=model,
        value=d,
        root_x=root_x,
        children=children,
        offsets=full_mu if model is Model.UNKNOWN else (),
    )


def verify_certificate(cls: HypothesisClass, cert: ShatteringCertificate) -> bool:
    """Check a certificate against the class by exhaustive witness search.

    Walks every root-to-leaf path and looks for a hypothesis satisfying the
    model's consistency and mistake conditions (cumulative, with offsets, for
    the mistake-unknown game).  Structure errors raise
    :class:`MalformedCertificate`; a well-formed tree that fails the
    conditions returns ``False``.
    """
    n_y = cls.n_labels
    offsets = dict(enumerate(cert.offsets or ()))

    def check_node(node: CertNode) -> None:
        if node.y is not None and node.S is not None:
            raise MalformedCertificate("node carries both a label and a set")
        if cert.model is Model.SET:
            if node.S is None:
                raise MalformedCertificate("set-valued node missing its set")
            if node.S >> n_y:
                raise MalformedCertificate("set uses labels outside the alphabet")
        else:
            if node.y is None:
                raise MalformedCertificate("multi-label node missing its label")
            if not 0 <= node.y < n_y:
                raise MalformedCertificate("label index out of range")
        if node.x is None:
            if node.children:
                raise MalformedCertificate("leaf with children")
        else:
            if not 0 <= node.x < cls.n_instances:
                raise MalformedCertificate("instance index out of range")
            if len(node.children) != n_y:
                raise MalformedCertificate("internal node without one child per label")
            for c in node.children:
                check_node(c)

    if cert.root_x is None:
        if cert.children:
            raise MalformedCertificate("rootless certificate with children")
        if cert.model is Model.UNKNOWN:
            return cert.value <= max(
                (offsets.get(h, 0) for h in range(cls.n_hypotheses)), default=0
            )
        return cert.value == 0
    if not 0 <= cert.root_x < cls.n_instances:
        raise MalformedCertificate("root instance out of range")
    if len(cert.children) != n_y:
        raise MalformedCertificate("root without one child per label")
    for c in cert.children:
        check_node(c)

    def path_ok(path: list[tuple[int, int, CertNode]]) -> bool:
        # path entries: (x queried at the parent, yhat played, reply node)
        for h in range(cls.n_hypotheses):
            mistakes = 0
            consistent = True
            for x, yhat, node in path:
                cell = cls.table[h][x]
                if cert.model is Model.SET:
                    if node.S != cell:
                        consistent = False
                        break
                    if (cell >> yhat) & 1:
                        consistent = False  # mistake requirement
                        break
                    mistakes += 1
                else:
                    if not (cell >> node.y) & 1:
                        consistent = False
                        break
                    miss = not (cell >> yhat) & 1
                    if cert.model is Model.KNOWN and not miss:
                        consistent = False
                        break
                    mistakes += int(miss)
            if not consistent:
                continue
            if cert.model is Model.UNKNOWN:
                if mistakes + offsets.get(h, 0) >= cert.value:
                    return True
            else:
                return True
        return False

    def walk(x: int, children: tuple[CertNode, ...], path) -> bool:
        for yhat, node in enumerate(children):
            step = path + [(x, yhat, node)]
            if node.x is None:
                if not path_ok(step):
                    return False
            else:
                if not walk(node.x, node.children, step):
                    return False
        return True

    if cert.model is not Model.UNKNOWN:
        # complete trees: every path must have exactly `value` rounds
        def depth_ok(children, left) -> bool:
            if not children:
                return left == 0
            return all(
                (c.x is None and left == 1) or (c.x is not None and depth_ok(c.children, left - 1))
                for c in children
            )

        if not depth_ok(cert.children, cert.value):
            return False
    return walk(cert.root_x, cert.children, [])
