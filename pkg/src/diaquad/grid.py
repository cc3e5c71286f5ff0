"""Token-pair tag grids: gold encoding and rule-based quadruple decoding.

Three square grids over the dialogue's global token sequence. Entity spans
are tagged at their (start, end) cell; entity pairs are linked head-to-head
and tail-to-tail between target-aspect and aspect-opinion; the sentiment
sits at (target head, opinion head). Decoding inverts those rules: collect
spans, form pairs where both links hold, join on the shared aspect, and
read the polarity cell. Fragments that do not complete a quadruple are
dropped (they cost recall, never precision).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .corpus import Dialogue, GlobalTokenMap, Polarity, Quadruple, Span


class EntityLabel(IntEnum):
    NONE_ENT = 0
    TGT = 1
    ASP = 2
    OPI = 3


class PairLabel(IntEnum):
    NONE_PAIR = 0
    H2H = 1
    T2T = 2


class PolarityLabel(IntEnum):
    NONE_POL = 0
    POS = 1
    NEG = 2
    OTHER = 3


ENTITY_LABELS = tuple(EntityLabel)
PAIR_LABELS = tuple(PairLabel)
POLARITY_LABELS = tuple(PolarityLabel)

_POL_TO_LABEL = {
    Polarity.POS: PolarityLabel.POS,
    Polarity.NEG: PolarityLabel.NEG,
    Polarity.OTHER: PolarityLabel.OTHER,
}
_LABEL_TO_POL = {v: k for k, v in _POL_TO_LABEL.items()}


class GridConflictError(Exception):
    """Two quadruples demand different non-background labels in one cell."""


@dataclass
class TagGrids:
    """The three label grids, square over the whole-dialogue token count."""

    entity: np.ndarray
    pair: np.ndarray
    polarity: np.ndarray

    @property
    def n(self) -> int:
        return self.entity.shape[0]

    @classmethod
    def empty(cls, n: int) -> "TagGrids":
        return cls(
            entity=np.zeros((n, n), dtype=np.int64),
            pair=np.zeros((n, n), dtype=np.int64),
            polarity=np.zeros((n, n), dtype=np.int64),
        )


def encode_gold(d: Dialogue, gmap: GlobalTokenMap) -> TagGrids:
    """Write the gold quadruples of a dialogue into tag grids.

    Raises GridConflictError when two quadruples claim one cell with
    different labels; identical claims collapse silently (entities are
    routinely shared between quadruples).
    """
    grids = TagGrids.empty(gmap.n_sum)
    owners: dict[tuple[str, int, int], tuple[int, Quadruple]] = {}

    def put(grid: np.ndarray, kind: str, i: int, j: int, label: int, quad: Quadruple) -> None:
        prev = owners.get((kind, i, j))
        if prev is not None and prev[0] != label:
            raise GridConflictError(
                f"cell ({i},{j}) of the {kind} grid claimed as {label} by {quad} "
                f"but already {prev[0]} from {prev[1]}"
            )
        owners[(kind, i, j)] = (label, quad)
        grid[i, j] = label

    for q in d.gold_quads:
        ts, te = gmap.span_to_global(q.target)
        as_, ae = gmap.span_to_global(q.aspect)
        os_, oe = gmap.span_to_global(q.opinion)
        put(grids.entity, "entity", ts, te, EntityLabel.TGT, q)
        put(grids.entity, "entity", as_, ae, EntityLabel.ASP, q)
        put(grids.entity, "entity", os_, oe, EntityLabel.OPI, q)
        put(grids.pair, "pair", ts, as_, PairLabel.H2H, q)
        put(grids.pair, "pair", te, ae, PairLabel.T2T, q)
        put(grids.pair, "pair", as_, os_, PairLabel.H2H, q)
        put(grids.pair, "pair", ae, oe, PairLabel.T2T, q)
        put(grids.polarity, "polarity", ts, os_, _POL_TO_LABEL[q.polarity], q)
    return grids


def argmax_grids(
    entity_probs: np.ndarray, pair_probs: np.ndarray, polarity_probs: np.ndarray
) -> TagGrids:
    """Per-cell argmax over each head's label axis; exact ties become NONE.

    Breaking ties toward the background label favors precision: a cell that
    cannot commit to one label asserts nothing.
    """
    return TagGrids(
        entity=_argmax_tie_to_none(entity_probs),
        pair=_argmax_tie_to_none(pair_probs),
        polarity=_argmax_tie_to_none(polarity_probs),
    )


def _argmax_tie_to_none(probs: np.ndarray) -> np.ndarray:
    top = probs.max(axis=-1, keepdims=True)
    ties = (probs == top).sum(axis=-1)
    labels = probs.argmax(axis=-1).astype(np.int64)
    labels[ties > 1] = 0
    return labels


@dataclass(frozen=True)
class _Located:
    """An entity span with its global head/tail kept for link lookups."""

    span: Span
    gs: int
    ge: int


def decode(grids: TagGrids, gmap: GlobalTokenMap) -> set[Quadruple]:
    """Apply the decoding rules to tag grids; returns a deduplicated set.

    Entity cells below the diagonal or spanning an utterance boundary are
    ignored; pairs missing either the head-to-head or tail-to-tail link and
    joins without a polarity cell are dropped.
    """
    targets, aspects, opinions = [], [], []
    for gs, ge in zip(*np.nonzero(grids.entity)):
        gs, ge = int(gs), int(ge)
        if gs > ge:
            continue
        u_start, start = gmap.to_local(gs)
        u_end, end = gmap.to_local(ge)
        if u_start != u_end:
            continue
        loc = _Located(span=Span(utterance=u_start, start=start, end=end), gs=gs, ge=ge)
        label = EntityLabel(grids.entity[gs, ge])
        if label is EntityLabel.TGT:
            targets.append(loc)
        elif label is EntityLabel.ASP:
            aspects.append(loc)
        else:
            opinions.append(loc)

    def linked(x: _Located, y: _Located) -> bool:
        return (
            grids.pair[x.gs, y.gs] == PairLabel.H2H
            and grids.pair[x.ge, y.ge] == PairLabel.T2T
        )

    ta = [(t, a) for t in targets for a in aspects if linked(t, a)]
    ao = [(a, o) for a in aspects for o in opinions if linked(a, o)]

    quads: set[Quadruple] = set()
    for t, a in ta:
        for a2, o in ao:
            if a2.span != a.span:
                continue
            pol_label = PolarityLabel(grids.polarity[t.gs, o.gs])
            if pol_label is PolarityLabel.NONE_POL:
                continue
            quads.add(
                Quadruple(
                    target=t.span,
                    aspect=a.span,
                    opinion=o.span,
                    polarity=_LABEL_TO_POL[pol_label],
                )
            )
    return quads


def decode_probs(
    entity_probs: np.ndarray,
    pair_probs: np.ndarray,
    polarity_probs: np.ndarray,
    gmap: GlobalTokenMap,
) -> set[Quadruple]:
    """Argmax probability grids (ties to NONE), then decode."""
    return decode(argmax_grids(entity_probs, pair_probs, polarity_probs), gmap)


def one_hot_grids(grids: TagGrids) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gold grids as one-hot arrays shaped like the model's probability grids."""
    return (
        np.eye(len(ENTITY_LABELS))[grids.entity],
        np.eye(len(PAIR_LABELS))[grids.pair],
        np.eye(len(POLARITY_LABELS))[grids.polarity],
    )
