"""The three graphs the model consumes.

Utterance level: a fully typed speaker-relation matrix and a structure
matrix over reply/thread links (cross-branch pairs are masked by default).
Token level: one undirected syntactic adjacency per utterance with
self-loops. Brute-force definitional oracles live here too so tests can
compare an optimized builder against a straight reading of the definitions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .corpus import Dialogue, Thread, Utterance


class SpeakerRelation(Enum):
    SELF_PAST = "self-past"
    SELF_FUTURE = "self-future"
    INTER_PAST = "inter-past"
    INTER_FUTURE = "inter-future"
    SELF_LOOP = "self-loop"


class StructureRelation(Enum):
    SELF_LOOP = "self-loop"
    REPLY_PAST = "reply-past"
    REPLY_FUTURE = "reply-future"
    THREAD_PAST = "thread-past"
    THREAD_FUTURE = "thread-future"
    NONE = "none"


Relation = Union[SpeakerRelation, StructureRelation]

SPEAKER_TYPES: tuple[SpeakerRelation, ...] = tuple(SpeakerRelation)
# NONE is a mask, not an edge type; it gets no embedding.
STRUCTURE_TYPES: tuple[StructureRelation, ...] = tuple(
    r for r in StructureRelation if r is not StructureRelation.NONE
)


@dataclass(frozen=True)
class RelationMatrix:
    """n x n typed adjacency between utterances."""

    n: int
    cells: tuple[tuple[Relation, ...], ...]

    def cell(self, i: int, j: int) -> Relation:
        return self.cells[i][j]

    def type_ids(self, types: Sequence[Relation]) -> np.ndarray:
        """Integer matrix of positions in ``types``; -1 for masked cells."""
        index = {t: k for k, t in enumerate(types)}
        out = np.full((self.n, self.n), -1, dtype=np.int64)
        for i in range(self.n):
            for j in range(self.n):
                out[i, j] = index.get(self.cells[i][j], -1)
        return out

    def mask(self) -> np.ndarray:
        """Boolean matrix, True where an edge exists (cell is not NONE)."""
        return np.array(
            [[c is not StructureRelation.NONE for c in row] for row in self.cells],
            dtype=bool,
        )


@dataclass(frozen=True)
class SynGraph:
    """Undirected token dependency adjacency with self-loops."""

    n_tokens: int
    adjacency: np.ndarray


def build_speaker_graph(d: Dialogue) -> RelationMatrix:
    """Type every ordered utterance pair by speaker identity and time order.

    cell(i, j) describes j as seen from i: SELF when both utterances share a
    speaker, INTER otherwise; PAST when j precedes i, FUTURE when it follows.
    The matrix is total, every pair gets a type.
    """
    speakers = [u.speaker for u in d.utterances]
    n = len(speakers)
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            if i == j:
                row.append(SpeakerRelation.SELF_LOOP)
            else:
                same = speakers[i] == speakers[j]
                past = j < i
                row.append(
                    {
                        (True, True): SpeakerRelation.SELF_PAST,
                        (True, False): SpeakerRelation.SELF_FUTURE,
                        (False, True): SpeakerRelation.INTER_PAST,
                        (False, False): SpeakerRelation.INTER_FUTURE,
                    }[(same, past)]
                )
        rows.append(tuple(row))
    return RelationMatrix(n=n, cells=tuple(rows))


def build_structure_graph(
    d: Dialogue, threads: Sequence[Thread], cross_branch: str = "mask"
) -> RelationMatrix:
    """Type utterance pairs by reply edges and thread co-membership.

    Direct reply pairs get REPLY_PAST/REPLY_FUTURE, pairs that co-occur on a
    root-to-leaf thread get THREAD_PAST/THREAD_FUTURE, the diagonal is
    SELF_LOOP. Pairs in different branches are NONE (masked) by default;
    ``cross_branch="thread"`` types them as thread edges instead, giving a
    fully connected graph for ablation runs.
    """
    if cross_branch not in ("mask", "thread"):
        raise ValueError(f"cross_branch must be 'mask' or 'thread', got {cross_branch!r}")
    n = len(d.utterances)
    grid: list[list[StructureRelation]] = [
        [StructureRelation.NONE] * n for _ in range(n)
    ]
    for t in threads:
        for a in t.members:
            for b in t.members:
                if a == b:
                    continue
                grid[a][b] = (
                    StructureRelation.THREAD_PAST if b < a else StructureRelation.THREAD_FUTURE
                )
    if cross_branch == "thread":
        for i in range(n):
            for j in range(n):
                if i != j and grid[i][j] is StructureRelation.NONE:
                    grid[i][j] = (
                        StructureRelation.THREAD_PAST
                        if j < i
                        else StructureRelation.THREAD_FUTURE
                    )
    for u in d.utterances:
        if u.reply_to is not None:
            grid[u.index][u.reply_to] = StructureRelation.REPLY_PAST
            grid[u.reply_to][u.index] = StructureRelation.REPLY_FUTURE
    for i in range(n):
        grid[i][i] = StructureRelation.SELF_LOOP
    return RelationMatrix(n=n, cells=tuple(tuple(row) for row in grid))


def build_syntactic_graph(u: Utterance, normalize: bool = False) -> SynGraph:
    """Undirected head-dependent adjacency with a unit diagonal.

    With ``normalize`` each row is divided by its degree; the default keeps
    raw 0/1 weights.
    """
    n = len(u.tokens)
    adj = np.eye(n, dtype=np.float64)
    for t, tok in enumerate(u.tokens):
        if tok.dep_head is not None:
            adj[t, tok.dep_head] = 1.0
            adj[tok.dep_head, t] = 1.0
    if normalize:
        adj = adj / adj.sum(axis=1, keepdims=True)
    return SynGraph(n_tokens=n, adjacency=adj)


def neighborhood(m: RelationMatrix, i: int) -> set[int]:
    """Indices j with a typed edge from i; always contains i (self-loop)."""
    if not 0 <= i < m.n:
        raise IndexError(f"node {i} out of range for matrix of size {m.n}")
    return {j for j in range(m.n) if m.cells[i][j] is not StructureRelation.NONE}


# ---------------------------------------------------------------------------
# Brute-force oracles. Same contracts as the builders above, written as a
# literal reading of the definitions so the two can be diffed in tests.
# ---------------------------------------------------------------------------


def oracle_speaker_graph(d: Dialogue) -> RelationMatrix:
    n = len(d.utterances)
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            if i == j:
                rel = SpeakerRelation.SELF_LOOP
            elif d.utterances[i].speaker == d.utterances[j].speaker:
                rel = SpeakerRelation.SELF_PAST if j < i else SpeakerRelation.SELF_FUTURE
            else:
                rel = SpeakerRelation.INTER_PAST if j < i else SpeakerRelation.INTER_FUTURE
            row.append(rel)
        rows.append(tuple(row))
    return RelationMatrix(n=n, cells=tuple(rows))


def oracle_structure_graph(d: Dialogue) -> RelationMatrix:
    """Structure matrix via explicit enumeration of all root-to-leaf paths."""
    n = len(d.utterances)
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    for u in d.utterances:
        if u.reply_to is not None:
            children[u.reply_to].append(u.index)

    paths: list[list[int]] = []

    def walk(node: int, prefix: list[int]) -> None:
        prefix = prefix + [node]
        if not children[node]:
            paths.append(prefix)
        for c in children[node]:
            walk(c, prefix)

    if n:
        walk(0, [])

    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            if i == j:
                rel = StructureRelation.SELF_LOOP
            elif d.utterances[i].reply_to == j:
                rel = StructureRelation.REPLY_PAST
            elif d.utterances[j].reply_to == i:
                rel = StructureRelation.REPLY_FUTURE
            elif any(i in p and j in p for p in paths):
                rel = StructureRelation.THREAD_PAST if j < i else StructureRelation.THREAD_FUTURE
            else:
                rel = StructureRelation.NONE
            row.append(rel)
        rows.append(tuple(row))
    return RelationMatrix(n=n, cells=tuple(rows))
