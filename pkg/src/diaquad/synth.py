"""Deterministic synthetic-dialogue generator for tests and overfit runs.

Dialogues are built from a seeded RNG: random backward reply trees, random
valid dependency trees per utterance, and planted quadruples with a
controllable intra/inter ratio. Entity spans of distinct quads never overlap
(a quad may reuse an earlier quad's target span verbatim), which keeps the
gold grids conflict-free and exactly decodable.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass

from .corpus import (
    Dialogue,
    Locality,
    Polarity,
    Quadruple,
    Span,
    Token,
    Utterance,
    classify_locality,
)

MAX_UTTERANCES = 16
MAX_TOKENS_PER_UTTERANCE = 24


class BadProfileError(Exception):
    """Generator profile violates its bounds."""


@dataclass(frozen=True)
class GenProfile:
    """Knobs for the generator; defaults give small, well-behaved dialogues."""

    min_utterances: int = 2
    max_utterances: int = 6
    min_tokens: int = 5
    max_tokens: int = 10
    min_quads: int = 1
    max_quads: int = 3
    intra_ratio: float = 0.7
    n_words: int = 40
    n_pos: int = 6
    n_speakers: int = 4
    max_span_len: int = 2
    reuse_target_prob: float = 0.15

    def check(self) -> None:
        if not 1 <= self.min_utterances <= self.max_utterances <= MAX_UTTERANCES:
            raise BadProfileError(
                f"utterance bounds [{self.min_utterances},{self.max_utterances}] "
                f"outside [1,{MAX_UTTERANCES}]"
            )
        if not 1 <= self.min_tokens <= self.max_tokens <= MAX_TOKENS_PER_UTTERANCE:
            raise BadProfileError(
                f"token bounds [{self.min_tokens},{self.max_tokens}] "
                f"outside [1,{MAX_TOKENS_PER_UTTERANCE}]"
            )
        if not 0 <= self.min_quads <= self.max_quads:
            raise BadProfileError("quad bounds must satisfy 0 <= min <= max")
        if not 0.0 <= self.intra_ratio <= 1.0:
            raise BadProfileError(f"intra_ratio {self.intra_ratio} outside [0,1]")
        if not 0.0 <= self.reuse_target_prob <= 1.0:
            raise BadProfileError("reuse_target_prob outside [0,1]")
        if min(self.n_words, self.n_pos, self.n_speakers) < 1:
            raise BadProfileError("vocabulary sizes must be >= 1")
        if self.max_span_len < 1:
            raise BadProfileError("max_span_len must be >= 1")


def synth_corpus(
    seed: int, n_dialogues: int, profile: GenProfile | None = None
) -> tuple[list[Dialogue], dict]:
    """Generate dialogues plus a manifest of exact counts.

    The output is a pure function of (seed, n_dialogues, profile): two calls
    with the same arguments produce identical dialogues and manifests.
    """
    profile = profile or GenProfile()
    profile.check()
    rng = random.Random(seed)

    dialogues = []
    per_dialogue = []
    for i in range(n_dialogues):
        d = _gen_dialogue(rng, f"synth-{seed}-{i:04d}", profile)
        dialogues.append(d)
        intra = sum(1 for q in d.gold_quads if classify_locality(q) is Locality.INTRA)
        per_dialogue.append(
            {
                "id": d.id,
                "utterances": len(d.utterances),
                "tokens": d.n_tokens(),
                "quads": len(d.gold_quads),
                "intra": intra,
                "inter": len(d.gold_quads) - intra,
            }
        )

    manifest = {
        "format_version": 1,
        "seed": seed,
        "n_dialogues": n_dialogues,
        "profile": asdict(profile),
        "counts": {
            "dialogues": n_dialogues,
            "utterances": sum(r["utterances"] for r in per_dialogue),
            "tokens": sum(r["tokens"] for r in per_dialogue),
            "quads": sum(r["quads"] for r in per_dialogue),
            "intra": sum(r["intra"] for r in per_dialogue),
            "inter": sum(r["inter"] for r in per_dialogue),
        },
        "per_dialogue": per_dialogue,
    }
    return dialogues, manifest


def _gen_dialogue(rng: random.Random, did: str, p: GenProfile) -> Dialogue:
    n = rng.randint(p.min_utterances, p.max_utterances)
    utterances = []
    for i in range(n):
        n_tok = rng.randint(p.min_tokens, p.max_tokens)
        heads = _random_dep_tree(rng, n_tok)
        tokens = tuple(
            Token(
                text=f"w{rng.randrange(p.n_words)}",
                pos_tag=f"p{rng.randrange(p.n_pos)}",
                dep_head=heads[t],
            )
            for t in range(n_tok)
        )
        utterances.append(
            Utterance(
                index=i,
                speaker=f"spk{rng.randrange(p.n_speakers)}",
                reply_to=None if i == 0 else rng.randrange(i),
                tokens=tokens,
            )
        )

    used = [[False] * len(u.tokens) for u in utterances]
    quads: list[Quadruple] = []
    n_quads = rng.randint(p.min_quads, p.max_quads)
    for _ in range(n_quads):
        want_intra = n == 1 or rng.random() < p.intra_ratio
        quad = _plant_quad(rng, used, quads, p, want_intra)
        if quad is not None:
            quads.append(quad)
    return Dialogue(id=did, utterances=tuple(utterances), gold_quads=tuple(quads))


def _random_dep_tree(rng: random.Random, n: int) -> list[int | None]:
    """Random single-rooted head list: attach each token to an attached one."""
    heads: list[int | None] = [None] * n
    root = rng.randrange(n)
    attached = [root]
    order = [t for t in range(n) if t != root]
    rng.shuffle(order)
    for t in order:
        heads[t] = rng.choice(attached)
        attached.append(t)
        attached.sort()
    return heads


def _plant_quad(
    rng: random.Random,
    used: list[list[bool]],
    existing: list[Quadruple],
    p: GenProfile,
    want_intra: bool,
) -> Quadruple | None:
    """Place one quadruple on unused tokens; None when nothing fits.

    With small probability the target span of an earlier quad is reused
    verbatim (shared entities are common in real data); aspect and opinion
    spans are always fresh, so no grid cell is ever claimed twice with
    different labels.
    """
    n = len(used)
    target: Span | None = None
    reuse = existing and rng.random() < p.reuse_target_prob
    if reuse:
        target = rng.choice(existing).target

    placed: list[Span] = []
    try:
        if want_intra:
            candidates = [target.utterance] if target else list(range(n))
            rng.shuffle(candidates)
            for u in candidates:
                placed = _try_place(rng, used, [u] * (2 if target else 3), p)
                if placed:
                    break
        else:
            for _ in range(8):
                if target:
                    others = [u for u in range(n) if u != target.utterance]
                    if not others:
                        return None
                    homes = [rng.choice(others) for _ in range(2)]
                else:
                    first = rng.randrange(n)
                    second = rng.choice([u for u in range(n) if u != first])
                    homes = [first, second, rng.choice([first, second])]
                placed = _try_place(rng, used, homes, p)
                if placed:
                    break
        if not placed:
            return None
        spans = ([target] if target else []) + placed
        quad = Quadruple(
            target=spans[0],
            aspect=spans[1],
            opinion=spans[2],
            polarity=rng.choice(list(Polarity)),
        )
        if want_intra and classify_locality(quad) is not Locality.INTRA:
            raise AssertionError("intra template placed a cross-utterance quad")
        return quad
    except _NoRoom:
        return None


class _NoRoom(Exception):
    pass


def _try_place(
    rng: random.Random, used: list[list[bool]], homes: list[int], p: GenProfile
) -> list[Span]:
    """Place one span per requested utterance; all-or-nothing."""
    placed: list[Span] = []
    for u in homes:
        span = _place_span(rng, used[u], u, p.max_span_len)
        if span is None:
            for s in placed:  # roll back partial placement
                for t in range(s.start, s.end + 1):
                    used[s.utterance][t] = False
            return []
        placed.append(span)
    return placed


def _place_span(rng: random.Random, used: list[bool], u: int, max_len: int) -> Span | None:
    for length in sorted({rng.randint(1, max_len), 1}, reverse=True):
        starts = [
            s
            for s in range(len(used) - length + 1)
            if not any(used[s : s + length])
        ]
        if starts:
            start = rng.choice(starts)
            for t in range(start, start + length):
                used[t] = True
            return Span(utterance=u, start=start, end=start + length - 1)
    return None
