"""Dialogue corpus: data model, JSON ingestion/validation, reply-tree threading.

Dialogues are tree-structured: every utterance except the first replies to an
earlier one. Gold annotations are (target, aspect, opinion, polarity)
quadruples whose spans are addressed by (utterance, start, end) with both
ends inclusive. All containers are frozen; a loaded Dialogue can be shared
freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Sequence


class CorpusError(Exception):
    """Base class for corpus ingestion failures."""


class MalformedFileError(CorpusError):
    """Schema violation; the message carries the offending record path."""


class DanglingSpanError(CorpusError):
    """A gold quadruple references a nonexistent utterance or token."""


class BrokenTreeError(CorpusError):
    """Reply links of a dialogue do not form a single backward tree."""


class Split(Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


class Polarity(Enum):
    POS = "pos"
    NEG = "neg"
    OTHER = "other"


class Locality(Enum):
    INTRA = "intra"
    INTER = "inter"


@dataclass(frozen=True)
class Token:
    """One token with its POS tag and dependency head.

    ``dep_head`` is a 0-based index into the same utterance's token list;
    the syntactic root carries ``None``.
    """

    text: str
    pos_tag: str
    dep_head: Optional[int]


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: str
    reply_to: Optional[int]  # None only for the root utterance
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, order=True)
class Span:
    """Inclusive token span inside a single utterance."""

    utterance: int
    start: int
    end: int

    def head(self) -> tuple[int, int]:
        return (self.utterance, self.start)

    def tail(self) -> tuple[int, int]:
        return (self.utterance, self.end)

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True, order=True)
class Quadruple:
    target: Span
    aspect: Span
    opinion: Span
    polarity: Polarity

    def spans(self) -> tuple[Span, Span, Span]:
        return (self.target, self.aspect, self.opinion)


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: tuple[Utterance, ...]
    gold_quads: tuple[Quadruple, ...]

    def n_tokens(self) -> int:
        return sum(len(u) for u in self.utterances)


@dataclass(frozen=True)
class Thread:
    """A root-to-leaf path of the reply tree, as utterance indices."""

    members: tuple[int, ...]


class GlobalTokenMap:
    """Bijection between (utterance, offset) pairs and global token indices.

    Global order is utterance order, then token order; the total size is the
    token count of the whole dialogue.
    """

    def __init__(self, dialogue: Dialogue):
        self._offsets: list[int] = []
        total = 0
        for u in dialogue.utterances:
            self._offsets.append(total)
            total += len(u)
        self.n_sum = total
        self._counts = [len(u) for u in dialogue.utterances]

    def to_global(self, utterance: int, offset: int) -> int:
        if not 0 <= utterance < len(self._counts):
            raise IndexError(f"utterance {utterance} out of range")
        if not 0 <= offset < self._counts[utterance]:
            raise IndexError(f"token {offset} out of range in utterance {utterance}")
        return self._offsets[utterance] + offset

    def to_local(self, g: int) -> tuple[int, int]:
        if not 0 <= g < self.n_sum:
            raise IndexError(f"global token {g} out of range")
        # linear scan is fine at dialogue scale
        u = 0
        while u + 1 < len(self._offsets) and self._offsets[u + 1] <= g:
            u += 1
        return (u, g - self._offsets[u])

    def utterance_of(self, g: int) -> int:
        return self.to_local(g)[0]

    def span_to_global(self, span: Span) -> tuple[int, int]:
        """Return the (start, end) global indices of a span, both inclusive."""
        return (
            self.to_global(span.utterance, span.start),
            self.to_global(span.utterance, span.end),
        )

    def utterance_token_range(self, utterance: int) -> range:
        start = self._offsets[utterance]
        return range(start, start + self._counts[utterance])


def validate_dialogue(d: Dialogue) -> list[str]:
    """Check every Dialogue/Utterance/Token invariant; return violations.

    An empty report means the dialogue is valid. Violations are data, not
    exceptions: callers decide whether to abort.
    """
    report: list[str] = []
    n = len(d.utterances)
    if n == 0:
        report.append("dialogue has no utterances")
        return report

    for i, u in enumerate(d.utterances):
        where = f"utterance {i}"
        if u.index != i:
            report.append(f"{where}: index field {u.index} does not match position")
        if len(u.tokens) == 0:
            report.append(f"{where}: has no tokens")
        if u.reply_to is None:
            if i != 0:
                report.append(f"{where}: single root (only utterance 0 may lack reply_to)")
        else:
            if not 0 <= u.reply_to < n:
                report.append(f"{where}: reply_to {u.reply_to} out of range")
            elif u.reply_to >= i:
                report.append(f"{where}: replies point strictly backward (reply_to {u.reply_to})")
        roots = [t for t, tok in enumerate(u.tokens) if tok.dep_head is None]
        if len(roots) != 1:
            report.append(f"{where}: expected exactly one dependency root, found {len(roots)}")
        heads_ok = len(roots) == 1
        for t, tok in enumerate(u.tokens):
            h = tok.dep_head
            if h is None:
                continue
            if h == t:
                report.append(f"{where}: token {t} heads itself")
                heads_ok = False
            elif not 0 <= h < len(u.tokens):
                report.append(f"{where}: token {t} dep_head {h} out of range")
                heads_ok = False
        if heads_ok and not _heads_form_tree(u):
            report.append(f"{where}: dependency heads do not form a tree")

    for qi, q in enumerate(d.gold_quads):
        for role, span in zip(("target", "aspect", "opinion"), q.spans()):
            err = _span_violation(d, span)
            if err:
                report.append(f"quad {qi}: {role} {err}")
    if len(set(d.gold_quads)) != len(d.gold_quads):
        report.append("gold quadruples are not pairwise distinct")
    return report


def _heads_form_tree(u: Utterance) -> bool:
    """True when every token reaches the root by following dep_head links."""
    n = len(u.tokens)
    for start in range(n):
        seen = set()
        t: Optional[int] = start
        while t is not None:
            if t in seen or not 0 <= t < n:
                return False
            seen.add(t)
            t = u.tokens[t].dep_head
    return True


def _span_violation(d: Dialogue, span: Span) -> Optional[str]:
    if not 0 <= span.utterance < len(d.utterances):
        return f"references nonexistent utterance {span.utterance}"
    count = len(d.utterances[span.utterance])
    if not 0 <= span.start <= span.end < count:
        return f"span ({span.start},{span.end}) outside utterance of {count} tokens"
    return None


def extract_threads(d: Dialogue) -> list[Thread]:
    """Enumerate root-to-leaf paths of the reply tree, ordered by leaf index.

    Every branch of the tree is a separate thread; a dialogue whose root has
    no replies yields the single thread [0].
    """
    n = len(d.utterances)
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    for u in d.utterances:
        if u.reply_to is not None:
            children[u.reply_to].append(u.index)
    leaves = [i for i in range(n) if not children[i]]
    threads = []
    for leaf in sorted(leaves):
        path = [leaf]
        while d.utterances[path[-1]].reply_to is not None:
            path.append(d.utterances[path[-1]].reply_to)  # type: ignore[arg-type]
        threads.append(Thread(members=tuple(reversed(path))))
    return threads


def global_token_map(d: Dialogue) -> GlobalTokenMap:
    return GlobalTokenMap(d)


def classify_locality(q: Quadruple) -> Locality:
    """INTRA when target, aspect and opinion all sit in one utterance."""
    utts = {q.target.utterance, q.aspect.utterance, q.opinion.utterance}
    return Locality.INTRA if len(utts) == 1 else Locality.INTER


def iter_tokens(d: Dialogue) -> Iterator[tuple[int, int, Token]]:
    """Yield (utterance index, token offset, token) in global order."""
    for u in d.utterances:
        for t, tok in enumerate(u.tokens):
            yield (u.index, t, tok)


# ---------------------------------------------------------------------------
# JSON corpus file format
# ---------------------------------------------------------------------------
#
# Top level: {"dialogues": [...]}. Each dialogue:
#   {"id": str,
#    "utterances": [{"speaker": str, "reply_to": int|null,
#                    "tokens": [str], "pos": [str],
#                    "dep_head": [int]}],        # -1 marks the root token
#    "quads": [{"target": [u, s, e], "aspect": [u, s, e],
#               "opinion": [u, s, e], "polarity": "pos"|"neg"|"other"}]}

FORMAT_VERSION = 1


def load_dataset(path: str | Path, split: Split = Split.TRAIN) -> list[Dialogue]:
    """Load and validate a corpus file.

    ``path`` may point at a corpus file directly, or at a directory holding
    one file per split named ``train.json`` / ``valid.json`` / ``test.json``.

    Raises MalformedFileError on schema violations, DanglingSpanError when a
    quadruple references a nonexistent token, and BrokenTreeError when reply
    links do not form a single backward tree.
    """
    path = Path(path)
    if path.is_dir():
        path = path / f"{split.value}.json"
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: not valid JSON ({exc})") from exc

    if not isinstance(raw, dict) or not isinstance(raw.get("dialogues"), list):
        raise MalformedFileError(f"{path}: top level must be {{'dialogues': [...]}}")

    dialogues = []
    for di, rec in enumerate(raw["dialogues"]):
        dialogues.append(_parse_dialogue(rec, f"dialogues[{di}]"))
    return dialogues


def _parse_dialogue(rec: object, where: str) -> Dialogue:
    if not isinstance(rec, dict):
        raise MalformedFileError(f"{where}: dialogue must be an object")
    did = rec.get("id")
    if not isinstance(did, str):
        raise MalformedFileError(f"{where}.id: missing or not a string")

    utts_raw = rec.get("utterances")
    if not isinstance(utts_raw, list) or not utts_raw:
        raise MalformedFileError(f"{where}.utterances: missing or empty")
    utterances = tuple(
        _parse_utterance(u, i, f"{where}.utterances[{i}]") for i, u in enumerate(utts_raw)
    )

    quads_raw = rec.get("quads", [])
    if not isinstance(quads_raw, list):
        raise MalformedFileError(f"{where}.quads: must be a list")
    quads = tuple(_parse_quad(q, f"{where}.quads[{qi}]") for qi, q in enumerate(quads_raw))

    d = Dialogue(id=did, utterances=utterances, gold_quads=quads)
    report = validate_dialogue(d)
    if report:
        tree_issues = [v for v in report if "reply" in v or "root" in v]
        span_issues = [v for v in report if v.startswith("quad ")]
        if tree_issues:
            raise BrokenTreeError(f"{where}: " + "; ".join(tree_issues))
        if span_issues:
            raise DanglingSpanError(f"{where}: " + "; ".join(span_issues))
        raise MalformedFileError(f"{where}: " + "; ".join(report))
    return d


def _parse_utterance(rec: object, index: int, where: str) -> Utterance:
    if not isinstance(rec, dict):
        raise MalformedFileError(f"{where}: utterance must be an object")
    speaker = rec.get("speaker")
    if not isinstance(speaker, str):
        raise MalformedFileError(f"{where}.speaker: missing or not a string")
    reply_to = rec.get("reply_to", None)
    if reply_to is not None and not isinstance(reply_to, int):
        raise MalformedFileError(f"{where}.reply_to: must be an integer or null")

    tokens = rec.get("tokens")
    pos = rec.get("pos")
    heads = rec.get("dep_head")
    for name, val in (("tokens", tokens), ("pos", pos), ("dep_head", heads)):
        if not isinstance(val, list):
            raise MalformedFileError(f"{where}.{name}: missing or not a list")
    if not (len(tokens) == len(pos) == len(heads)):
        raise MalformedFileError(
            f"{where}: tokens/pos/dep_head lengths differ "
            f"({len(tokens)}/{len(pos)}/{len(heads)})"
        )
    toks = []
    for t, (text, tag, head) in enumerate(zip(tokens, pos, heads)):
        if not isinstance(text, str) or not isinstance(tag, str):
            raise MalformedFileError(f"{where}.tokens[{t}]: token and tag must be strings")
        if not isinstance(head, int):
            raise MalformedFileError(f"{where}.dep_head[{t}]: must be an integer")
        toks.append(Token(text=text, pos_tag=tag, dep_head=None if head < 0 else head))
    return Utterance(index=index, speaker=speaker, reply_to=reply_to, tokens=tuple(toks))


def _parse_quad(rec: object, where: str) -> Quadruple:
    if not isinstance(rec, dict):
        raise MalformedFileError(f"{where}: quad must be an object")
    spans = {}
    for role in ("target", "aspect", "opinion"):
        triple = rec.get(role)
        if (
            not isinstance(triple, list)
            or len(triple) != 3
            or not all(isinstance(x, int) for x in triple)
        ):
            raise MalformedFileError(f"{where}.{role}: must be [utterance, start, end]")
        spans[role] = Span(utterance=triple[0], start=triple[1], end=triple[2])
    pol_raw = rec.get("polarity")
    try:
        pol = Polarity(pol_raw)
    except ValueError:
        raise MalformedFileError(f"{where}.polarity: {pol_raw!r} not one of pos/neg/other")
    return Quadruple(
        target=spans["target"], aspect=spans["aspect"], opinion=spans["opinion"], polarity=pol
    )


def dialogue_to_record(d: Dialogue) -> dict:
    """Serialize one dialogue back to the corpus file schema."""
    return {
        "id": d.id,
        "utterances": [
            {
                "speaker": u.speaker,
                "reply_to": u.reply_to,
                "tokens": [t.text for t in u.tokens],
                "pos": [t.pos_tag for t in u.tokens],
                "dep_head": [-1 if t.dep_head is None else t.dep_head for t in u.tokens],
            }
            for u in d.utterances
        ],
        "quads": [
            {
                "target": [q.target.utterance, q.target.start, q.target.end],
                "aspect": [q.aspect.utterance, q.aspect.start, q.aspect.end],
                "opinion": [q.opinion.utterance, q.opinion.start, q.opinion.end],
                "polarity": q.polarity.value,
            }
            for q in d.gold_quads
        ],
    }


def save_dataset(dialogues: Sequence[Dialogue], path: str | Path) -> None:
    """Write dialogues as a corpus file; load_dataset round-trips the result."""
    payload = {"dialogues": [dialogue_to_record(d) for d in dialogues]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Vocabulary interning
# ---------------------------------------------------------------------------

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"


@dataclass
class Vocabulary:
    """Dense-id tables for words, POS tags, and speakers.

    Ids are stable across runs: tables are built from the sorted symbol sets
    of a corpus and persisted alongside checkpoints. Unknown symbols map to
    the reserved ``<unk>`` id 0; the word table additionally reserves
    sentence sentinels used by the encoder.
    """

    words: dict[str, int] = field(default_factory=dict)
    pos: dict[str, int] = field(default_factory=dict)
    speakers: dict[str, int] = field(default_factory=dict)

    @classmethod
    def build(cls, dialogues: Sequence[Dialogue]) -> "Vocabulary":
        words = {UNK: 0, BOS: 1, EOS: 2}
        pos = {UNK: 0}
        speakers = {UNK: 0}
        wordset, posset, spkset = set(), set(), set()
        for d in dialogues:
            for u in d.utterances:
                spkset.add(u.speaker)
                for t in u.tokens:
                    wordset.add(t.text)
                    posset.add(t.pos_tag)
        for w in sorted(wordset - set(words)):
            words[w] = len(words)
        for p in sorted(posset - set(pos)):
            pos[p] = len(pos)
        for s in sorted(spkset - set(speakers)):
            speakers[s] = len(speakers)
        return cls(words=words, pos=pos, speakers=speakers)

    def word_id(self, text: str) -> int:
        return self.words.get(text, 0)

    def pos_id(self, tag: str) -> int:
        return self.pos.get(tag, 0)

    def speaker_id(self, name: str) -> int:
        return self.speakers.get(name, 0)

    def to_dict(self) -> dict:
        return {"words": self.words, "pos": self.pos, "speakers": self.speakers}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(
            words=dict(data["words"]), pos=dict(data["pos"]), speakers=dict(data["speakers"])
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Adapter for the published DiaASQ release format
# ---------------------------------------------------------------------------


def from_benchmark_release(records: list[dict]) -> list[Dialogue]:
    """Convert dialogues from the public benchmark release to this schema.

    Mapping (release field -> here):
      * ``doc_id``                          -> dialogue id
      * ``sentences`` (pre-tokenized, space-joined or token lists)
                                            -> utterance token lists
      * ``speakers`` (one per sentence)     -> speaker ids (stringified)
      * ``replies`` (one per sentence, -1 or self-index for the root)
                                            -> reply_to (None for the root)
      * ``triplets`` rows
        ``[t_s, t_e, a_s, a_e, o_s, o_e, polarity, ...]`` with global,
        end-exclusive token offsets         -> quads with per-utterance,
                                               end-inclusive spans
      * optional ``pos`` / ``dep_head`` parallel lists -> taken verbatim

    The release does not ship POS tags or dependency parses; when the
    optional fields are absent every token gets the placeholder tag "X" and
    a star-shaped head tree (token 0 is the root). That is enough for corpus
    statistics and loader checks; run a parser offline and fill the optional
    fields to train with real syntax.
    """
    dialogues = []
    for di, rec in enumerate(records):
        where = f"release[{di}]"
        if not isinstance(rec, dict) or "sentences" not in rec:
            raise MalformedFileError(f"{where}: expected an object with 'sentences'")
        sentences = [
            s.split() if isinstance(s, str) else list(s) for s in rec["sentences"]
        ]
        speakers = [str(s) for s in rec.get("speakers", range(len(sentences)))]
        replies = rec.get("replies", [-1] + list(range(len(sentences) - 1)))
        pos_lists = rec.get("pos") or [["X"] * len(s) for s in sentences]
        head_lists = rec.get("dep_head") or [[-1] + [0] * (len(s) - 1) for s in sentences]

        utterances = []
        for i, toks in enumerate(sentences):
            reply = replies[i]
            reply_to = None if i == 0 or reply in (-1, i) else int(reply)
            utterances.append(
                Utterance(
                    index=i,
                    speaker=speakers[i],
                    reply_to=reply_to,
                    tokens=tuple(
                        Token(
                            text=t,
                            pos_tag=pos_lists[i][j],
                            dep_head=None if head_lists[i][j] < 0 else head_lists[i][j],
                        )
                        for j, t in enumerate(toks)
                    ),
                )
            )

        lengths = [len(s) for s in sentences]
        quads = []
        for row in rec.get("triplets", []):
            t_s, t_e, a_s, a_e, o_s, o_e = (int(x) for x in row[:6])
            pol = _release_polarity(str(row[6]) if len(row) > 6 else "other")
            quads.append(
                Quadruple(
                    target=_global_exclusive_to_span(t_s, t_e, lengths, where),
                    aspect=_global_exclusive_to_span(a_s, a_e, lengths, where),
                    opinion=_global_exclusive_to_span(o_s, o_e, lengths, where),
                    polarity=pol,
                )
            )
        # the release may repeat rows when one triple carries several texts
        quads = list(dict.fromkeys(quads))
        dialogues.append(
            Dialogue(id=str(rec.get("doc_id", di)), utterances=tuple(utterances),
                     gold_quads=tuple(quads))
        )
    return dialogues


def _release_polarity(raw: str) -> Polarity:
    alias = {"positive": "pos", "negative": "neg", "ambiguous": "other", "neutral": "other"}
    key = alias.get(raw.lower(), raw.lower())
    try:
        return Polarity(key)
    except ValueError:
        raise MalformedFileError(f"unknown polarity {raw!r} in release data")


def _global_exclusive_to_span(start: int, end: int, lengths: list[int], where: str) -> Span:
    """Map a global end-exclusive token range onto one utterance."""
    if end <= start:
        raise DanglingSpanError(f"{where}: empty span [{start},{end})")
    offset = 0
    for u, n in enumerate(lengths):
        if start < offset + n:
            if end > offset + n:
                raise DanglingSpanError(
                    f"{where}: span [{start},{end}) crosses an utterance boundary"
                )
            return Span(utterance=u, start=start - offset, end=end - 1 - offset)
        offset += n
    raise DanglingSpanError(f"{where}: span [{start},{end}) beyond dialogue of {offset} tokens")
