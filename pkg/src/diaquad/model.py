"""The full forward pass from a dialogue to three token-pair label grids.

Pipeline: a trainable BiLSTM encoder produces token representations per
utterance and per thread plus an utterance summary vector; POS tags run
through an embedding and their own BiLSTM into a per-utterance syntactic
GCN; two typed-edge GATs (speaker relations, reply/thread structure) mix
utterance summaries and are fused by a bidirectional attention interaction;
everything is aggregated to one vector per dialogue token and scored by
per-label MLP heads as pairwise dot products.

The encoder is pluggable: the default is self-contained and CPU-trainable;
:class:`PrecomputedEncoder` ingests per-token vectors computed offline.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import LstmParams, Tensor
from .corpus import (
    BOS,
    EOS,
    Dialogue,
    GlobalTokenMap,
    Thread,
    Utterance,
    Vocabulary,
    extract_threads,
    global_token_map,
)
from .graphs import (
    RelationMatrix,
    SPEAKER_TYPES,
    STRUCTURE_TYPES,
    SynGraph,
    build_speaker_graph,
    build_structure_graph,
    build_syntactic_graph,
)
from .grid import ENTITY_LABELS, PAIR_LABELS, POLARITY_LABELS


@dataclass
class ModelConfig:
    """Sizes, rates and ablation switches for the whole model."""

    d: int = 40  # shared hidden size for encoder outputs and GAT features
    word_dim: int = 32
    enc_hidden: int = 20  # per direction; encoder BiLSTM emits 2x this
    d_e: int = 16  # POS embedding size
    d_l: int = 24  # POS BiLSTM output size (split across directions)
    gcn_layers: int = 2
    gat_dim: int = 16  # attention projection size
    gat_heads: int = 1
    edge_dim: int = 8
    mlp_hidden: int = 48
    mlp_out: int = 20
    leaky_slope: float = 0.2
    dropout: float = 0.4
    label_weight: float = 3.0  # loss weight of non-background labels
    use_syn_gcn: bool = True
    use_spk_gat: bool = True
    use_str_gat: bool = True
    thread_merge: str = "mean"  # how tokens shared by threads combine: mean|sum|first
    normalize_syn: bool = False
    cross_branch: str = "mask"
    seed: int = 0

    def validate(self) -> None:
        for name in (
            "d",
            "word_dim",
            "enc_hidden",
            "d_e",
            "d_l",
            "gcn_layers",
            "gat_dim",
            "gat_heads",
            "edge_dim",
            "mlp_hidden",
            "mlp_out",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"config {name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0,1)")
        if self.d_l % 2:
            raise ValueError("d_l must be even (split across BiLSTM directions)")
        if self.d % self.gat_heads:
            raise ValueError("d must be divisible by gat_heads")
        if self.thread_merge not in ("mean", "sum", "first"):
            raise ValueError(f"unknown thread_merge {self.thread_merge!r}")
        if self.cross_branch not in ("mask", "thread"):
            raise ValueError(f"unknown cross_branch {self.cross_branch!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        cfg = cls(**{k: v for k, v in data.items() if k in known})
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# Parameter containers and initialization
# ---------------------------------------------------------------------------


@dataclass
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def apply(self, x: Tensor) -> Tensor:
        return ad.linear(ad.relu(ad.linear(x, self.w1, self.b1)), self.w2, self.b2)


@dataclass
class GatParams:
    """One attention head over typed edges."""

    w_src: Tensor  # (d, p)
    w_dst: Tensor  # (d, p)
    w_out: Tensor  # (d, d_out)
    a_src: Tensor  # (p, 1)
    a_dst: Tensor  # (p, 1)
    a_edge: Tensor  # (e, 1)
    edge_emb: Tensor  # (n_types, e)


class _ParamBuilder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}

    def matrix(self, name: str, rows: int, cols: int) -> Tensor:
        bound = np.sqrt(6.0 / (rows + cols))
        t = Tensor(self.rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)
        self.params[name] = t
        return t

    def bias(self, name: str, size: int) -> Tensor:
        t = Tensor(np.zeros(size), requires_grad=True)
        self.params[name] = t
        return t

    def embedding(self, name: str, rows: int, cols: int) -> Tensor:
        t = Tensor(self.rng.normal(0.0, 0.1, size=(rows, cols)), requires_grad=True)
        self.params[name] = t
        return t

    def lstm(self, prefix: str, d_in: int, hidden: int) -> LstmParams:
        return LstmParams(
            w_ih=self.matrix(f"{prefix}.w_ih", d_in, 4 * hidden),
            w_hh=self.matrix(f"{prefix}.w_hh", hidden, 4 * hidden),
            bias=self.bias(f"{prefix}.bias", 4 * hidden),
        )

    def mlp(self, prefix: str, d_in: int, hidden: int, d_out: int) -> MlpParams:
        return MlpParams(
            w1=self.matrix(f"{prefix}.w1", d_in, hidden),
            b1=self.bias(f"{prefix}.b1", hidden),
            w2=self.matrix(f"{prefix}.w2", hidden, d_out),
            b2=self.bias(f"{prefix}.b2", d_out),
        )

    def gat(self, prefix: str, d: int, p: int, d_out: int, e: int, n_types: int) -> GatParams:
        return GatParams(
            w_src=self.matrix(f"{prefix}.w_src", d, p),
            w_dst=self.matrix(f"{prefix}.w_dst", d, p),
            w_out=self.matrix(f"{prefix}.w_out", d, d_out),
            a_src=self.matrix(f"{prefix}.a_src", p, 1),
            a_dst=self.matrix(f"{prefix}.a_dst", p, 1),
            a_edge=self.matrix(f"{prefix}.a_edge", e, 1),
            edge_emb=self.embedding(f"{prefix}.edge_emb", n_types, e),
        )


# ---------------------------------------------------------------------------
# Reusable forward blocks (explicit parameters, directly testable)
# ---------------------------------------------------------------------------


def syn_gcn_forward(
    g: SynGraph, c: Tensor, layers: Sequence[tuple[Tensor, Tensor]]
) -> Tensor:
    """Stacked graph convolutions h' = ReLU(A h W + b) over one utterance."""
    if c.shape[0] != g.n_tokens:
        raise ad.ShapeMismatchError(
            f"syn_gcn_forward: {c.shape[0]} feature rows for {g.n_tokens} tokens"
        )
    if (g.adjacency.sum(axis=1) == 0).any():
        raise ValueError("syn_gcn_forward: adjacency has an isolated row")
    adj = Tensor(g.adjacency)
    h = c
    for w, b in layers:
        h = ad.relu(ad.add(ad.matmul(ad.matmul(adj, h), w), b))
    return h


def gat_forward(
    m: RelationMatrix,
    node_feats: Tensor,
    heads: Sequence[GatParams],
    types: Sequence,
    slope: float = 0.2,
    trace: Optional[dict] = None,
    trace_key: str = "gat",
) -> Tensor:
    """Typed-edge graph attention; head outputs are concatenated.

    Attention logits follow a^T [W_src h_i ; W_dst h_j ; E_ij] with a
    LeakyReLU, normalized over each node's unmasked neighborhood. Masked
    pairs get exactly zero weight.
    """
    if node_feats.shape[0] != m.n:
        raise ad.ShapeMismatchError(
            f"gat_forward: {node_feats.shape[0]} feature rows for {m.n} nodes"
        )
    type_ids = m.type_ids(types)
    mask = m.mask()
    safe_ids = np.where(type_ids < 0, 0, type_ids)
    outs = []
    for k, p in enumerate(heads):
        src = ad.matmul(ad.matmul(node_feats, p.w_src), p.a_src)  # (N,1)
        dst = ad.matmul(ad.matmul(node_feats, p.w_dst), p.a_dst)  # (N,1)
        edge_scalar = ad.matmul(p.edge_emb, p.a_edge)  # (n_types, 1)
        edge = ad.reshape(ad.embedding_lookup(edge_scalar, safe_ids.reshape(-1)), (m.n, m.n))
        scores = ad.leaky_relu(ad.add(ad.add(src, ad.transpose(dst)), edge), slope)
        alpha = ad.masked_softmax(scores, mask, axis=-1)
        if trace is not None:
            trace.setdefault(trace_key, []).append(alpha.data.copy())
        outs.append(ad.matmul(alpha, ad.matmul(node_feats, p.w_out)))
    return outs[0] if len(outs) == 1 else ad.concat(outs, axis=-1)


def interaction(
    h_spk: Tensor, h_str: Tensor, w1: Tensor, w2: Tensor, trace: Optional[dict] = None
) -> tuple[Tensor, Tensor]:
    """Cross-attention between the two GAT outputs (row-softmax mixing)."""
    if h_spk.shape != h_str.shape:
        raise ad.ShapeMismatchError(f"interaction: {h_spk.shape} vs {h_str.shape}")
    a1 = ad.softmax(ad.matmul(ad.matmul(h_spk, w1), ad.transpose(h_str)), axis=-1)
    a2 = ad.softmax(ad.matmul(ad.matmul(h_str, w2), ad.transpose(h_spk)), axis=-1)
    if trace is not None:
        trace["interaction"] = [a1.data.copy(), a2.data.copy()]
    return ad.matmul(a1, h_spk), ad.matmul(a2, h_str)


def aggregate(
    syn_tokens: Tensor,
    h_spk: Tensor,
    h_str: Tensor,
    threads: Sequence[Thread],
    thread_reps: Sequence[Tensor],
    gmap: GlobalTokenMap,
    tri: tuple[Tensor, Tensor],
    thread_proj: tuple[Tensor, Tensor],
    merge: str = "mean",
) -> Tensor:
    """Fuse token syntax, expanded utterance semantics, and thread context.

    Utterance-level vectors broadcast to each of their tokens, join the
    per-token syntactic features through a linear layer, then every thread
    concatenates those rows with its own encoder output and projects back to
    the hidden size. Tokens appearing on several threads combine according
    to ``merge``: averaged (default), summed, or first-thread-wins.
    """
    n_sum = gmap.n_sum
    token_utt = np.array([gmap.utterance_of(g) for g in range(n_sum)], dtype=np.int64)
    utter = ad.concat([h_spk, h_str], axis=-1)
    expanded = ad.gather_rows(utter, token_utt)
    h_tri = ad.linear(ad.concat([syn_tokens, expanded], axis=-1), tri[0], tri[1])

    pieces = []
    columns: list[int] = []  # global token index of every per-thread row
    for t, reps in zip(threads, thread_reps):
        idx = [g for u in t.members for g in gmap.utterance_token_range(u)]
        rows = ad.gather_rows(h_tri, idx)
        pieces.append(ad.linear(ad.concat([rows, reps], axis=-1), thread_proj[0], thread_proj[1]))
        columns.extend(idx)

    stacked = ad.concat(pieces, axis=0) if len(pieces) > 1 else pieces[0]
    scatter = np.zeros((n_sum, len(columns)))
    seen: set[int] = set()
    for col, g in enumerate(columns):
        if merge == "first" and g in seen:
            continue
        scatter[g, col] = 1.0
        seen.add(g)
    if merge == "mean":
        counts = scatter.sum(axis=1, keepdims=True)
        if (counts == 0).any():
            raise ValueError("aggregate: some token belongs to no thread")
        scatter = scatter / counts
    return ad.matmul(Tensor(scatter), stacked)


def grid_scores(h_d: Tensor, label_mlps: Sequence[MlpParams]) -> Tensor:
    """One head's per-cell label distribution: softmax over label-specific
    pairwise dot products v_i . v_j."""
    n = h_d.shape[0]
    grids = []
    for mlp in label_mlps:
        v = mlp.apply(h_d)
        grids.append(ad.reshape(ad.matmul(v, ad.transpose(v)), (n, n, 1)))
    return ad.softmax(ad.concat(grids, axis=-1), axis=-1)


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------


class BiLstmEncoder:
    """Trainable word embeddings + BiLSTM + linear projection.

    Sequences are wrapped in begin/end sentinels internally; token-level
    outputs cover only the real tokens, while the begin-sentinel output
    serves as the sequence summary vector.
    """

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, builder: _ParamBuilder):
        self.vocab = vocab
        self.word_emb = builder.embedding("encoder.word_emb", len(vocab.words), cfg.word_dim)
        self.fw = builder.lstm("encoder.fw", cfg.word_dim, cfg.enc_hidden)
        self.bw = builder.lstm("encoder.bw", cfg.word_dim, cfg.enc_hidden)
        self.proj_w = builder.matrix("encoder.proj_w", 2 * cfg.enc_hidden, cfg.d)
        self.proj_b = builder.bias("encoder.proj_b", cfg.d)

    def encode(self, texts: Sequence[str]) -> tuple[Tensor, Tensor]:
        """Return (token representations (n, d), summary vector (1, d))."""
        ids = (
            [self.vocab.words[BOS]]
            + [self.vocab.word_id(t) for t in texts]
            + [self.vocab.words[EOS]]
        )
        emb = ad.embedding_lookup(self.word_emb, ids)
        states = ad.bilstm(emb, self.fw, self.bw)
        proj = ad.linear(states, self.proj_w, self.proj_b)
        reps = ad.gather_rows(proj, list(range(1, len(texts) + 1)))
        summary = ad.gather_rows(proj, [0])
        return reps, summary

    def param_names(self) -> list[str]:
        return [
            "encoder.word_emb",
            "encoder.fw.w_ih",
            "encoder.fw.w_hh",
            "encoder.fw.bias",
            "encoder.bw.w_ih",
            "encoder.bw.w_hh",
            "encoder.bw.bias",
            "encoder.proj_w",
            "encoder.proj_b",
        ]


class PrecomputedEncoder:
    """Adapter that serves per-token vectors computed offline.

    File schema (JSON): ``{"dim": d, "dialogues": {dialogue_id: [utterance ->
    [token -> [d floats]]]}}``. Thread representations are the concatenation
    of the member utterances' vectors and the summary is the utterance mean,
    so context beyond the original encoding window is not recomputed.
    """

    def __init__(self, path: str | Path, d: int):
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        if blob.get("dim") != d:
            raise ValueError(f"precomputed vectors have dim {blob.get('dim')}, model wants {d}")
        self._table = {
            did: [np.asarray(u, dtype=np.float64) for u in utts]
            for did, utts in blob["dialogues"].items()
        }
        self.d = d

    def utterance(self, dialogue_id: str, index: int, n_tokens: int) -> tuple[Tensor, Tensor]:
        vecs = self._table[dialogue_id][index]
        if vecs.shape != (n_tokens, self.d):
            raise ValueError(
                f"precomputed vectors for {dialogue_id}[{index}] have shape "
                f"{vecs.shape}, expected {(n_tokens, self.d)}"
            )
        return Tensor(vecs), Tensor(vecs.mean(axis=0, keepdims=True))


# ---------------------------------------------------------------------------
# The assembled model
# ---------------------------------------------------------------------------


class TripleGnn:
    """Owns all parameters and runs dialogues to probability grids."""

    def __init__(
        self,
        cfg: ModelConfig,
        vocab: Vocabulary,
        precomputed: Optional[PrecomputedEncoder] = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        b = _ParamBuilder(cfg.seed)
        self.encoder = BiLstmEncoder(cfg, vocab, b)
        self.precomputed = precomputed

        self.pos_emb = b.embedding("pos.emb", len(vocab.pos), cfg.d_e)
        self.pos_fw = b.lstm("pos.fw", cfg.d_e, cfg.d_l // 2)
        self.pos_bw = b.lstm("pos.bw", cfg.d_e, cfg.d_l // 2)
        self.gcn_layers = [
            (b.matrix(f"gcn.{i}.w", cfg.d_l, cfg.d_l), b.bias(f"gcn.{i}.b", cfg.d_l))
            for i in range(cfg.gcn_layers)
        ]
        d_out = cfg.d // cfg.gat_heads
        self.spk_gat = [
            b.gat(f"spk_gat.h{k}", cfg.d, cfg.gat_dim, d_out, cfg.edge_dim, len(SPEAKER_TYPES))
            for k in range(cfg.gat_heads)
        ]
        self.str_gat = [
            b.gat(f"str_gat.h{k}", cfg.d, cfg.gat_dim, d_out, cfg.edge_dim, len(STRUCTURE_TYPES))
            for k in range(cfg.gat_heads)
        ]
        self.inter_w1 = b.matrix("inter.w1", cfg.d, cfg.d)
        self.inter_w2 = b.matrix("inter.w2", cfg.d, cfg.d)
        self.tri_w = b.matrix("tri.w", cfg.d_l + 2 * cfg.d, cfg.d)
        self.tri_b = b.bias("tri.b", cfg.d)
        self.thread_w = b.matrix("thread.w", 2 * cfg.d, cfg.d)
        self.thread_b = b.bias("thread.b", cfg.d)
        self.heads = {
            "entity": [
                b.mlp(f"ent.{lab.name.lower()}", cfg.d, cfg.mlp_hidden, cfg.mlp_out)
                for lab in ENTITY_LABELS
            ],
            "pair": [
                b.mlp(f"pair.{lab.name.lower()}", cfg.d, cfg.mlp_hidden, cfg.mlp_out)
                for lab in PAIR_LABELS
            ],
            "polarity": [
                b.mlp(f"pol.{lab.name.lower()}", cfg.d, cfg.mlp_hidden, cfg.mlp_out)
                for lab in POLARITY_LABELS
            ],
        }
        self.params: dict[str, Tensor] = b.params

    # -- spec'd building blocks ------------------------------------------------

    def encode_utterance(self, u: Utterance) -> Tensor:
        reps, _ = self._encode_utterance(None, u)
        return reps

    def _encode_utterance(self, d: Optional[Dialogue], u: Utterance) -> tuple[Tensor, Tensor]:
        if self.precomputed is not None and d is not None:
            return self.precomputed.utterance(d.id, u.index, len(u.tokens))
        return self.encoder.encode([t.text for t in u.tokens])

    def encode_thread(self, t: Thread, d: Dialogue) -> Tensor:
        """Encode the thread's utterances as one concatenated sequence."""
        if self.precomputed is not None:
            parts = [
                self.precomputed.utterance(d.id, u, len(d.utterances[u].tokens))[0]
                for u in t.members
            ]
            return parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
        texts = [tok.text for u in t.members for tok in d.utterances[u].tokens]
        reps, _ = self.encoder.encode(texts)
        return reps

    def pos_pipeline(self, u: Utterance) -> Tensor:
        """POS ids -> embedding -> BiLSTM context features (n, d_l)."""
        ids = [self.vocab.pos_id(t.pos_tag) for t in u.tokens]
        emb = ad.embedding_lookup(self.pos_emb, ids)
        return ad.bilstm(emb, self.pos_fw, self.pos_bw)

    # -- full forward ------------------------------------------------------

    def forward(
        self,
        d: Dialogue,
        train: bool = False,
        step: int = 0,
        trace: Optional[dict] = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Probability grids (entity, pair, polarity) for one dialogue."""
        cfg = self.cfg
        gmap = global_token_map(d)
        threads = extract_threads(d)
        n = len(d.utterances)

        def drop(x: Tensor, tag: str) -> Tensor:
            seed = ad.fold_seed(cfg.seed, tag, step)
            return ad.dropout(x, cfg.dropout, train, seed)

        summaries = []
        for u in d.utterances:
            _, summary = self._encode_utterance(d, u)
            summaries.append(summary)
        node_feats = drop(ad.concat(summaries, axis=0), "enc.nodes")

        if cfg.use_syn_gcn:
            syn_rows = []
            for u in d.utterances:
                c = self.pos_pipeline(u)
                g = build_syntactic_graph(u, normalize=cfg.normalize_syn)
                syn_rows.append(syn_gcn_forward(g, c, self.gcn_layers))
            syn_tokens = drop(ad.concat(syn_rows, axis=0), "gcn.out")
        else:
            syn_tokens = Tensor(np.zeros((gmap.n_sum, cfg.d_l)))

        if cfg.use_spk_gat:
            spk_matrix = build_speaker_graph(d)
            h_spk = drop(
                gat_forward(
                    spk_matrix,
                    node_feats,
                    self.spk_gat,
                    SPEAKER_TYPES,
                    cfg.leaky_slope,
                    trace,
                    "spk_attention",
                ),
                "spk.out",
            )
        else:
            h_spk = Tensor(np.zeros((n, cfg.d)))

        if cfg.use_str_gat:
            str_matrix = build_structure_graph(d, threads, cross_branch=cfg.cross_branch)
            h_str = drop(
                gat_forward(
                    str_matrix,
                    node_feats,
                    self.str_gat,
                    STRUCTURE_TYPES,
                    cfg.leaky_slope,
                    trace,
                    "str_attention",
                ),
                "str.out",
            )
        else:
            h_str = Tensor(np.zeros((n, cfg.d)))

        if cfg.use_spk_gat and cfg.use_str_gat:
            h_spk, h_str = interaction(h_spk, h_str, self.inter_w1, self.inter_w2, trace)

        thread_reps = [drop(self.encode_thread(t, d), f"thr.{k}") for k, t in enumerate(threads)]
        h_d = aggregate(
            syn_tokens,
            h_spk,
            h_str,
            threads,
            thread_reps,
            gmap,
            (self.tri_w, self.tri_b),
            (self.thread_w, self.thread_b),
            merge=cfg.thread_merge,
        )

        probs = tuple(grid_scores(h_d, self.heads[name]) for name in ("entity", "pair", "polarity"))
        if trace is not None:
            trace["grid_probs"] = [p.data.copy() for p in probs]
        return probs

    # -- parameter bookkeeping ----------------------------------------------

    def all_params(self) -> dict[str, Tensor]:
        return dict(self.params)

    def trainable_params(self) -> dict[str, Tensor]:
        """Parameters the optimizer may update, honoring ablation flags.

        A disabled module contributes zeros to the forward pass, so its
        parameters are also withheld from the update set. The interaction
        weights only train when both GATs are live.
        """
        cfg = self.cfg
        excluded: list[str] = []
        if not cfg.use_syn_gcn:
            excluded += ["pos.", "gcn."]
        if not cfg.use_spk_gat:
            excluded.append("spk_gat.")
        if not cfg.use_str_gat:
            excluded.append("str_gat.")
        if not (cfg.use_spk_gat and cfg.use_str_gat):
            excluded.append("inter.")
        return {
            name: p
            for name, p in self.params.items()
            if not any(name.startswith(prefix) for prefix in excluded)
        }

    def load_param_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            if name not in self.params:
                raise KeyError(f"checkpoint parameter {name} not in model")
            if tuple(arr.shape) != self.params[name].shape:
                raise ad.ShapeMismatchError(
                    f"param {name}: checkpoint {arr.shape} vs model {self.params[name].shape}"
                )
            self.params[name].data = np.asarray(arr, dtype=ad.get_default_dtype())
