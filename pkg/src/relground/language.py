"""Expression encoding: embeddings, a two-layer bidirectional LSTM, and
soft attention that splits an expression into subject, relation and object
component vectors.

Per token the encoder exposes the concatenation of both directions of both
LSTM layers. Three attention heads score those states, and each head's
weights pool the raw word embeddings (not the hidden states) into one
component vector, so the component vectors live in embedding space.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import xavier_init, zeros_param

__all__ = [
    "UnknownTokenError",
    "Vocabulary",
    "LstmCellParams",
    "init_lstm_cell",
    "lstm_scan",
    "LanguageParams",
    "init_language_params",
    "encode_sequence",
    "ParsedExpression",
    "attend_and_pool",
    "parse_expression",
    "BaselineEncoderParams",
    "init_baseline_encoder",
    "encode_last_state",
    "load_word_vectors",
    "embedding_from_pretrained",
]


class UnknownTokenError(ValueError):
    """A token outside the closed vocabulary was encountered."""


class Vocabulary:
    """Closed token inventory with stable integer ids."""

    def __init__(self, tokens):
        self.tokens = list(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, tokens) -> np.ndarray:
        ids = []
        for tok in tokens:
            if tok not in self.index:
                raise UnknownTokenError(f"token {tok!r} is not in the vocabulary")
            ids.append(self.index[tok])
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]


@dataclasses.dataclass
class LstmCellParams:
    """One LSTM direction: per-gate weights over [input; hidden] plus biases."""

    w_input: Tensor
    w_forget: Tensor
    w_output: Tensor
    w_cell: Tensor
    b_input: Tensor
    b_forget: Tensor
    b_output: Tensor
    b_cell: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.w_input.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_input": self.w_input,
            f"{prefix}.w_forget": self.w_forget,
            f"{prefix}.w_output": self.w_output,
            f"{prefix}.w_cell": self.w_cell,
            f"{prefix}.b_input": self.b_input,
            f"{prefix}.b_forget": self.b_forget,
            f"{prefix}.b_output": self.b_output,
            f"{prefix}.b_cell": self.b_cell,
        }


def init_lstm_cell(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> LstmCellParams:
    """Xavier gate weights, zero biases, forget-gate bias 1.0."""
    def w():
        return xavier_init((hidden_dim, input_dim + hidden_dim), rng)

    params = LstmCellParams(
        w_input=w(),
        w_forget=w(),
        w_output=w(),
        w_cell=w(),
        b_input=zeros_param(hidden_dim),
        b_forget=zeros_param(hidden_dim),
        b_output=zeros_param(hidden_dim),
        b_cell=zeros_param(hidden_dim),
    )
    params.b_forget.values[...] = 1.0
    return params


def lstm_scan(cell: LstmCellParams, inputs: list[Tensor], reverse: bool = False) -> list[Tensor]:
    """Run one LSTM direction over a token sequence.

    States start at zero. The returned list is aligned with the input order
    regardless of scan direction.
    """
    hidden_dim = cell.hidden_dim
    h = Tensor(np.zeros(hidden_dim))
    c = Tensor(np.zeros(hidden_dim))
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    outputs: list[Tensor | None] = [None] * len(inputs)
    for t in order:
        xh = ad.concat([inputs[t], h])
        gate_in = ad.sigmoid(ad.matmul(cell.w_input, xh) + cell.b_input)
        gate_forget = ad.sigmoid(ad.matmul(cell.w_forget, xh) + cell.b_forget)
        gate_out = ad.sigmoid(ad.matmul(cell.w_output, xh) + cell.b_output)
        candidate = ad.tanh(ad.matmul(cell.w_cell, xh) + cell.b_cell)
        c = gate_forget * c + gate_in * candidate
        h = gate_out * ad.tanh(c)
        outputs[t] = h
    return outputs


@dataclasses.dataclass
class LanguageParams:
    """Embeddings, the four LSTM directions, and the three attention vectors."""

    embedding: Tensor
    layer1_fw: LstmCellParams
    layer1_bw: LstmCellParams
    layer2_fw: LstmCellParams
    layer2_bw: LstmCellParams
    attend_subject: Tensor
    attend_relation: Tensor
    attend_object: Tensor

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def state_dim(self) -> int:
        """Per-token state width: both directions of both layers."""
        return 4 * self.layer1_fw.hidden_dim

    def named(self) -> dict[str, Tensor]:
        out = {"embedding": self.embedding}
        out.update(self.layer1_fw.named("lstm1_fw"))
        out.update(self.layer1_bw.named("lstm1_bw"))
        out.update(self.layer2_fw.named("lstm2_fw"))
        out.update(self.layer2_bw.named("lstm2_bw"))
        out["attend_subject"] = self.attend_subject
        out["attend_relation"] = self.attend_relation
        out["attend_object"] = self.attend_object
        return out


def init_language_params(
    vocab_size: int, embed_dim: int, hidden_dim: int, rng: np.random.Generator
) -> LanguageParams:
    return LanguageParams(
        embedding=xavier_init((vocab_size, embed_dim), rng),
        layer1_fw=init_lstm_cell(embed_dim, hidden_dim, rng),
        layer1_bw=init_lstm_cell(embed_dim, hidden_dim, rng),
        layer2_fw=init_lstm_cell(2 * hidden_dim, hidden_dim, rng),
        layer2_bw=init_lstm_cell(2 * hidden_dim, hidden_dim, rng),
        attend_subject=xavier_init((4 * hidden_dim,), rng),
        attend_relation=xavier_init((4 * hidden_dim,), rng),
        attend_object=xavier_init((4 * hidden_dim,), rng),
    )


def encode_sequence(
    token_ids: np.ndarray,
    params: LanguageParams,
    training: bool = False,
    dropout_keep: float = 0.7,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Token ids to (per-token states (T, 4H), embeddings (T, E)).

    Dropout applies to the concatenated states only, and only in training.
    """
    if len(token_ids) == 0:
        raise ValueError("cannot encode an empty token sequence")
    embedded = ad.take_rows(params.embedding, token_ids)
    xs = [ad.row(embedded, t) for t in range(len(token_ids))]
    l1f = lstm_scan(params.layer1_fw, xs)
    l1b = lstm_scan(params.layer1_bw, xs, reverse=True)
    layer1 = [ad.concat([l1f[t], l1b[t]]) for t in range(len(xs))]
    l2f = lstm_scan(params.layer2_fw, layer1)
    l2b = lstm_scan(params.layer2_bw, layer1, reverse=True)
    rows = [ad.concat([l1f[t], l1b[t], l2f[t], l2b[t]]) for t in range(len(xs))]
    states = ad.stack(rows)
    states = ad.dropout(states, dropout_keep, training, rng)
    return states, embedded


@dataclasses.dataclass
class ParsedExpression:
    """Component vectors and their attention maps for one expression."""

    subject_vec: Tensor
    relation_vec: Tensor
    object_vec: Tensor
    subject_attention: Tensor
    relation_attention: Tensor
    object_attention: Tensor

    def attention_arrays(self) -> dict[str, np.ndarray]:
        return {
            "subject": self.subject_attention.values.copy(),
            "relation": self.relation_attention.values.copy(),
            "object": self.object_attention.values.copy(),
        }


def attend_and_pool(states: Tensor, embedded: Tensor, params: LanguageParams) -> ParsedExpression:
    """Score states with each head; pool the raw embeddings by those weights."""
    heads = {}
    for name, vec in (
        ("subject", params.attend_subject),
        ("relation", params.attend_relation),
        ("object", params.attend_object),
    ):
        weights = ad.softmax(ad.matmul(states, vec), axis=-1)
        pooled = ad.matmul(weights, embedded)
        heads[name] = (weights, pooled)
    return ParsedExpression(
        subject_vec=heads["subject"][1],
        relation_vec=heads["relation"][1],
        object_vec=heads["object"][1],
        subject_attention=heads["subject"][0],
        relation_attention=heads["relation"][0],
        object_attention=heads["object"][0],
    )


def parse_expression(
    token_ids: np.ndarray,
    params: LanguageParams,
    training: bool = False,
    dropout_keep: float = 0.7,
    rng: np.random.Generator | None = None,
) -> ParsedExpression:
    states, embedded = encode_sequence(token_ids, params, training, dropout_keep, rng)
    return attend_and_pool(states, embedded, params)


@dataclasses.dataclass
class BaselineEncoderParams:
    """Single-direction LSTM whose last state is projected to embedding size."""

    embedding: Tensor
    lstm: LstmCellParams
    project_w: Tensor
    project_b: Tensor

    def named(self) -> dict[str, Tensor]:
        out = {"embedding": self.embedding}
        out.update(self.lstm.named("lstm"))
        out["project_w"] = self.project_w
        out["project_b"] = self.project_b
        return out


def init_baseline_encoder(
    vocab_size: int, embed_dim: int, hidden_dim: int, rng: np.random.Generator
) -> BaselineEncoderParams:
    return BaselineEncoderParams(
        embedding=xavier_init((vocab_size, embed_dim), rng),
        lstm=init_lstm_cell(embed_dim, hidden_dim, rng),
        project_w=xavier_init((embed_dim, hidden_dim), rng),
        project_b=zeros_param(embed_dim),
    )


def encode_last_state(token_ids: np.ndarray, params: BaselineEncoderParams) -> Tensor:
    """Whole-expression vector: final LSTM state through a linear projection."""
    if len(token_ids) == 0:
        raise ValueError("cannot encode an empty token sequence")
    embedded = ad.take_rows(params.embedding, token_ids)
    xs = [ad.row(embedded, t) for t in range(len(token_ids))]
    hs = lstm_scan(params.lstm, xs)
    return ad.matmul(params.project_w, hs[-1]) + params.project_b


def load_word_vectors(path) -> dict[str, np.ndarray]:
    """Parse a whitespace-separated embedding text file (word v1 v2 ...)."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            word, rest = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in rest], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-numeric embedding entry") from exc
            if word in vectors:
                raise ValueError(f"line {lineno}: duplicate word {word!r}")
            vectors[word] = vec
    return vectors


def embedding_from_pretrained(vocab: Vocabulary, vectors: dict[str, np.ndarray]) -> Tensor:
    """Build the embedding table for a vocabulary from loaded word vectors."""
    missing = [tok for tok in vocab.tokens if tok not in vectors]
    if missing:
        raise UnknownTokenError(f"no pretrained vector for tokens: {missing}")
    dims = {vectors[tok].shape[0] for tok in vocab.tokens}
    if len(dims) != 1:
        raise ValueError(f"inconsistent pretrained vector sizes: {sorted(dims)}")
    table = np.stack([vectors[tok] for tok in vocab.tokens])
    return Tensor(table, requires_grad=True)
