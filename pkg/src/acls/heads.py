"""Feature heads and the fused classifier.

Two parallel extractors read every embedded sequence: a width-1
convolution bank with max-over-positions pooling (local features) and a
bidirectional recurrent pass whose final hidden states are concatenated
(contextual features). Their outputs join the sentence-summary row in a
single fully connected classifier. Backward passes are hand-derived;
every parameter is covered by the finite-difference oracle in the tests.
"""

import zlib

import numpy as np

from .embedding import EmbeddingMatrix, EmbeddingTable, embed, embed_backward
from .errors import ConfigError
from .numerics import ParamTensor, init_params, sigmoid
from .rng import derive_seed
from . import kernels


def _tensor_seed(seed: int, name: str) -> int:
    return derive_seed(seed, zlib.crc32(name.encode("utf-8")))


class ConvHead:
    """Bank of K width-1 kernels, each a d-vector dotted with every row."""

    def __init__(self, kernels_: ParamTensor):
        self.kernels = kernels_

    @property
    def count(self) -> int:
        return self.kernels.value.shape[0]

    @property
    def width(self) -> int:
        return self.kernels.value.shape[1]

    @classmethod
    def build(cls, num_kernels: int, dim: int, seed: int) -> "ConvHead":
        if num_kernels < 1:
            raise ConfigError("need at least one convolution kernel")
        return cls(ParamTensor("conv.kernels",
                               init_params((num_kernels, dim), seed)))


def conv_forward(em: EmbeddingMatrix, head: ConvHead):
    """Feature map over all valid rows plus per-kernel max pooling.

    Returns (feature_map, pooled, argmax): the map has one row per valid
    position, pooling takes the first maximal position per kernel.
    """
    if em.values.shape[1] != head.width:
        raise ValueError(f"embedding width {em.values.shape[1]} does not match "
                         f"kernel width {head.width}")
    x = em.values[:em.length]
    fmap = x @ head.kernels.value.T
    argmax = np.argmax(fmap, axis=0)
    pooled = fmap[argmax, np.arange(fmap.shape[1])]
    return fmap, pooled, argmax


def conv_backward(d_pooled: np.ndarray, argmax: np.ndarray,
                  em: EmbeddingMatrix, head: ConvHead) -> None:
    """Route pooled gradients to their argmax positions, then apply the
    adjoint of the width-1 convolution."""
    t = em.length
    k = head.count
    dmap = np.zeros((t, k), dtype=np.float64)
    dmap[argmax, np.arange(k)] = d_pooled
    head.kernels.grad += dmap.T @ em.values[:t]
    em.grad[:t] += dmap @ head.kernels.value


class GateParams:
    """One gate: input matrix, recurrent matrix, bias."""

    def __init__(self, w_in: ParamTensor, w_rec: ParamTensor, bias: ParamTensor):
        self.w_in = w_in
        self.w_rec = w_rec
        self.bias = bias


class LstmDirection:
    """Gate parameters for one scan direction."""

    GATE_ORDER = ("input", "forget", "cell", "output")

    def __init__(self, input: GateParams, forget: GateParams,
                 cell: GateParams, output: GateParams):
        self.input = input
        self.forget = forget
        self.cell = cell
        self.output = output

    def gates(self):
        return (self.input, self.forget, self.cell, self.output)

    @property
    def hidden(self) -> int:
        return self.input.bias.value.shape[0]

    def stacked(self):
        """Gate tensors stacked into (4h, d), (4h, h), (4h,) arrays."""
        wx = np.vstack([g.w_in.value for g in self.gates()])
        wh = np.vstack([g.w_rec.value for g in self.gates()])
        b = np.concatenate([g.bias.value for g in self.gates()])
        return wx, wh, b

    def add_stacked_grads(self, dwx, dwh, db) -> None:
        h = self.hidden
        for gi, gate in enumerate(self.gates()):
            gate.w_in.grad += dwx[gi * h:(gi + 1) * h]
            gate.w_rec.grad += dwh[gi * h:(gi + 1) * h]
            gate.bias.grad += db[gi * h:(gi + 1) * h]

    @classmethod
    def build(cls, prefix: str, dim: int, hidden: int, seed: int) -> "LstmDirection":
        gates = []
        for gname in cls.GATE_ORDER:
            base = f"{prefix}.{gname}"
            gates.append(GateParams(
                ParamTensor(f"{base}.w_in",
                            init_params((hidden, dim), _tensor_seed(seed, f"{base}.w_in"))),
                ParamTensor(f"{base}.w_rec",
                            init_params((hidden, hidden), _tensor_seed(seed, f"{base}.w_rec"))),
                ParamTensor(f"{base}.bias", np.zeros(hidden, dtype=np.float64)),
            ))
        return cls(*gates)


class LstmParams:
    """Both scan directions of the recurrent head."""

    def __init__(self, fwd: LstmDirection, bwd: LstmDirection):
        self.fwd = fwd
        self.bwd = bwd

    @property
    def hidden(self) -> int:
        return self.fwd.hidden

    def stacked_pair(self):
        return self.fwd.stacked(), self.bwd.stacked()

    @classmethod
    def build(cls, dim: int, hidden: int, seed: int) -> "LstmParams":
        return cls(LstmDirection.build("lstm_fwd", dim, hidden, seed),
                   LstmDirection.build("lstm_bwd", dim, hidden, seed))


def lstm_cell(x, h_prev, c_prev, direction: LstmDirection):
    """One recurrence step, written out gate by gate.

    Reference path used by the tests to pin down the sequence kernels;
    the training path runs the batched kernels instead.
    """
    def _affine(gate):
        return gate.w_in.value @ x + gate.w_rec.value @ h_prev + gate.bias.value

    i = sigmoid(_affine(direction.input))
    f = sigmoid(_affine(direction.forget))
    g = np.tanh(_affine(direction.cell))
    o = sigmoid(_affine(direction.output))
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


class _BilstmCache:
    __slots__ = ("x", "x_rev", "fwd", "bwd", "stacks")

    def __init__(self, x, x_rev, fwd, bwd, stacks):
        self.x = x
        self.x_rev = x_rev
        self.fwd = fwd      # (hs, cs, gates) over x
        self.bwd = bwd      # (hs, cs, gates) over reversed x
        self.stacks = stacks


def bilstm_forward(em: EmbeddingMatrix, params: LstmParams, stacks=None):
    """Scan the token rows in both directions; concat the final states.

    The summary row (position 0) is skipped: the recurrent head models
    the token sequence itself. Padding rows never enter either scan.
    """
    t = em.length - 1
    if t < 1:
        raise ValueError("recurrent head needs at least one token row")
    if stacks is None:
        stacks = params.stacked_pair()
    (wx_f, wh_f, b_f), (wx_b, wh_b, b_b) = stacks
    x = np.ascontiguousarray(em.values[1:em.length])
    x_rev = np.ascontiguousarray(x[::-1])
    fwd = kernels.lstm_seq_forward(x, wx_f, wh_f, b_f)
    bwd = kernels.lstm_seq_forward(x_rev, wx_b, wh_b, b_b)
    out = np.concatenate([fwd[0][-1], bwd[0][-1]])
    return out, _BilstmCache(x, x_rev, fwd, bwd, stacks)


def bilstm_backward(d_out: np.ndarray, cache: _BilstmCache,
                    em: EmbeddingMatrix, params: LstmParams) -> None:
    """Backpropagate through both scans and accumulate all gate grads."""
    h = params.hidden
    (wx_f, wh_f, _), (wx_b, wh_b, _) = cache.stacks
    hs, cs, gates = cache.fwd
    dx_f, dwx_f, dwh_f, db_f = kernels.lstm_seq_backward(
        cache.x, hs, cs, gates, wx_f, wh_f, np.ascontiguousarray(d_out[:h]))
    hs, cs, gates = cache.bwd
    dx_b, dwx_b, dwh_b, db_b = kernels.lstm_seq_backward(
        cache.x_rev, hs, cs, gates, wx_b, wh_b, np.ascontiguousarray(d_out[h:]))
    em.grad[1:em.length] += dx_f
    em.grad[1:em.length] += dx_b[::-1]
    params.fwd.add_stacked_grads(dwx_f, dwh_f, db_f)
    params.bwd.add_stacked_grads(dwx_b, dwh_b, db_b)


class FusionClassifier:
    """Fully connected layer over the concatenated feature channels."""

    def __init__(self, weight: ParamTensor, bias: ParamTensor):
        self.weight = weight
        self.bias = bias

    @property
    def n_classes(self) -> int:
        return self.weight.value.shape[0]

    @property
    def in_width(self) -> int:
        return self.weight.value.shape[1]

    @classmethod
    def build(cls, n_classes: int, in_width: int, seed: int) -> "FusionClassifier":
        return cls(ParamTensor("fc.weight",
                               init_params((n_classes, in_width),
                                           _tensor_seed(seed, "fc.weight"))),
                   ParamTensor("fc.bias", np.zeros(n_classes, dtype=np.float64)))


def fuse_and_classify(cls_vec, cnn_vec, lstm_vec, fc: FusionClassifier):
    """logits = W @ concat(summary, conv, recurrent) + b.

    Channels set to None (disabled heads) are left out of the concat.
    """
    parts = [p for p in (cls_vec, cnn_vec, lstm_vec) if p is not None]
    fused = np.concatenate(parts)
    if fused.shape[0] != fc.in_width:
        raise ValueError(f"fused width {fused.shape[0]} does not match "
                         f"classifier input width {fc.in_width}")
    return fc.weight.value @ fused + fc.bias.value, fused


def fuse_backward(dlogits: np.ndarray, fused: np.ndarray,
                  fc: FusionClassifier) -> np.ndarray:
    fc.weight.grad += np.outer(dlogits, fused)
    fc.bias.grad += dlogits
    return fc.weight.value.T @ dlogits


class ModelParams:
    """Every parameter of one model instance, heads included per config."""

    def __init__(self, embedding: EmbeddingTable, conv: ConvHead | None,
                 lstm: LstmParams | None, fc: FusionClassifier):
        if conv is None and lstm is None:
            raise ConfigError("at least one feature head must be enabled")
        self.embedding = embedding
        self.conv = conv
        self.lstm = lstm
        self.fc = fc

    @property
    def use_cnn(self) -> bool:
        return self.conv is not None

    @property
    def use_bilstm(self) -> bool:
        return self.lstm is not None

    @property
    def n_classes(self) -> int:
        return self.fc.n_classes

    @property
    def fusion_width(self) -> int:
        width = self.embedding.dim
        if self.conv is not None:
            width += self.conv.count
        if self.lstm is not None:
            width += 2 * self.lstm.hidden
        return width

    @classmethod
    def build(cls, vocab_size: int, n_classes: int, cfg,
              frozen: EmbeddingTable | None = None) -> "ModelParams":
        """Assemble parameters for a config; ``frozen`` plugs in a
        pre-loaded provider table instead of a fresh trainable one."""
        if not (cfg.use_cnn or cfg.use_bilstm):
            raise ConfigError("at least one feature head must be enabled")
        d = cfg.embed_dim
        if frozen is not None:
            if frozen.dim != d:
                raise ConfigError(f"frozen embeddings have width {frozen.dim}, "
                                  f"config expects {d}")
            if frozen.size != vocab_size:
                raise ConfigError(f"frozen embeddings cover {frozen.size} tokens, "
                                  f"vocabulary has {vocab_size}")
            embedding = frozen
            embedding.cls.value[...] = init_params(
                (d,), _tensor_seed(cfg.seed, "embedding.cls"), fans=(d, d))
        else:
            embedding = EmbeddingTable.build(vocab_size, d, _tensor_seed(cfg.seed, "embedding"))
        conv = ConvHead.build(cfg.num_kernels, d,
                              _tensor_seed(cfg.seed, "conv.kernels")) if cfg.use_cnn else None
        lstm = LstmParams.build(d, cfg.hidden_size, cfg.seed) if cfg.use_bilstm else None
        width = d + (cfg.num_kernels if cfg.use_cnn else 0) \
                  + (2 * cfg.hidden_size if cfg.use_bilstm else 0)
        fc = FusionClassifier.build(n_classes, width, cfg.seed)
        return cls(embedding, conv, lstm, fc)

    def tensors(self) -> list[ParamTensor]:
        """All tensors in a fixed order (frozen ones included)."""
        out = [self.embedding.table, self.embedding.cls]
        if self.conv is not None:
            out.append(self.conv.kernels)
        if self.lstm is not None:
            for direction in (self.lstm.fwd, self.lstm.bwd):
                for gate in direction.gates():
                    out.extend([gate.w_in, gate.w_rec, gate.bias])
        out.extend([self.fc.weight, self.fc.bias])
        return out

    def zero_grads(self) -> None:
        for t in self.tensors():
            t.zero_grad()

    def grads_are_zero(self) -> bool:
        return all(not np.any(t.grad) for t in self.tensors())


class ExampleCache:
    """Per-example forward state retained for the backward pass."""

    __slots__ = ("em", "conv_argmax", "lstm_cache", "fused")

    def __init__(self, em, conv_argmax, lstm_cache, fused):
        self.em = em
        self.conv_argmax = conv_argmax
        self.lstm_cache = lstm_cache
        self.fused = fused


def model_forward_embedded(ems: list[EmbeddingMatrix], params: ModelParams):
    """Forward pass from realized embedding matrices to logits."""
    logits = np.empty((len(ems), params.n_classes), dtype=np.float64)
    caches = []
    stacks = params.lstm.stacked_pair() if params.lstm is not None else None
    for row, em in enumerate(ems):
        cls_vec = em.values[0]
        cnn_vec = None
        conv_argmax = None
        if params.conv is not None:
            _, cnn_vec, conv_argmax = conv_forward(em, params.conv)
        lstm_vec = None
        lstm_cache = None
        if params.lstm is not None:
            lstm_vec, lstm_cache = bilstm_forward(em, params.lstm, stacks)
        logits[row], fused = fuse_and_classify(cls_vec, cnn_vec, lstm_vec, params.fc)
        caches.append(ExampleCache(em, conv_argmax, lstm_cache, fused))
    return logits, caches


def model_forward(batch, params: ModelParams):
    """Embed a batch and run both heads; returns (logits, caches)."""
    ems = [embed(batch.token_ids[i], params.embedding, int(batch.lengths[i]))
           for i in range(batch.size)]
    return model_forward_embedded(ems, params)


def model_backward(dlogits: np.ndarray, caches: list[ExampleCache],
                   token_ids: np.ndarray, params: ModelParams) -> None:
    """Accumulate gradients for every parameter from per-example caches.

    Also fills each cache's embedding-matrix grad, which the adversarial
    step reads before the scatter into the provider table.
    """
    d = params.embedding.dim
    k = params.conv.count if params.conv is not None else 0
    for row, cache in enumerate(caches):
        dfused = fuse_backward(dlogits[row], cache.fused, params.fc)
        cache.em.grad[0] += dfused[:d]
        offset = d
        if params.conv is not None:
            conv_backward(dfused[offset:offset + k], cache.conv_argmax,
                          cache.em, params.conv)
            offset += k
        if params.lstm is not None:
            bilstm_backward(dfused[offset:], cache.lstm_cache, cache.em, params.lstm)
        embed_backward(cache.em, token_ids[row], params.embedding)
