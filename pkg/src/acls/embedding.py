"""Token-embedding provider: the L x d matrices both heads consume and
the adversarial step perturbs.

Row 0 of every embedded sequence is a learned sentence-summary vector;
token rows follow. The table can be trained from scratch or loaded
frozen from a file of precomputed vectors (header "d=<int> v=<int>",
then v lines of d space-separated floats).
"""

import numpy as np

from .errors import DataError
from .corpus import PAD_ID
from .numerics import ParamTensor, init_params
from .rng import derive_seed


class EmbeddingTable:
    """Vocab-sized vector table plus the learned summary-row vector.

    The PAD row is pinned to zero and never receives gradient. When
    ``trainable`` is false the token table is excluded from optimization;
    the summary vector belongs to the classifier and stays trainable.
    """

    def __init__(self, table: ParamTensor, cls: ParamTensor, trainable: bool = True):
        if table.value.ndim != 2:
            raise ValueError("embedding table must be 2-D")
        if cls.value.shape != (table.value.shape[1],):
            raise ValueError("summary vector width must match table width")
        table.trainable = trainable
        self.table = table
        self.cls = cls
        self.trainable = trainable

    @property
    def size(self) -> int:
        return self.table.value.shape[0]

    @property
    def dim(self) -> int:
        return self.table.value.shape[1]

    @classmethod
    def build(cls, vocab_size: int, dim: int, seed: int) -> "EmbeddingTable":
        if dim < 1:
            raise ValueError("embedding width must be positive")
        values = init_params((vocab_size, dim), derive_seed(seed, 0xE0),
                             fans=(dim, dim))
        values[PAD_ID, :] = 0.0
        table = ParamTensor("embedding.table", values)
        summary = ParamTensor(
            "embedding.cls",
            init_params((dim,), derive_seed(seed, 0xE1), fans=(dim, dim)))
        return cls(table, summary, trainable=True)


class EmbeddingMatrix:
    """Realized per-sequence embedding: values, grad buffer, true length.

    ``length`` counts the valid rows (summary row + true tokens); any
    rows past it are padding, all-zero, and receive zero gradient.
    """

    def __init__(self, values: np.ndarray, length: int):
        self.values = values
        self.grad = np.zeros_like(values)
        self.length = length

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def embed(token_ids, table: EmbeddingTable, length: int | None = None) -> EmbeddingMatrix:
    """Gather table rows for a (possibly padded) id sequence.

    Row 0 is the summary vector; row i+1 is the table row for
    token_ids[i]. ``length`` is the true token count (defaults to all of
    ``token_ids``); PAD ids beyond it hit the zero PAD row.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("token ids must be a flat sequence")
    if ids.size and (ids.min() < 0 or ids.max() >= table.size):
        raise DataError(f"token id out of range for vocabulary of {table.size}")
    true_len = ids.size if length is None else int(length)
    if not 0 <= true_len <= ids.size:
        raise ValueError("length exceeds the id sequence")
    values = np.empty((ids.size + 1, table.dim), dtype=np.float64)
    values[0] = table.cls.value
    if ids.size:
        values[1:] = table.table.value[ids]
    return EmbeddingMatrix(values, length=true_len + 1)


def embed_backward(em: EmbeddingMatrix, token_ids, table: EmbeddingTable) -> None:
    """Scatter the sequence gradient back into the provider.

    The summary-row gradient always flows to the summary vector; token
    rows scatter-add into the table only when it is trainable.
    """
    table.cls.grad += em.grad[0]
    if not table.trainable:
        return
    ids = np.asarray(token_ids, dtype=np.int64)[:em.length - 1]
    if ids.size:
        np.add.at(table.table.grad, ids, em.grad[1:em.length])


def save_embeddings(table: EmbeddingTable, path) -> None:
    """Write the token table in the frozen-provider text format."""
    v, d = table.table.value.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"d={d} v={v}\n")
        for row in table.table.value:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_frozen_embeddings(path) -> EmbeddingTable:
    """Load a frozen token table; the PAD row is forced to zero.

    The returned table is excluded from optimization. Its summary vector
    starts at zero and is reseeded when a model is assembled around it.
    """
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read embeddings {path}: {exc}") from exc
    with fh:
        header = fh.readline().split()
        try:
            fields = dict(part.split("=", 1) for part in header)
            d = int(fields["d"])
            v = int(fields["v"])
        except (ValueError, KeyError) as exc:
            raise DataError(f"{path}: malformed embedding header") from exc
        if d < 1 or v < 2:
            raise DataError(f"{path}: embedding header out of range (d={d}, v={v})")
        values = np.zeros((v, d), dtype=np.float64)
        for i in range(v):
            line = fh.readline()
            if not line:
                raise DataError(f"{path}: expected {v} rows, file ends at row {i}")
            parts = line.split()
            if len(parts) != d:
                raise DataError(f"{path}: row {i} has {len(parts)} values, expected {d}")
            try:
                values[i] = [float(p) for p in parts]
            except ValueError as exc:
                raise DataError(f"{path}: row {i} holds a non-numeric value") from exc
        if fh.readline().strip():
            raise DataError(f"{path}: trailing data after {v} rows")
    values[PAD_ID, :] = 0.0
    table = ParamTensor("embedding.table", values, trainable=False)
    summary = ParamTensor("embedding.cls", np.zeros(d, dtype=np.float64))
    return EmbeddingTable(table, summary, trainable=False)
