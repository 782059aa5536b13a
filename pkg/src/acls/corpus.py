"""Corpus handling: labeled examples, label taxonomy, tokenization,
vocabulary construction, deterministic splits, and padded batches.

Dataset files are UTF-8 JSON lines: {"text": "...", "label": <name or id>}.
Label-map files are one class name per line; line order defines the ids.
"""

import json
from collections import Counter
from importlib import resources

import numpy as np

from .errors import DataError
from .rng import Xoshiro256

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_CJK_RANGES = (
    (0x3400, 0x4DBF),    # ideograph extension A
    (0x4E00, 0x9FFF),    # unified ideographs
    (0xF900, 0xFAFF),    # compatibility ideographs
    (0x20000, 0x2FA1F),  # supplementary-plane ideographs
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


class Example:
    """One labeled text: raw narrative plus a 0-based class id."""

    __slots__ = ("text", "label")

    def __init__(self, text: str, label: int):
        if not text.strip():
            raise DataError("example text is empty")
        self.text = text
        self.label = int(label)

    def __repr__(self):
        return f"Example(label={self.label}, text={self.text[:30]!r})"


class LabelMap:
    """Ordered class names; position defines the class id."""

    def __init__(self, names: list[str]):
        names = [n for n in names]
        if not names:
            raise DataError("label map has no classes")
        if any(not n.strip() for n in names):
            raise DataError("label map contains an empty class name")
        if len(set(names)) != len(names):
            raise DataError("label map contains duplicate class names")
        self.names = names
        self._index = {n: i for i, n in enumerate(names)}

    @property
    def count(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown label {name!r}") from None

    def name_of(self, label: int) -> str:
        return self.names[label]

    @classmethod
    def from_file(cls, path) -> "LabelMap":
        try:
            with open(path, encoding="utf-8") as fh:
                names = [line.rstrip("\n") for line in fh if line.strip()]
        except OSError as exc:
            raise DataError(f"cannot read label map {path}: {exc}") from exc
        return cls(names)

    @classmethod
    def default(cls) -> "LabelMap":
        """The fraud-case taxonomy shipped with the package."""
        text = resources.files("acls.data").joinpath("default_labels.txt").read_text("utf-8")
        return cls([line for line in text.splitlines() if line.strip()])


class Dataset:
    """An ordered list of examples bound to a label map."""

    def __init__(self, examples: list[Example], label_map: LabelMap):
        for ex in examples:
            if not 0 <= ex.label < label_map.count:
                raise DataError(f"label id {ex.label} out of range for "
                                f"{label_map.count} classes")
        self.examples = list(examples)
        self.label_map = label_map

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.examples[i] for i in indices], self.label_map)


def tokenize(text: str) -> list[str]:
    """Deterministic tokenization: ideographs split per codepoint, the rest
    splits on whitespace; ASCII letters are lowercased."""
    tokens = []
    buf = []
    for ch in text:
        if _is_cjk(ch):
            if buf:
                tokens.append("".join(buf))
                buf = []
            tokens.append(ch)
        elif ch.isspace():
            if buf:
                tokens.append("".join(buf))
                buf = []
        else:
            buf.append(ch.lower() if "A" <= ch <= "Z" else ch)
    if buf:
        tokens.append("".join(buf))
    return tokens


def load_dataset(path, label_map: LabelMap) -> Dataset:
    """Read a JSONL corpus, resolving label names through the map.

    Records keep file order. Any malformed line is rejected with its
    line number.
    """
    examples = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or "text" not in rec or "label" not in rec:
                raise DataError(f"{path}:{lineno}: record needs 'text' and 'label' fields")
            raw_label = rec["label"]
            if isinstance(raw_label, bool) or not isinstance(raw_label, (int, str)):
                raise DataError(f"{path}:{lineno}: label must be a name or integer id")
            if isinstance(raw_label, str):
                try:
                    label = label_map.id_of(raw_label)
                except DataError:
                    raise DataError(f"{path}:{lineno}: unknown label {raw_label!r}") from None
            else:
                label = raw_label
                if not 0 <= label < label_map.count:
                    raise DataError(f"{path}:{lineno}: label id {label} out of range")
            if not isinstance(rec["text"], str) or not rec["text"].strip():
                raise DataError(f"{path}:{lineno}: empty or non-string text")
            examples.append(Example(rec["text"], label))
    return Dataset(examples, label_map)


class Vocab:
    """Token-to-id table with reserved PAD (0) and UNK (1) entries."""

    def __init__(self, ordered_tokens: list[str]):
        self.tokens = list(ordered_tokens)
        self._ids = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for i, tok in enumerate(self.tokens, start=2):
            self._ids[tok] = i

    @property
    def size(self) -> int:
        return len(self.tokens) + 2

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self._ids.get(t, UNK_ID) for t in tokens]


def build_vocab(train_split: Dataset, min_count: int = 1) -> Vocab:
    """Vocabulary from the training split alone, ids assigned by
    (count desc, token asc) after dropping tokens below min_count."""
    if len(train_split) == 0:
        raise DataError("cannot build a vocabulary from an empty training split")
    counts = Counter()
    for ex in train_split:
        counts.update(tokenize(ex.text))
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept)


def split(dataset: Dataset, ratios: tuple[float, float, float],
          seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle, then floor-rule cuts into train/val/test.

    Cut points are floor(N*r_train) and floor(N*(r_train+r_val)); the
    remainder lands in test. The same seed reproduces the partition
    bit-for-bit on every platform.
    """
    n = len(dataset)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise DataError("split ratios must be non-negative")
    indices = list(range(n))
    Xoshiro256(seed).shuffle(indices)
    cut1 = int(np.floor(n * ratios[0]))
    cut2 = int(np.floor(n * (ratios[0] + ratios[1])))
    return (dataset.subset(indices[:cut1]),
            dataset.subset(indices[cut1:cut2]),
            dataset.subset(indices[cut2:]))


class Batch:
    """Padded token-id matrix with true lengths and labels."""

    def __init__(self, token_ids: np.ndarray, lengths: np.ndarray, labels: np.ndarray):
        self.token_ids = token_ids  # (B, Lmax) int64, PAD beyond each length
        self.lengths = lengths      # (B,) int64
        self.labels = labels        # (B,) int64

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]


def batches(dataset: Dataset, vocab: Vocab, batch_size: int,
            shuffle_seed: int | None = None):
    """Yield padded batches covering the dataset exactly once.

    Without a shuffle seed, batches follow dataset order; with one, the
    example order is a seeded Fisher-Yates permutation. The last batch
    may be short.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(dataset)))
    if shuffle_seed is not None:
        Xoshiro256(shuffle_seed).shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        encoded = []
        for i in chunk:
            ids = vocab.encode(tokenize(dataset[i].text))
            if not ids:
                raise DataError(f"example {i} tokenizes to nothing")
            encoded.append(ids)
        width = max(len(ids) for ids in encoded)
        mat = np.full((len(chunk), width), PAD_ID, dtype=np.int64)
        lengths = np.empty(len(chunk), dtype=np.int64)
        labels = np.empty(len(chunk), dtype=np.int64)
        for row, (i, ids) in enumerate(zip(chunk, encoded)):
            mat[row, :len(ids)] = ids
            lengths[row] = len(ids)
            labels[row] = dataset[i].label
        yield Batch(mat, lengths, labels)
