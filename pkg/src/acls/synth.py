"""Synthetic keyword-separable corpus generator.

Every class owns three signature words; each text mixes 2-5 signature
words of its class with words from a shared filler pool, so classes are
separable while sharing surface vocabulary. Fully deterministic for a
given seed.
"""

import json

from .rng import Xoshiro256

SIGNATURES_PER_CLASS = 3
FILLER_POOL = 30

_SYLLABLES = ["ba", "de", "ki", "lo", "mu", "na", "po", "ra", "su", "ti",
              "vo", "wa", "zen", "gor", "fel", "han"]


def _pseudo_word(rng: Xoshiro256) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 4)))


def _unique_words(rng: Xoshiro256, count: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < count:
        w = _pseudo_word(rng)
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def generate_corpus(n_classes: int = 14, per_class: int = 200, seed: int = 7):
    """Build (records, label_names); records are (text, label_name) pairs."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if per_class < 1:
        raise ValueError("need at least one example per class")
    rng = Xoshiro256(seed)
    taken: set[str] = set()
    fillers = _unique_words(rng, FILLER_POOL, taken)
    signatures = [_unique_words(rng, SIGNATURES_PER_CLASS, taken)
                  for _ in range(n_classes)]
    label_names = [f"class{c:02d}" for c in range(n_classes)]
    records = []
    for c in range(n_classes):
        for _ in range(per_class):
            n_sig = rng.randint(2, 5)
            n_fill = rng.randint(3, 8)
            words = [rng.choice(signatures[c]) for _ in range(n_sig)]
            words += [rng.choice(fillers) for _ in range(n_fill)]
            rng.shuffle(words)
            records.append((" ".join(words), label_names[c]))
    return records, label_names, signatures


def write_corpus(out_path, labels_path, n_classes: int = 14,
                 per_class: int = 200, seed: int = 7) -> int:
    """Write the JSONL corpus and its label map; returns the line count."""
    records, label_names, _ = generate_corpus(n_classes, per_class, seed)
    with open(out_path, "w", encoding="utf-8") as fh:
        for text, label in records:
            fh.write(json.dumps({"text": text, "label": label},
                                ensure_ascii=False) + "\n")
    with open(labels_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(label_names) + "\n")
    return len(records)
