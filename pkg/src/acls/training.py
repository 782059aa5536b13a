"""Loss, optimizer, training loop, and checkpoint serialization."""

import hashlib
import io
import json
import struct
import zlib
from dataclasses import dataclass, field, fields

import numpy as np

from .adversarial import FgmConfig, fgm_train_step
from .corpus import Dataset, LabelMap, Vocab, batches
from .embedding import load_frozen_embeddings
from .errors import CheckpointError, ConfigError, NumericError
from .heads import ModelParams
from .numerics import softmax
from .rng import derive_seed

LOSS_FLOOR = 1e-12  # clamp before log so saturated outputs stay finite

CHECKPOINT_MAGIC = b"ACLS"
CHECKPOINT_VERSION = 1


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-log p(true class), clamped at the loss floor."""
    if not 0 <= label < probs.shape[0]:
        raise ValueError(f"label {label} out of range for {probs.shape[0]} classes")
    return -float(np.log(max(probs[label], LOSS_FLOOR)))


def average_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over the rows of a probability matrix."""
    picked = np.maximum(probs[np.arange(len(labels)), labels], LOSS_FLOOR)
    return -float(np.mean(np.log(picked)))


def batch_loss_and_grad(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    probs = softmax(logits)
    loss = average_loss(probs, labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits /= len(labels)
    return loss, dlogits


@dataclass
class TrainConfig:
    """Every knob of one training run; file form is flat key=value text."""

    batch_size: int = 8
    learning_rate: float = 1e-6   # used with a frozen pretrained provider
    scratch_lr: float = 1e-3      # used when embeddings train from scratch
    epochs: int = 3
    seed: int = 24
    embed_dim: int = 32
    hidden_size: int = 64
    num_kernels: int = 128
    use_cnn: bool = True
    use_bilstm: bool = True
    min_count: int = 1
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    frozen_embeddings: str | None = None
    fgm: FgmConfig = field(default_factory=FgmConfig)

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0 or self.scratch_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.embed_dim < 1 or self.hidden_size < 1 or self.num_kernels < 1:
            raise ConfigError("model dimensions must be positive")
        if self.min_count < 0:
            raise ConfigError("min_count must be >= 0")
        if not (self.use_cnn or self.use_bilstm):
            raise ConfigError("at least one of use_cnn/use_bilstm must be enabled")
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
        if self.fgm.epsilon < 0:
            raise ConfigError("fgm.epsilon must be >= 0")

    @property
    def ratios(self):
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    def effective_lr(self, embeddings_trainable: bool) -> float:
        return self.scratch_lr if embeddings_trainable else self.learning_rate

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "fgm":
                out.update(self.fgm.to_dict())
            else:
                out[f.name] = getattr(self, f.name)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        cfg = cls()
        for key, raw in data.items():
            _apply_config_value(cfg, key, raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        cfg = cls()
        try:
            fh = open(path, encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        with fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, _, raw = stripped.partition("=")
                try:
                    _apply_config_value(cfg, key.strip(), raw.strip())
                except ConfigError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from None
        cfg.validate()
        return cfg

    def copy(self) -> "TrainConfig":
        return TrainConfig.from_dict(self.to_dict())


_INT_KEYS = {"batch_size", "epochs", "seed", "embed_dim", "hidden_size",
             "num_kernels", "min_count"}
_FLOAT_KEYS = {"learning_rate", "scratch_lr", "train_ratio", "val_ratio",
               "test_ratio"}
_BOOL_KEYS = {"use_cnn", "use_bilstm"}


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    lowered = str(raw).strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _apply_config_value(cfg: TrainConfig, key: str, raw) -> None:
    try:
        if key in _INT_KEYS:
            setattr(cfg, key, int(raw))
        elif key in _FLOAT_KEYS:
            setattr(cfg, key, float(raw))
        elif key in _BOOL_KEYS:
            setattr(cfg, key, _parse_bool(raw))
        elif key == "frozen_embeddings":
            value = str(raw) if raw not in ("", None, "none", "None") else None
            cfg.frozen_embeddings = value
        elif key == "fgm.enabled":
            cfg.fgm = FgmConfig(cfg.fgm.epsilon, _parse_bool(raw))
        elif key == "fgm.epsilon":
            cfg.fgm = FgmConfig(float(raw), cfg.fgm.enabled)
        else:
            raise ConfigError(f"unknown key {key!r}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


class Adam:
    """Adam with bias correction over the trainable tensors."""

    def __init__(self, tensors, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.all_tensors = list(tensors)
        self.tensors = [t for t in self.all_tensors if t.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(t.value) for t in self.tensors]
        self.v = [np.zeros_like(t.value) for t in self.tensors]

    def step(self) -> None:
        for t in self.tensors:
            if not np.all(np.isfinite(t.grad)):
                raise NumericError(f"non-finite gradient in {t.name}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, t in enumerate(self.tensors):
            g = t.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            t.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grads(self) -> None:
        for t in self.all_tensors:
            t.zero_grad()


class TrainResult:
    def __init__(self, params: ModelParams, history: list, best_epoch: int):
        self.params = params
        self.history = history
        self.best_epoch = best_epoch


def train(train_ds: Dataset, val_ds: Dataset, vocab: Vocab,
          config: TrainConfig, params: ModelParams | None = None,
          progress=None) -> TrainResult:
    """Run the full training loop; evaluation on val after every epoch.

    Fully deterministic for a fixed (dataset, config) pair: epoch
    shuffles derive from config.seed and the optimizer state is rebuilt
    from scratch. ``progress`` is an optional callback taking the
    per-epoch log entry.
    """
    from .metrics import evaluate  # local import to avoid a cycle

    config.validate()
    if len(train_ds) == 0:
        raise ConfigError("training split is empty")
    if params is None:
        frozen = None
        if config.frozen_embeddings is not None:
            frozen = load_frozen_embeddings(config.frozen_embeddings)
        params = ModelParams.build(vocab.size, train_ds.label_map.count,
                                   config, frozen=frozen)
    opt = Adam(params.tensors(), config.effective_lr(params.embedding.trainable))
    history = []
    best_epoch = 0
    best_acc = -1.0
    for epoch in range(1, config.epochs + 1):
        clean_losses = []
        adv_losses = []
        epoch_seed = derive_seed(config.seed, epoch)
        for bi, batch in enumerate(batches(train_ds, vocab, config.batch_size,
                                           shuffle_seed=epoch_seed)):
            assert params.grads_are_zero(), "gradients must be zero at step entry"
            try:
                clean, adv = fgm_train_step(batch, params, config.fgm,
                                            batch_loss_and_grad)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {bi}: {exc}") from exc
            opt.step()
            opt.zero_grads()
            clean_losses.append(clean)
            if adv is not None:
                adv_losses.append(adv)
        report = evaluate(val_ds, params, vocab) if len(val_ds) else None
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(clean_losses)),
            "train_loss_adv": float(np.mean(adv_losses)) if adv_losses else None,
            "val": report.to_dict() if report else None,
        }
        history.append(entry)
        if report and report.accuracy > best_acc:
            best_acc = report.accuracy
            best_epoch = epoch
        if progress is not None:
            progress(entry)
    return TrainResult(params, history, best_epoch)


def _vocab_sha256(tokens: list[str]) -> str:
    return hashlib.sha256("\x00".join(tokens).encode("utf-8")).hexdigest()


class Checkpoint:
    """Deserialized checkpoint: config, taxonomy, vocab, and tensors."""

    def __init__(self, config: TrainConfig, label_map: LabelMap,
                 vocab: Vocab, tensors: dict[str, np.ndarray]):
        self.config = config
        self.label_map = label_map
        self.vocab = vocab
        self.tensors = tensors

    def build_params(self) -> ModelParams:
        """Reconstruct model parameters from the stored tensors."""
        params = ModelParams.build(self.vocab.size, self.label_map.count, self.config)
        if self.config.frozen_embeddings is not None:
            params.embedding.trainable = False
            params.embedding.table.trainable = False
        expected = {t.name: t for t in params.tensors()}
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise CheckpointError(f"tensor set mismatch: missing {missing}, extra {extra}")
        for name, tensor in expected.items():
            stored = self.tensors[name]
            if stored.shape != tensor.value.shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {stored.shape}, "
                    f"config expects {tensor.value.shape}")
            tensor.value[...] = stored
        return params


def save_checkpoint(params: ModelParams, config: TrainConfig,
                    vocab: Vocab, label_map: LabelMap, path) -> None:
    """Write the versioned, checksummed binary checkpoint."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    meta = {
        "config": config.to_dict(),
        "labels": label_map.names,
        "vocab": vocab.tokens,
        "vocab_sha256": _vocab_sha256(vocab.tokens),
    }
    meta_bytes = json.dumps(meta, ensure_ascii=False).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    tensors = params.tensors()
    buf.write(struct.pack("<I", len(tensors)))
    for t in tensors:
        name_bytes = t.name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        shape = t.value.shape
        buf.write(struct.pack("<I", len(shape)))
        for dim in shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(t.value, dtype="<f8").tobytes())
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path, expect_config: TrainConfig | None = None) -> Checkpoint:
    """Read and validate a checkpoint file.

    ``expect_config`` additionally checks that every stored tensor has
    the shape that config implies, naming the first mismatch.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(CHECKPOINT_MAGIC) + 12:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    payload, crc_bytes = blob[:-4], blob[-4:]
    (stored_crc,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    view = io.BytesIO(payload)
    if view.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    (version,) = struct.unpack("<I", view.read(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format version {version} not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    (meta_len,) = struct.unpack("<I", view.read(4))
    try:
        meta = json.loads(view.read(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed metadata") from exc
    config = TrainConfig.from_dict(meta["config"])
    label_map = LabelMap(meta["labels"])
    vocab = Vocab(meta["vocab"])
    if _vocab_sha256(vocab.tokens) != meta.get("vocab_sha256"):
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    (n_tensors,) = struct.unpack("<I", view.read(4))
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", view.read(2))
        name = view.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", view.read(4))
        shape = tuple(struct.unpack("<I", view.read(4))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = view.read(count * 8)
        if len(data) != count * 8:
            raise CheckpointError(f"{path}: tensor {name} is truncated")
        tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    ckpt = Checkpoint(config, label_map, vocab, tensors)
    if expect_config is not None:
        _check_shapes_against(ckpt, expect_config)
    return ckpt


def _check_shapes_against(ckpt: Checkpoint, config: TrainConfig) -> None:
    reference = ModelParams.build(ckpt.vocab.size, ckpt.label_map.count, config)
    for t in reference.tensors():
        stored = ckpt.tensors.get(t.name)
        if stored is None:
            raise CheckpointError(f"checkpoint is missing tensor {t.name}")
        if stored.shape != t.value.shape:
            raise CheckpointError(
                f"shape mismatch for {t.name}: checkpoint {stored.shape}, "
                f"config expects {t.value.shape}")
