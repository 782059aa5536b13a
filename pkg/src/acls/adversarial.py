"""Single-step adversarial training on the embedding layer.

Each training step runs a clean pass, perturbs every example's embedding
matrix by epsilon along its normalized loss gradient, runs a second pass
on the perturbed embeddings, and restores them bit-exactly. Gradients
from both passes accumulate; the optimizer steps outside.
"""

import numpy as np

from .errors import ConfigError, NumericError
from .heads import model_backward, model_forward, model_forward_embedded

# Gradients with Frobenius norm below this are treated as flat points:
# no ascent direction exists, so the perturbation is zero.
DEGENERATE_NORM = 1e-12


class FgmConfig:
    """Perturbation radius and on/off switch for adversarial training."""

    def __init__(self, epsilon: float = 1.0, enabled: bool = True):
        if epsilon < 0:
            raise ConfigError(f"fgm.epsilon must be >= 0, got {epsilon}")
        self.epsilon = float(epsilon)
        self.enabled = bool(enabled)

    def to_dict(self):
        return {"fgm.enabled": self.enabled, "fgm.epsilon": self.epsilon}


class PerturbationState:
    """Saved embedding values; guarantees a bit-exact restore."""

    def __init__(self, ems):
        self._ems = ems
        self._saved = [em.values.copy() for em in ems]
        self._outstanding = False

    def apply(self, deltas) -> None:
        if self._outstanding:
            raise RuntimeError("a perturbation is already outstanding")
        for em, delta in zip(self._ems, deltas):
            em.values += delta
        self._outstanding = True

    def restore(self) -> None:
        for em, saved in zip(self._ems, self._saved):
            np.copyto(em.values, saved)
        self._outstanding = False


def fgm_delta(g: np.ndarray, epsilon: float) -> np.ndarray:
    """epsilon * g / ||g||_2 over the whole per-example gradient matrix.

    The scaling preserves the gradient direction exactly; a degenerate
    (near-zero) gradient yields a zero perturbation.
    """
    if not np.all(np.isfinite(g)):
        raise NumericError("embedding gradient is non-finite")
    norm = np.linalg.norm(g)
    if norm < DEGENERATE_NORM or epsilon == 0.0:
        return np.zeros_like(g)
    return (epsilon / norm) * g


def fgm_train_step(batch, params, fgm: FgmConfig, loss_grad_fn):
    """One min-max training step over a batch.

    loss_grad_fn(logits, labels) must return (scalar loss, dlogits).
    With fgm disabled this is a plain step: one forward/backward, and the
    adversarial loss comes back as None. Gradients must be zero at entry;
    on exit they hold clean + adversarial contributions.

    Raises NumericError if either pass produces a non-finite loss.
    """
    logits, caches = model_forward(batch, params)
    clean_loss, dlogits = loss_grad_fn(logits, batch.labels)
    if not np.isfinite(clean_loss):
        raise NumericError("non-finite loss in clean pass")
    model_backward(dlogits, caches, batch.token_ids, params)
    if not fgm.enabled:
        return clean_loss, None

    ems = [c.em for c in caches]
    state = PerturbationState(ems)
    deltas = [fgm_delta(em.grad, fgm.epsilon) for em in ems]
    state.apply(deltas)
    for em in ems:
        em.zero_grad()  # clean grads were consumed; keep the passes separate
    adv_logits, adv_caches = model_forward_embedded(ems, params)
    adv_loss, adv_dlogits = loss_grad_fn(adv_logits, batch.labels)
    if not np.isfinite(adv_loss):
        state.restore()
        raise NumericError("non-finite loss in adversarial pass")
    model_backward(adv_dlogits, adv_caches, batch.token_ids, params)
    state.restore()
    return clean_loss, adv_loss
