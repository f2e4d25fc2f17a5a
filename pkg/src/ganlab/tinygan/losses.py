"""Cross-entropy GAN losses on discriminator logits, with their score gradients."""

from __future__ import annotations

import numpy as np

from .nets import sigmoid


def softplus(x) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _logits(s, name: str) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError(f"{name} batch is empty")
    return s


def gan_losses(scores_real, scores_fake, scores_dcom=None, pcr: bool = False) -> tuple[float, float]:
    """Discriminator and generator losses.

    ``-log sigmoid(s) = softplus(-s)`` and ``-log(1 - sigmoid(s)) = softplus(s)``.
    With ``pcr`` the negative term is split evenly between fakes and combined
    images. The generator loss is the non-saturating ``-log sigmoid(s_fake)``.
    """
    sr = _logits(scores_real, "real")
    sf = _logits(scores_fake, "fake")
    if pcr != (scores_dcom is not None):
        raise ValueError("combined-image scores are required exactly when pcr is on")
    neg = softplus(sf).mean()
    if pcr:
        neg = 0.5 * (neg + softplus(_logits(scores_dcom, "combination")).mean())
    d_loss = float(softplus(-sr).mean() + neg)
    g_loss = float(softplus(-sf).mean())
    return d_loss, g_loss


def d_loss_grads(scores_real, scores_fake, scores_dcom=None, pcr: bool = False):
    """``d d_loss / d s`` for each score group (``None`` for absent or empty groups)."""
    sr = np.asarray(scores_real).ravel()
    sf = np.asarray(scores_fake).ravel()
    w_neg = 0.5 if pcr else 1.0
    g_real = (sigmoid(sr) - 1.0) / sr.size
    g_fake = w_neg * sigmoid(sf) / sf.size if sf.size else None
    g_dcom = None
    if pcr:
        sc = np.asarray(scores_dcom).ravel()
        g_dcom = 0.5 * sigmoid(sc) / sc.size
    return g_real, g_fake, g_dcom


def g_loss_grad(scores_fake) -> np.ndarray:
    sf = np.asarray(scores_fake).ravel()
    return (sigmoid(sf) - 1.0) / sf.size
