"""Combined next-token + masked-token training objective.

The loss over a sequence with a non-causal prefix of length M is

    L = (w1 * L_ntp + w2 * L_mlm) / (w1 + w2)

where L_ntp is next-token cross-entropy restricted to the causally-processed
region (tokens at positions >= M as targets) and L_mlm predicts the original
tokens at encoder positions that were replaced by the mask token.  Defaults:
ntp_scale 1.0, mlm_scale 0.25, mask probability 15%.  No mask tokens appear
at inference time; decoding never touches this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    """Config keys: ntp_scale, mlm_scale, mask_prob, encoder_len."""

    ntp_scale: float = 1.0
    mlm_scale: float = 0.25
    mask_prob: float = 0.15
    encoder_len: int = 0
    mask_token: int = 1

    def __post_init__(self):
        if self.ntp_scale + self.mlm_scale <= 0.0:
            raise ValueError("ntp_scale + mlm_scale must be positive")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob must be in [0, 1]")


def mlm_mask(tokens, encoder_len: int, mask_prob: float, mask_token: int,
             seed) -> tuple[list, list]:
    """Independently mask encoder positions with probability mask_prob.

    Returns the masked token list and [(position, original_token)] for the
    masked positions only.  Positions >= encoder_len are never touched.
    """
    tokens = list(tokens)
    if encoder_len > len(tokens):
        raise ValueError("encoder_len exceeds sequence length")
    rng = np.random.default_rng(seed)
    draws = rng.random(encoder_len) < mask_prob
    targets = []
    for pos in np.flatnonzero(draws):
        targets.append((int(pos), tokens[pos]))
        tokens[pos] = mask_token
    return tokens, targets


def combined_loss(ntp_loss: float, mlm_loss: float, w: LossWeights) -> float:
    """Weighted mean of the two losses; invariant to joint scaling of weights."""
    total = w.ntp_scale + w.mlm_scale
    if total == 0.0:
        raise ValueError("weights sum to zero")
    if not (np.isfinite(ntp_loss) and np.isfinite(mlm_loss)):
        raise ValueError("losses must be finite")
    return (w.ntp_scale * ntp_loss + w.mlm_scale * mlm_loss) / total


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    zmax = logits.max(axis=-1, keepdims=True)
    shifted = logits - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def ntp_region_loss(logits: np.ndarray, targets, encoder_len: int) -> float:
    """Mean next-token cross-entropy with targets restricted to the causal region.

    Tokens at positions >= encoder_len are predicted from the logits one step
    earlier; encoder-region tokens carry no next-token loss.  encoder_len = 0
    recovers the standard full-sequence objective.
    """
    targets = np.asarray(targets)
    n = targets.shape[0]
    if logits.shape[0] != n:
        raise ValueError("logits and targets must share sequence length")
    if encoder_len >= n:
        raise ValueError("no causal-region targets: encoder_len >= length")
    start = max(1, encoder_len)
    logp = _log_softmax(logits[start - 1 : n - 1])
    picked = np.take_along_axis(logp, targets[start:, None], axis=-1)
    return float(-picked.mean())


def mlm_region_loss(logits: np.ndarray, targets: list) -> float:
    """Mean cross-entropy at masked encoder positions (same-position prediction)."""
    if not targets:
        return 0.0
    positions = np.asarray([p for p, _ in targets])
    originals = np.asarray([t for _, t in targets])
    logp = _log_softmax(logits[positions])
    picked = np.take_along_axis(logp, originals[:, None], axis=-1)
    return float(-picked.mean())
