"""Variational adaptation of dictionary keys to one input graph.

For each (input, key) pair: node-level sampling probabilities from the
cosine similarity of encoded features projected through a learned vector,
a differentiable binary node mask (relaxed Bernoulli with a hard
straight-through forward), substructure selection on the key's encoded
features, and the Bernoulli KL penalty against a fixed expected
probability.

Input features are zero-padded to one shared node count so a single
projection vector serves all graphs; padded rows are all-zero, so their
cosine similarities vanish and they contribute nothing to any probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError

PROB_CLAMP = 1e-6
DEFAULT_TEMPERATURE = 1.0
TRAIN = "train"
EVAL = "eval"


@dataclass
class VgdaParams:
    """The projection vector, one weight per (padded) input node."""

    w_r: T.Tensor  # (n_padded, 1)

    @classmethod
    def initialize(cls, n_padded, rng, scale=0.01):
        values = rng.normal(0.0, scale, size=(n_padded, 1))
        return cls(w_r=T.Tensor(values, requires_grad=True))


@dataclass
class SamplingFactor:
    """Sampling state for one (input, key) pair."""

    p: T.Tensor                    # (n_key, 1) probabilities in (0, 1)
    z: np.ndarray                  # (n_key,) boolean mask, at least one True
    z_tilde: T.Tensor | None       # relaxed surrogate in train mode
    p_hat: float


@dataclass
class AdaptedKey:
    """The substructure of one key selected for one input."""

    indices: np.ndarray            # strictly increasing selected node indices
    features: T.Tensor             # (n_selected, d) rows of the encoded key
    key_id: int


def sampling_probability(f_input, f_key, w_r):
    """Per-key-node selection probabilities.

    p = clamp(sigmoid(cosine(F_input, F_key)^T w_r)) with one entry per key
    node; differentiable in both feature matrices and the projection vector.
    """
    cos = T.cosine_matrix(f_input, f_key)
    scores = T.matmul(T.transpose(cos), w_r)
    return T.clamp(T.sigmoid(scores), PROB_CLAMP, 1.0 - PROB_CLAMP)


def sample_factor(p, mode, rng=None, temperature=DEFAULT_TEMPERATURE,
                  p_hat=0.5, mask_override=None):
    """Draw (or threshold) the binary node mask for one key.

    Train mode draws uniform noise per node, forms the relaxed surrogate
    z_tilde = sigmoid((logit(p) + logit(u)) / temperature) and thresholds it
    at 0.5 for the hard mask; gradients flow through the surrogate only.
    Eval mode thresholds the probabilities deterministically.  If the mask
    comes out all-zero, the single highest-probability node is selected
    (first index on ties).  ``mask_override`` replaces the mask outright
    (used by ablations and gradient checks); no surrogate is attached.
    """
    probs = p.values[:, 0]
    if mask_override is not None:
        z = np.asarray(mask_override, dtype=bool).reshape(-1).copy()
        if z.shape[0] != probs.shape[0]:
            raise ConfigError("mask_override length must match key size")
        z_tilde = None
    elif mode == TRAIN:
        if rng is None:
            raise ConfigError("train-mode sampling needs an RNG stream")
        noise = rng.uniform(size=(probs.shape[0], 1))
        noise = np.clip(noise, 1e-12, 1.0 - 1e-12)
        z_tilde = T.binary_concrete(p, noise, temperature)
        z = z_tilde.values[:, 0] > 0.5
    elif mode == EVAL:
        z_tilde = None
        z = probs > 0.5
    else:
        raise ConfigError(f"unknown sampling mode: {mode!r}")
    if not z.any():
        z = z.copy()
        z[int(np.argmax(probs))] = True
    return SamplingFactor(p=p, z=z, z_tilde=z_tilde, p_hat=p_hat)


def select_substructure(key_features, z, z_tilde=None, key_id=0):
    """Select the masked rows of an encoded key, preserving node order.

    With a relaxed surrogate attached (train mode), the surviving rows pass
    through a straight-through multiplier: forward values are the rows
    unchanged (hard mask), backward routes each row's gradient into its
    surrogate so the sampling probabilities learn.
    """
    z = np.asarray(z, dtype=bool).reshape(-1)
    features = T.row_select(key_features, z)
    if z_tilde is not None:
        surrogate = T.row_select(z_tilde, z)
        features = T.straight_through_scale(features, surrogate)
    return AdaptedKey(indices=np.flatnonzero(z), features=features,
                      key_id=key_id)


def bernoulli_kl(p_hat, p):
    """KL(Bernoulli(p_hat) || Bernoulli(p[u])) summed over the vector.

    Nonnegative, exactly zero when p is identically p_hat, additive over
    concatenated vectors, differentiable in p.
    """
    if not (0.0 < p_hat < 1.0):
        raise ConfigError(f"p_hat must lie strictly in (0, 1), got {p_hat}")
    return T.bernoulli_kl_sum(p, p_hat)


def adapt_key(f_input, key_features, w_r, mode, rng=None,
              temperature=DEFAULT_TEMPERATURE, p_hat=0.5, key_id=0,
              mask_override=None):
    """Full adaptation of one key to one input: probabilities, mask,
    selection, and KL penalty.  Returns (AdaptedKey, SamplingFactor, kl)."""
    p = sampling_probability(f_input, key_features, w_r)
    factor = sample_factor(p, mode, rng=rng, temperature=temperature,
                           p_hat=p_hat, mask_override=mask_override)
    adapted = select_substructure(key_features, factor.z, factor.z_tilde,
                                  key_id=key_id)
    kl = bernoulli_kl(p_hat, p)
    return adapted, factor, kl
