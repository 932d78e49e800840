"""Shared training-loop plumbing: splits, minibatches, rng snapshots."""

import numpy as np


def split_holdout(rng, n, holdout_frac):
    """Shuffle indices and reserve a held-out slice (at least one sample)."""
    if n < 2:
        return np.arange(n), np.arange(0)
    n_hold = max(1, int(round(n * holdout_frac)))
    perm = rng.permutation(n)
    return perm[n_hold:], perm[:n_hold]


def minibatches(rng, indices, batch_size):
    """Yield shuffled minibatch index arrays covering all of `indices`."""
    order = rng.permutation(indices)
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def check_finite(loss, context):
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss at {context}: {loss}")


def rng_state(rng) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng
