import numpy as np

from starcl.netcore import Batch, init_mlp


def random_net(rng, in_dim=None, hidden=None, k=None, max_hidden=12):
    in_dim = in_dim or int(rng.integers(2, 8))
    if hidden is None:
        hidden = [int(rng.integers(2, max_hidden)) for _ in range(int(rng.integers(0, 3)))]
    k = k or int(rng.integers(2, 6))
    params = init_mlp(in_dim, hidden, k, rng)
    # nonzero biases so every code path is exercised
    return params.map(lambda t: t + 0.1 * rng.standard_normal(t.shape))


def random_batch(rng, in_dim, k, n=None):
    n = int(rng.integers(1, 10)) if n is None else n
    return Batch(rng.standard_normal((n, in_dim)), rng.integers(0, k, size=n))
