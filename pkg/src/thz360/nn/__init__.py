from .network import ConfigError, Network, backward, forward, parse_layers
from .optim import AdamState, OUNoise, adam_step, ou_step, soft_update


def numerical_gradient(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at flat vector ``x``."""
    import numpy as np

    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


__all__ = ["AdamState", "ConfigError", "Network", "OUNoise", "adam_step", "backward",
           "forward", "numerical_gradient", "ou_step", "parse_layers", "soft_update"]
