"""Shared helpers for the test suite: parameter flattening and FD gradients."""

import numpy as np


def flat_params(net):
    return np.concatenate([
        np.concatenate([layer.weights.ravel(), layer.biases.ravel()])
        for layer in net.layers
    ])


def set_flat(net, vec):
    i = 0
    for layer in net.layers:
        n = layer.weights.size
        layer.weights[...] = vec[i:i + n].reshape(layer.weights.shape)
        i += n
        n = layer.biases.size
        layer.biases[...] = vec[i:i + n]
        i += n


def flat_grads(grads):
    return np.concatenate([
        np.concatenate([dw.ravel(), db.ravel()]) for dw, db in grads
    ])


def fd_gradient(loss_fn, net, indices=None, h=1e-5):
    """Central finite differences of loss_fn() w.r.t. the net's parameters.

    loss_fn takes no arguments and reads the net's current weights.  Returns
    (indices, fd_values); when indices is None every parameter is probed.
    """
    theta = flat_params(net)
    if indices is None:
        indices = range(len(theta))
    values = []
    for k in indices:
        bumped = theta.copy()
        bumped[k] += h
        set_flat(net, bumped)
        up = loss_fn()
        bumped[k] -= 2 * h
        set_flat(net, bumped)
        down = loss_fn()
        values.append((up - down) / (2 * h))
    set_flat(net, theta)
    return list(indices), np.array(values)


def max_rel_error(analytic, numeric, floor=1e-7):
    """Worst relative disagreement, with an absolute floor for tiny values."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
