"""Central finite-difference gradient checking for loss functions.

Used by the test suites to validate every analytic gradient in the package
against an independent numerical estimate.
"""

import numpy as np


def numerical_grad(loss_fn, param, index, h=1e-4):
    """Central difference of ``loss_fn()`` w.r.t. one coordinate of ``param``."""
    orig = param.data[index]
    param.data[index] = orig + h
    up = loss_fn().data.item()
    param.data[index] = orig - h
    down = loss_fn().data.item()
    param.data[index] = orig
    return (up - down) / (2.0 * h)


def check_gradients(loss_fn, named_params, rng, n_coords=20, h=1e-4, rtol=1e-3,
                    atol=1e-7):
    """Compare analytic vs central-difference gradients on random coordinates.

    ``loss_fn`` must rebuild the loss tensor from the current parameter
    values on every call. Returns a list of per-coordinate records; raises
    AssertionError on the first coordinate outside tolerance.
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for name, p in named_params}

    flat = []
    for name, p in named_params:
        for i in range(p.data.size):
            flat.append((name, p, np.unravel_index(i, p.data.shape)))
    if not flat:
        raise ValueError("no parameters to check")
    picks = rng.choice(len(flat), size=min(n_coords, len(flat)), replace=False)

    records = []
    for pick in picks:
        name, p, index = flat[pick]
        analytic = float(grads[name][index])
        numeric = numerical_grad(loss_fn, p, index, h)
        denom = max(abs(analytic), abs(numeric))
        err = abs(analytic - numeric)
        ok = err <= atol or err / denom <= rtol
        records.append({"param": name, "index": index, "analytic": analytic,
                        "numeric": numeric, "ok": ok})
        if not ok:
            raise AssertionError(
                f"gradient mismatch for {name}{index}: analytic={analytic:.8g} "
                f"numeric={numeric:.8g} rel={err / denom:.3g}")
    return records
