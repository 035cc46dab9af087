"""Central-difference gradient check for the triplet objective."""
import numpy as np

from tilemts.encoder import (EncoderConfig, EncoderParams, forward, init_encoder,
                             objective, objective_and_gradient)

KINK_TOL = 1e-6
REL_FLOOR = 1e-6


def random_problem(rng):
    """Small random encoder, weights jittered off init, plus a triplet batch."""
    while True:
        C = int(rng.integers(1, 4))
        s = int(rng.integers(5, 10))
        blocks = tuple((int(rng.integers(2, 5)), 3, int(rng.integers(1, 3)))
                       for _ in range(int(rng.integers(1, 3))))
        d = int(rng.integers(2, 5))
        try:
            cfg = EncoderConfig(C, s, blocks, d)
        except ValueError:
            continue
        break
    params = init_encoder(cfg, int(rng.integers(1 << 31)))
    for t in params.tensors:
        t += rng.normal(0, 0.1, t.shape)
    batch = rng.random((int(rng.integers(1, 4)), 3, C, s, s))
    delta = float(rng.uniform(0, 2))
    lam = float(rng.uniform(0, 0.5))
    return params, batch, delta, lam


def _pattern(params, batch, delta):
    """Sign pattern of every kink the objective has, and the distance to the
    nearest kink."""
    B = len(batch)
    z, cache = forward(params, batch.reshape((3 * B,) + batch.shape[2:]))
    z = z.reshape(B, 3, -1)
    d_ab = np.linalg.norm(z[:, 0] - z[:, 1], axis=-1)
    d_ac = np.linalg.norm(z[:, 0] - z[:, 2], axis=-1)
    hinge = d_ab - d_ac + delta
    norms = np.linalg.norm(z, axis=-1)
    signs = [a > 0 for a in cache["preacts"]] + [hinge > 0]
    nearest = min([np.abs(a).min() for a in cache["preacts"]]
                  + [np.abs(hinge).min(), norms.min(), d_ab.min(), d_ac.min()])
    return signs, nearest


def check(params, batch, delta, lam, h=1e-5):
    """Returns (max relative error, coordinates checked, coordinates skipped)."""
    _, grads = objective_and_gradient(params, batch, delta, lam)
    analytic = np.concatenate([g.ravel() for g in grads])
    theta = params.flat()
    base_signs, base_near = _pattern(params, batch, delta)
    worst, checked, skipped = 0.0, 0, 0
    for i in range(theta.size):
        values, ok = [], base_near > KINK_TOL
        for sgn in (1, -1):
            th = theta.copy()
            th[i] += sgn * h
            p = EncoderParams.from_flat(params.config, th)
            signs, near = _pattern(p, batch, delta)
            if near <= KINK_TOL or any(not np.array_equal(a, b) for a, b in zip(signs, base_signs)):
                ok = False
            values.append(objective(p, batch, delta, lam))
        if not ok:
            skipped += 1
            continue
        numeric = (values[0] - values[1]) / (2 * h)
        denom = max(abs(numeric), abs(analytic[i]), REL_FLOOR)
        worst = max(worst, abs(numeric - analytic[i]) / denom)
        checked += 1
    return worst, checked, skipped
