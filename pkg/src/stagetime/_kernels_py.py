"""Pure-numpy implementation of the hot kernels (fallback for ``_kernels``).

Log-parameter conventions shared by both backends:

* ``lpiA``   -- ``(k, A)``       log initial-action probabilities
* ``lA``     -- ``(A, r, k, A)`` log next-action probabilities given (action, stage, class)
* ``lSstay`` -- ``(A, r, k)``    log P(stay in stage s | next action, s, class)
* ``lSadv``  -- ``(A, r, k)``    log P(advance s -> s+1 | next action, s, class)
* ``logw``   -- ``(T, k)``       log time factor per position (0 at position 0 and into END)

Stage windows ``lo``/``hi`` are 0-based and inclusive.
"""
import numpy as np

BACKEND = "python"

_NEG_INF = -np.inf


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def _step_terms(lA, lSstay, lSadv, ap, an):
    """Per-(class, stage) log transition terms of one step, shape ``(k, r)``."""
    base = lA[ap, :, :, an].T
    return base + lSstay[an].T, base + lSadv[an].T


def _forward_backward(lpiA, lA, lSstay, lSadv, logw, act, lo, hi):
    k, r = lpiA.shape[0], lA.shape[1]
    m = len(act)
    f = np.full((k, m, r), _NEG_INF)
    g = np.full((k, m, r), _NEG_INF)
    f[:, 0, 0] = lpiA[:, act[0]]
    for i in range(1, m):
        stay, adv = _step_terms(lA, lSstay, lSadv, act[i - 1], act[i])
        from_stay = f[:, i - 1, :] + stay
        from_adv = np.full((k, r), _NEG_INF)
        from_adv[:, 1:] = f[:, i - 1, :-1] + adv[:, :-1]
        f[:, i, :] = np.logaddexp(from_stay, from_adv) + logw[i][:, None]
    g[:, m - 1, lo:hi + 1] = 0.0
    for i in range(m - 2, -1, -1):
        stay, adv = _step_terms(lA, lSstay, lSadv, act[i], act[i + 1])
        to_stay = g[:, i + 1, :] + stay
        to_adv = np.full((k, r), _NEG_INF)
        to_adv[:, :-1] = g[:, i + 1, 1:] + adv[:, :-1]
        g[:, i, :] = np.logaddexp(to_stay, to_adv) + logw[i + 1][:, None]
    logp = _lse(f[:, m - 1, :] + g[:, m - 1, :], axis=1)
    return f, g, logp


def forward_backward(lpiA, lA, lSstay, lSadv, logw, actions, lo, hi):
    act = np.asarray(actions, dtype=np.int64)
    with np.errstate(invalid="ignore"):
        return _forward_backward(
            np.asarray(lpiA), np.asarray(lA), np.asarray(lSstay), np.asarray(lSadv),
            np.asarray(logw), act, int(lo), int(hi),
        )


def estep_batch(lthC, lpiA, lA, lSstay, lSadv, logw, actions, offsets, lo, hi):
    k, nA = lpiA.shape
    r = lA.shape[1]
    N = len(offsets) - 1
    NA = np.zeros((nA, r, k, nA))
    MS = np.zeros((nA, r, k, 2))
    I = np.zeros((k, nA))
    R = np.zeros(k)
    post = np.zeros((N, k))
    ll = np.full(N, _NEG_INF)
    ok = np.zeros(N, dtype=np.uint8)
    actions = np.asarray(actions, dtype=np.int64)
    for n in range(N):
        start, stop = offsets[n], offsets[n + 1]
        act = actions[start:stop]
        lw = logw[start:stop]
        f, g, lp = forward_backward(lpiA, lA, lSstay, lSadv, lw, act, lo[n], hi[n])
        joint = lthC + lp
        total = np.logaddexp.reduce(joint)
        if total == _NEG_INF:
            continue
        ok[n] = 1
        ll[n] = total
        q = np.exp(joint - total)
        post[n] = q
        R += q
        I[:, act[0]] += q
        live = np.isfinite(lp) & (q > 0)
        lc = np.where(live, lp, 0.0)
        with np.errstate(invalid="ignore"):
            for i in range(1, len(act)):
                ap, an = act[i - 1], act[i]
                stay, adv = _step_terms(lA, lSstay, lSadv, ap, an)
                base = f[:, i - 1, :] + lw[i][:, None] - lc[:, None]
                p_stay = np.exp(base + stay + g[:, i, :])
                p_adv = np.zeros((k, r))
                p_adv[:, :-1] = np.exp(base[:, :-1] + adv[:, :-1] + g[:, i, 1:])
                p_stay = np.nan_to_num(p_stay) * (q * live)[:, None]
                p_adv = np.nan_to_num(p_adv) * (q * live)[:, None]
                MS[an, :, :, 0] += p_stay.T
                MS[an, :, :, 1] += p_adv.T
                NA[ap, :, :, an] += (p_stay + p_adv).T
    return NA, MS, I, R, post, ll, ok
