"""Pure-Python sliding-window cap enforcement (fallback for the compiled kernels).

Each tick, a capped domain may deliver at most ``bound * w`` minus the
energy it delivered over the previous ``w - 1`` ticks, so every window of
``w`` consecutive ticks averages at most ``bound``.  Demand above that
allowance is scaled down; the scale is the fraction of the tick's activity
that survives.

When every capped window spans a single tick the recurrence has no memory
and reduces to an element-wise ``min``, which numpy handles directly.
"""

from __future__ import annotations

import math

import numpy as np


def _check(w, h):
    if w < 1 or w - 1 > h:
        raise ValueError(f"window of {w} ticks needs {w - 1} history entries, have {h}")


def _scale(out, demand):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(demand > 0.0, out / demand, 1.0)


def _tail(hist, out):
    h = len(hist)
    if h == 0:
        return np.empty(0)
    return np.concatenate([hist, out])[-h:].copy()


def enforce_single(demand, bound, w, hist):
    demand = np.ascontiguousarray(demand, dtype=float)
    hist = np.ascontiguousarray(hist, dtype=float)
    _check(w, len(hist))
    if math.isinf(bound):
        return demand.copy(), np.ones(len(demand)), _tail(hist, demand)
    if w == 1:
        out = np.minimum(demand, max(bound, 0.0))
        return out, _scale(out, demand), _tail(hist, out)

    h = len(hist)
    buf = np.empty(h + len(demand))
    buf[:h] = hist
    scale = np.ones(len(demand))
    budget = bound * w
    prior = float(buf[h - (w - 1):h].sum())
    for i, d in enumerate(demand.tolist()):
        j = h + i
        p = d
        allowed = budget - prior
        if d > allowed:
            p = allowed if allowed > 0.0 else 0.0
            scale[i] = p / d if d > 0.0 else 1.0
        buf[j] = p
        prior += p - buf[j - w + 1]
    return buf[h:].copy(), scale, buf[len(demand):].copy()


def enforce_nested(inner, rest, inner_bound, inner_w, outer_bound, outer_w, inner_hist, outer_hist):
    inner = np.ascontiguousarray(inner, dtype=float)
    rest = np.ascontiguousarray(rest, dtype=float)
    inner_hist = np.ascontiguousarray(inner_hist, dtype=float)
    outer_hist = np.ascontiguousarray(outer_hist, dtype=float)
    if len(rest) != len(inner):
        raise ValueError("inner and rest demand lengths differ")
    _check(inner_w, len(inner_hist))
    _check(outer_w, len(outer_hist))
    icap = not math.isinf(inner_bound)
    ocap = not math.isinf(outer_bound)

    if (not icap or inner_w == 1) and (not ocap or outer_w == 1):
        pc = np.minimum(inner, max(inner_bound, 0.0)) if icap else inner.copy()
        pr = rest.copy()
        if ocap:
            pk = pc + pr
            ob = max(outer_bound, 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                f = np.where(pk > ob, ob / pk, 1.0)
            pc = pc * f
            pr = pr * f
        return (
            pc,
            pr,
            _scale(pc, inner),
            _scale(pc + pr, inner + rest),
            _tail(inner_hist, pc),
            _tail(outer_hist, pc + pr),
        )

    n, hi, ho = len(inner), len(inner_hist), len(outer_hist)
    ibuf = np.empty(hi + n)
    obuf = np.empty(ho + n)
    ibuf[:hi] = inner_hist
    obuf[:ho] = outer_hist
    rest_out = np.empty(n)
    iscale = np.ones(n)
    oscale = np.ones(n)
    ibudget = inner_bound * inner_w
    obudget = outer_bound * outer_w
    iprior = float(ibuf[hi - (inner_w - 1):hi].sum())
    oprior = float(obuf[ho - (outer_w - 1):ho].sum())
    for i, (c, r) in enumerate(zip(inner.tolist(), rest.tolist())):
        ji, jo = hi + i, ho + i
        pc, pr = c, r
        if icap:
            allowed = ibudget - iprior
            if c > allowed:
                pc = allowed if allowed > 0.0 else 0.0
        if ocap:
            pk = pc + pr
            allowed = obudget - oprior
            if pk > allowed and pk > 0.0:
                f = (allowed if allowed > 0.0 else 0.0) / pk
                pc *= f
                pr *= f
        ibuf[ji] = pc
        obuf[jo] = pc + pr
        rest_out[i] = pr
        if c > 0.0:
            iscale[i] = pc / c
        if c + r > 0.0:
            oscale[i] = (pc + pr) / (c + r)
        iprior += pc - ibuf[ji - inner_w + 1]
        oprior += (pc + pr) - obuf[jo - outer_w + 1]
    return ibuf[hi:].copy(), rest_out, iscale, oscale, ibuf[n:].copy(), obuf[n:].copy()
