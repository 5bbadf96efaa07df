"""Sliding-window regularization of a keyframe depth map.

Both filters read a snapshot of the map and write a new one, so the result
does not depend on the order in which pixels are visited.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .keyframe import Flag, Keyframe


@dataclass
class FilterParams:
    radius: int = 1
    min_valid_neighbours: int = 2
    gate: float = 2.0
    fill_inflation: float = 2.0
    hole_fill_enabled: bool = True
    smooth_enabled: bool = True

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.min_valid_neighbours < 1:
            raise ValueError("min_valid_neighbours must be >= 1")


def _window_stack(arr: np.ndarray, radius: int, fill, include_centre: bool):
    """All (2r+1)^2 shifted copies of ``arr``, padded with ``fill``."""
    h, w = arr.shape
    padded = np.pad(arr, radius, mode="constant", constant_values=fill)
    out = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if not include_centre and dx == 0 and dy == 0:
                continue
            out.append(padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w])
    return np.stack(out)


def _snapshot(keyframe: Keyframe):
    hyps = keyframe.hypotheses
    valid = (hyps["flags"] & Flag.VALID) != 0
    d = hyps["idepth"].astype(np.float64)
    var = hyps["variance"].astype(np.float64)
    # keep invalid cells harmless in the arithmetic below
    var = np.where(valid & (var > 0), var, 1.0)
    return valid, d, var


def hole_fill(keyframe: Keyframe, params: FilterParams | None = None) -> Keyframe:
    """Fill non-valid pixels from mutually compatible valid neighbours.

    Filled pixels become VALID with FILLED_BY_NEIGHBOUR set and a validity
    counter of zero, so they never act as a confident search prior.
    """
    p = params or FilterParams()
    valid, d, var = _snapshot(keyframe)
    nv = _window_stack(valid, p.radius, False, include_centre=False)
    nd = _window_stack(d, p.radius, 0.0, include_centre=False)
    ns = np.sqrt(_window_stack(var, p.radius, 1.0, include_centre=False))

    count = nv.sum(axis=0)
    agree = np.ones(valid.shape, dtype=bool)
    k = nv.shape[0]
    for i in range(k):
        for j in range(i + 1, k):
            clash = nv[i] & nv[j] & (np.abs(nd[i] - nd[j]) > p.gate * (ns[i] + ns[j]))
            agree &= ~clash

    flags = keyframe.hypotheses["flags"]
    target = ~valid & ((flags & Flag.BLACKLISTED) == 0) & (count >= p.min_valid_neighbours) & agree

    w = np.where(nv, 1.0 / (ns * ns), 0.0)
    wsum = w.sum(axis=0)
    safe = np.where(wsum > 0, wsum, 1.0)
    mean = (w * nd).sum(axis=0) / safe
    fill_var = p.fill_inflation / safe

    out = keyframe.copy()
    hyps = out.hypotheses
    hyps["idepth"][target] = mean[target]
    hyps["variance"][target] = fill_var[target]
    hyps["validity"][target] = 0
    hyps["flags"][target] = flags[target] | Flag.VALID | Flag.FILLED_BY_NEIGHBOUR
    return out


def smooth(keyframe: Keyframe, params: FilterParams | None = None) -> Keyframe:
    """Write inverse-variance weighted window averages into the smoothed fields.

    Only neighbours compatible with the centre contribute.  The smoothed
    variance is the harmonic combination ``1 / sum(1/var)``.  Raw idepth and
    variance are left untouched; non-valid pixels get zeroed smoothed fields.
    """
    p = params or FilterParams()
    valid, d, var = _snapshot(keyframe)
    nv = _window_stack(valid, p.radius, False, include_centre=True)
    nd = _window_stack(d, p.radius, 0.0, include_centre=True)
    nvar = _window_stack(var, p.radius, 1.0, include_centre=True)
    sc = np.sqrt(var)
    compatible = nv & (np.abs(nd - d) <= p.gate * (np.sqrt(nvar) + sc))

    w = np.where(compatible, 1.0 / nvar, 0.0)
    wsum = w.sum(axis=0)
    safe = np.where(wsum > 0, wsum, 1.0)
    mean = (w * nd).sum(axis=0) / safe

    out = keyframe.copy()
    hyps = out.hypotheses
    hyps["idepth_smoothed"] = np.where(valid, mean, 0.0)
    hyps["variance_smoothed"] = np.where(valid, 1.0 / safe, 0.0)
    return out
