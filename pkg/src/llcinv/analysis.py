"""Post-processing of simulation output into the scalar design metrics.

All functions are pure and operate on sampled arrays or the event log of a
SimOutput; nothing here mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Metrics:
    """Scalar summary the design loop and acceptance checks gate on."""

    thd: float
    zvs_coverage: float
    vcr_peak: float
    i_lr_rms: float
    i_lm_rms: float
    p_in_avg: float
    p_out_avg: float
    settling_time: Optional[float] = None
    zero_crossing_error: float = 0.0


def thd(
    samples: np.ndarray,
    sample_rate: float,
    fg: float,
    harmonics: int = 100,
    periods: int = 2,
) -> float:
    """Total harmonic distortion of a current series at grid frequency fg.

    Magnitudes are taken at exact harmonic bins of a rectangular window
    spanning an integer number of fundamental periods (the last `periods`
    of the series), so no window function is needed.
    """
    samples = np.asarray(samples, dtype=float)
    if sample_rate <= 0 or fg <= 0:
        raise DomainError("sample_rate and fg must be positive")
    if sample_rate < 2.0 * harmonics * fg:
        raise DomainError("sample rate too low to resolve the requested harmonics")
    n_window = int(round(periods * sample_rate / fg))
    if n_window > len(samples):
        raise DomainError(
            f"series holds {len(samples)} samples, {n_window} needed for "
            f"{periods} fundamental periods"
        )
    if n_window < 2 * harmonics * periods + 1:
        raise DomainError("window too short for the requested harmonic count")
    x = samples[-n_window:]
    spectrum = np.fft.rfft(x)
    full_scale = float(np.max(np.abs(x))) if len(x) else 0.0
    mags = np.abs(spectrum) * (2.0 / n_window)
    i1 = mags[periods]
    if full_scale == 0.0 or i1 < 1e-9 * full_scale:
        raise DomainError("fundamental below 1e-9 of full scale; THD undefined")
    bins = np.arange(2, harmonics + 1) * periods
    return float(math.sqrt(float(np.sum(mags[bins] ** 2))) / i1)


def zvs_coverage(output, window: Optional[tuple[float, float]] = None) -> float:
    """Fraction of turn-on events flagged ZVS, averaged over grid half-periods."""
    t = output.events_t
    flags = output.events_zvs
    if window is not None:
        lo, hi = window
        sel = (t >= lo) & (t < hi)
        t, flags = t[sel], flags[sel]
    if len(t) == 0:
        raise DomainError("no turn-on events in the requested window")
    fg = output.meta["fg"]
    buckets = np.floor(t * 2.0 * fg).astype(np.int64)
    fractions = []
    for b in np.unique(buckets):
        sel = buckets == b
        fractions.append(float(np.mean(flags[sel])))
    return float(np.mean(fractions))


def peak_stress(v_cr: np.ndarray) -> float:
    """Maximum |vCr| over the analysis window."""
    v_cr = np.asarray(v_cr, dtype=float)
    if v_cr.size == 0:
        raise DomainError("empty series")
    return float(np.max(np.abs(v_cr)))


def _final_cycle_slice(output) -> np.ndarray:
    fg = output.meta["fg"]
    t_end = output.t[-1]
    return output.t >= t_end - 1.0 / fg


def loss_proxies(output) -> dict:
    """Comparative switching/conduction proxies; never absolute watts.

    Counts hard-switched turn-on events over the whole log and takes RMS
    currents over the final grid cycle.
    """
    n_events = len(output.events_zvs)
    hard = int(n_events - int(np.sum(output.events_zvs)))
    sel = _final_cycle_slice(output)
    return {
        "hard_switch_count": hard,
        "hard_switch_fraction": hard / n_events if n_events else 0.0,
        "i_lr_rms": float(np.sqrt(np.mean(output.i_lr[sel] ** 2))),
        "i_lm_rms": float(np.sqrt(np.mean(output.i_lm[sel] ** 2))),
    }


def cycle_peaks(t: np.ndarray, i: np.ndarray, fg: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-half-cycle peak magnitude of a grid-frequency series.

    Returns (mid-times, peaks) for every complete half cycle in the series.
    """
    buckets = np.floor(t * 2.0 * fg).astype(np.int64)
    mids = []
    peaks = []
    for b in np.unique(buckets):
        sel = buckets == b
        mids.append((b + 0.5) / (2.0 * fg))
        peaks.append(float(np.max(np.abs(i[sel]))))
    return np.asarray(mids), np.asarray(peaks)


def settling_time(
    t: np.ndarray,
    i: np.ndarray,
    t_step: float,
    fg: float,
    band: float = 0.05,
) -> Optional[float]:
    """Time after t_step for the cycle-peak envelope to stay within +/-band.

    The final value is the last complete half-cycle peak; returns None when
    the envelope never settles inside the band ("unsettled").
    """
    t = np.asarray(t, dtype=float)
    i = np.asarray(i, dtype=float)
    if not t[0] <= t_step <= t[-1]:
        raise DomainError("t_step must lie inside the series")
    mids, peaks = cycle_peaks(t, i, fg)
    after = mids > t_step
    if not np.any(after):
        raise DomainError("no complete half cycle after t_step")
    mids, peaks = mids[after], peaks[after]
    final = peaks[-1]
    tol = band * abs(final)
    inside = np.abs(peaks - final) <= tol
    # First index from which every later half-cycle stays inside the band
    stay = np.flip(np.logical_and.accumulate(np.flip(inside)))
    idx = np.argmax(stay)
    if not stay[idx]:
        return None
    return float(mids[idx] - t_step)


def zero_crossing_error(
    t: np.ndarray,
    i: np.ndarray,
    i_ref: np.ndarray,
    fg: float,
    half_window: float = 1e-3,
) -> float:
    """Mean per-crossing integral of |i - i_ref| around reference zero crossings.

    Windows of +/-half_window are centred on the zero crossings of the
    reference sinusoid (every half period); result is in ampere-seconds.
    """
    t = np.asarray(t, dtype=float)
    err = np.abs(np.asarray(i, dtype=float) - np.asarray(i_ref, dtype=float))
    half = 0.5 / fg
    k_lo = int(math.ceil(t[0] / half))
    k_hi = int(math.floor(t[-1] / half))
    totals = []
    for k in range(k_lo, k_hi + 1):
        tc = k * half
        sel = (t >= tc - half_window) & (t <= tc + half_window)
        if np.count_nonzero(sel) < 2:
            continue
        totals.append(float(np.trapz(err[sel], t[sel])))
    return float(np.mean(totals)) if totals else 0.0


def energy_balance(output, window_periods: int = 1) -> tuple[float, float]:
    """Average (P_in, P_out) over the final `window_periods` grid cycles.

    Uses the cumulative energy channels, so the averages are exact at
    integration resolution rather than sample resolution.
    """
    fg = output.meta["fg"]
    t_end = output.t[-1]
    t_lo = t_end - window_periods / fg
    idx = int(np.searchsorted(output.t, t_lo))
    dt_w = output.t[-1] - output.t[idx]
    if dt_w <= 0:
        raise DomainError("window too short for the sampled series")
    p_in = (output.e_in[-1] - output.e_in[idx]) / dt_w
    p_out = (output.e_out[-1] - output.e_out[idx]) / dt_w
    return float(p_in), float(p_out)


def compute_metrics(
    output,
    thd_harmonics: int = 100,
    thd_periods: int = 2,
    t_step: Optional[float] = None,
    band: float = 0.05,
) -> Metrics:
    """Assemble the full Metrics block from one simulation output."""
    fg = output.meta["fg"]
    proxies = loss_proxies(output)
    p_in, p_out = energy_balance(output)
    sel = _final_cycle_slice(output)
    amp = 2.0 * p_out / output.meta["vm"]
    i_ref = amp * np.sin(2.0 * math.pi * fg * output.t)
    settle = None
    if t_step is not None:
        settle = settling_time(output.t, output.i_grid, t_step, fg, band)
    return Metrics(
        thd=thd(output.i_grid, output.sample_rate, fg, thd_harmonics, thd_periods),
        zvs_coverage=zvs_coverage(output),
        vcr_peak=peak_stress(output.v_cr[sel]),
        i_lr_rms=proxies["i_lr_rms"],
        i_lm_rms=proxies["i_lm_rms"],
        p_in_avg=p_in,
        p_out_avg=p_out,
        settling_time=settle,
        zero_crossing_error=zero_crossing_error(output.t, output.i_grid, i_ref, fg),
    )
