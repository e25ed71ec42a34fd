"""Fixed-step time-domain simulation of the single-stage power chain.

Two engines share one output format: the switched engine integrates the
piecewise-linear network (full bridge, LLC tank, ideal HFT and rectifier,
series output capacitor bank, line-frequency unfolder, LC filter, stiff
grid) with a classical 4th-order fixed-step scheme; the envelope engine
replaces the switching-frequency dynamics with the quasi-static FHA gain
and runs at envelope timescale for the design loop's inner checks.

The two series output modules are reduced to one equivalent module
(identical-module assumption): per-module tank states, a rectifier clamp
at the series port through n_series*N, and the per-module output
capacitance 2*Cf appearing as Cf at the series port.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .design import DesignSpec, FilterDesign, GridSpec, filter_inductor
from .errors import ConfigError, DomainError, NumericError
from .fha import ResonantTank, gain_fha, solve_fs_for_gain

TWO_PI = 2.0 * math.pi

_TRIM_DEBUG: list = []

# Primary-bridge turn-on transitions: leg A/B, rising/falling midpoint.
TRANSITION_LABELS = ("A_rise", "A_fall", "B_rise", "B_fall")
# Tank-current polarity that discharges the incoming switch node.
_REQUIRED_SIGN = (-1.0, 1.0, 1.0, -1.0)


@dataclass(frozen=True)
class Segment:
    """One schedule segment: DC input voltage and commanded peak grid current."""

    t_start: float
    t_end: float
    Vin: float
    Ipeak: float

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ConfigError("segment must have positive duration")
        if self.Vin <= 0:
            raise ConfigError("segment Vin must be positive")
        if self.Ipeak < 0:
            raise ConfigError("segment Ipeak must be non-negative")


@dataclass(frozen=True)
class Schedule:
    """Contiguous, non-overlapping segments covering [0, duration]."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        t = 0.0
        for seg in self.segments:
            if abs(seg.t_start - t) > 1e-12:
                raise ConfigError("segments must be contiguous from t = 0")
            t = seg.t_end

    @property
    def duration(self) -> float:
        return self.segments[-1].t_end if self.segments else 0.0


_PRESET_TIMES = (0.0, 0.0708, 0.1625, 0.254, 0.3)


def schedule_preset(name: str) -> Schedule:
    """Canned test schedules: 'c1-c4' steps Vin, 'c5-c8'/'c9-c12' step Ipeak."""
    if name == "c1-c4":
        vins, ipeaks = (600.0, 850.0, 700.0, 750.0), (60.0,) * 4
    elif name in ("c5-c8", "c9-c12"):
        vins, ipeaks = (850.0,) * 4, (50.0, 10.0, 60.0, 30.0)
    else:
        raise ConfigError(f"unknown schedule preset {name!r}")
    segs = tuple(
        Segment(_PRESET_TIMES[i], _PRESET_TIMES[i + 1], vins[i], ipeaks[i])
        for i in range(4)
    )
    return Schedule(segs)


def resegment(schedule: Schedule, seg_duration: float) -> Schedule:
    """Rebuild a schedule with the same (Vin, Ipeak) sequence on equal segments.

    Used to compress the shipped schedules to desk scale while keeping the
    step structure.
    """
    if seg_duration <= 0:
        raise ConfigError("seg_duration must be positive")
    segs = tuple(
        Segment(i * seg_duration, (i + 1) * seg_duration, s.Vin, s.Ipeak)
        for i, s in enumerate(schedule.segments)
    )
    return Schedule(segs)


@dataclass
class SimConfig:
    """Simulation setup; dt and sample_dt default from the frequency range."""

    fs_min: float
    fs_max: float
    mode: str = "switched"  # switched | envelope
    dt: Optional[float] = None
    duration: Optional[float] = None
    sample_dt: Optional[float] = None
    zvs_current_threshold: float = 0.0
    n_series: int = 2
    pi_kp: float = 0.3
    pi_ki: float = 0.7
    current_loop_tau: float = 3.2e-5  # inner current-correction time constant (s)
    envelope_rs_floor: float = 40.0  # ohms; keeps the envelope source stable

    def __post_init__(self):
        if not 0 < self.fs_min < self.fs_max:
            raise ConfigError("need 0 < fs_min < fs_max")
        if self.mode not in ("switched", "envelope"):
            raise ConfigError("mode must be 'switched' or 'envelope'")

    def resolved_dt(self) -> float:
        if self.dt is not None:
            if self.dt <= 0:
                raise ConfigError("dt must be positive")
            if self.mode == "switched" and self.dt > 1.0 / (100.0 * self.fs_max):
                raise ConfigError(
                    "switched mode needs dt <= 1/(100*fs_max) "
                    f"= {1.0 / (100.0 * self.fs_max):.3e} s, got {self.dt:.3e} s"
                )
            return self.dt
        if self.mode == "switched":
            return 1.0 / (200.0 * self.fs_max)
        return 1.0 / (1.5 * self.fs_max)


class ControlCommand(NamedTuple):
    fs: float
    phi: float
    saturated: bool


def controller_step(
    v_ref_envelope: float,
    Vin: float,
    tank: ResonantTank,
    Q_est: float,
    fs_range: tuple[float, float],
    t: float = 0.0,
) -> ControlCommand:
    """Hybrid modulation law for one per-module envelope reference sample.

    A gain demand above what fs_max can deliver is met by frequency
    modulation at zero phase shift; below that, the frequency parks at
    fs_max and the phase shift supplies the remaining reduction, reaching
    phi = pi (zero gain) at the reference zero crossings.
    """
    if v_ref_envelope < 0:
        raise DomainError("v_ref_envelope must be non-negative")
    fs_min, fs_max = fs_range
    g = v_ref_envelope / Vin
    g_hi = gain_fha(tank, Q_est, fs_max / tank.fr1)
    if g < g_hi:
        phi = 2.0 * math.acos(min(1.0, g / g_hi))
        return ControlCommand(fs_max, phi, False)
    g_lo = gain_fha(tank, Q_est, fs_min / tank.fr1)
    if g > g_lo:
        return ControlCommand(fs_min, 0.0, True)
    fs, _ = solve_fs_for_gain(tank, Q_est, g, fs_range)
    return ControlCommand(fs, 0.0, False)


def zvs_classify(i_lr: float, transition: int, threshold: float = 0.0) -> bool:
    """True when the tank current at a turn-on instant soft-switches the leg.

    The polarity must discharge the incoming switch node and the magnitude
    must reach the threshold; zero current is classified hard.
    """
    req = _REQUIRED_SIGN[transition]
    return req * i_lr > 0.0 and abs(i_lr) >= threshold


@dataclass
class SimOutput:
    """Uniformly sampled channels plus the primary-bridge turn-on event log."""

    t: np.ndarray
    i_lr: np.ndarray
    v_cr: np.ndarray
    i_lm: np.ndarray
    v_cout: np.ndarray
    i_grid: np.ndarray
    v_grid: np.ndarray
    fs_cmd: np.ndarray
    phi_cmd: np.ndarray
    polarity: np.ndarray
    saturated: np.ndarray
    e_in: np.ndarray
    e_out: np.ndarray
    events_t: np.ndarray
    events_i_lr: np.ndarray
    events_transition: np.ndarray
    events_zvs: np.ndarray
    meta: dict = field(default_factory=dict)

    CHANNELS = (
        "t", "i_lr", "v_cr", "i_lm", "v_cout", "i_grid", "v_grid",
        "fs_cmd", "phi_cmd", "polarity", "saturated", "e_in", "e_out",
    )

    @property
    def sample_rate(self) -> float:
        return self.meta["sample_rate"]


def _empty_output(meta: dict) -> SimOutput:
    z = np.empty(0)
    return SimOutput(
        t=z, i_lr=z, v_cr=z, i_lm=z, v_cout=z, i_grid=z, v_grid=z,
        fs_cmd=z, phi_cmd=z, polarity=z, saturated=z, e_in=z, e_out=z,
        events_t=z, events_i_lr=z,
        events_transition=np.empty(0, dtype=np.int8),
        events_zvs=np.empty(0, dtype=bool),
        meta=meta,
    )


def _step_matrices(mode, p, Lr, Cr, Lm, Cf, Lf, N, n_series, dt):
    """Exact RK4 update operators for one frozen (rectifier mode, polarity).

    The network is linear within a step, so the classical scheme reduces to
    y+ = PHI*y + vb*u_vb + vg*u_vg with matrix polynomials in A*dt.
    """
    A = np.zeros((5, 5))
    b_vb = np.zeros(5)
    b_vg = np.zeros(5)
    inv_clamp = 1.0 / (n_series * N)
    if mode == 0:
        c = 1.0 / (Lr + Lm)
        A[0, 1] = -c
        b_vb[0] = c
        A[2, 1] = -c
        b_vb[2] = c
    else:
        s = float(mode)
        A[0, 1] = -1.0 / Lr
        A[0, 3] = -s * inv_clamp / Lr
        b_vb[0] = 1.0 / Lr
        A[2, 3] = s * inv_clamp / Lm
        A[3, 0] = s / (N * Cf)
        A[3, 2] = -s / (N * Cf)
    A[1, 0] = 1.0 / Cr
    A[3, 4] = -p / Cf
    A[4, 3] = p / Lf
    b_vg[4] = -1.0 / Lf

    ad = A * dt
    eye = np.eye(5)
    phi = eye + ad @ (eye + ad @ (eye / 2 + ad @ (eye / 6 + ad / 24)))
    psi = dt * (eye + ad @ (eye / 2 + ad @ (eye / 6 + ad / 24)))
    u_vb = psi @ b_vb
    u_vg = psi @ b_vg
    return (
        tuple(tuple(float(x) for x in row) for row in phi),
        tuple(float(x) for x in u_vb),
        tuple(float(x) for x in u_vg),
    )


def _make_fast_controller(tank: ResonantTank, fs_min: float, fs_max: float):
    """Closure form of controller_step used inside the stepping loops."""
    N = tank.N
    m = tank.m
    fr1 = tank.fr1
    fx_lo = fs_min / fr1
    fx_hi = fs_max / fr1
    hypot = math.hypot
    acos = math.acos

    def gain(q, fx):
        fx2 = fx * fx
        return N * fx2 * (m - 1.0) / hypot(m * fx2 - 1.0, fx * (fx2 - 1.0) * (m - 1.0) * q)

    def ctrl(g, q):
        g_hi = gain(q, fx_hi)
        if g < g_hi:
            return fs_max, 2.0 * acos(min(1.0, g / g_hi)), False
        if g > gain(q, fx_lo):
            return fs_min, 0.0, True
        lo, hi = fx_lo, fx_hi
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if gain(q, mid) >= g:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi) * fr1, 0.0, False

    return ctrl, gain


def _unpack_schedule(schedule: Schedule):
    ends = [s.t_end for s in schedule.segments]
    vins = [s.Vin for s in schedule.segments]
    ipks = [s.Ipeak for s in schedule.segments]
    return ends, vins, ipks


def _q_coefficient(tank: ResonantTank, vm: float, n_series: int) -> float:
    """Q per ampere of commanded peak grid current at unity power factor."""
    vo_mod_rms = vm / (n_series * math.sqrt(2.0))
    return tank.z0 * math.pi**2 * tank.N**2 * vm / (16.0 * n_series * vo_mod_rms**2)


def simulate(
    tank: ResonantTank,
    filt: FilterDesign,
    grid: GridSpec,
    schedule: Schedule,
    config: SimConfig,
) -> SimOutput:
    """Run the configured engine over the schedule and return sampled output."""
    if config.mode == "envelope":
        return envelope_simulate(tank, filt, grid, schedule, config)
    return _run_switched(tank, filt, grid, schedule, config)


def envelope_simulate(
    tank: ResonantTank,
    filt: FilterDesign,
    grid: GridSpec,
    schedule: Schedule,
    config: SimConfig,
) -> SimOutput:
    return _run_envelope(tank, filt, grid, schedule, config)


def _resolve_run(schedule: Schedule, config: SimConfig, mode: str):
    dt = config.resolved_dt()
    duration = config.duration if config.duration is not None else schedule.duration
    if duration > schedule.duration + 1e-12:
        raise ConfigError("duration exceeds the schedule")
    n_steps = int(round(duration / dt))
    if config.sample_dt is not None:
        stride = max(1, int(round(config.sample_dt / dt)))
    elif mode == "switched":
        stride = max(1, int(round(2e-6 / dt)))
    else:
        stride = 1
    meta = {
        "mode": mode,
        "dt": dt,
        "sample_rate": 1.0 / (stride * dt),
        "duration": duration,
        "n_steps": n_steps,
    }
    return dt, duration, n_steps, stride, meta


def _run_switched(tank, filt, grid, schedule, config) -> SimOutput:
    dt, duration, n_steps, stride, meta = _resolve_run(schedule, config, "switched")
    meta.update(
        fg=grid.fg, vm=grid.vm, fs_min=config.fs_min, fs_max=config.fs_max,
        n_series=config.n_series, zvs_threshold=config.zvs_current_threshold,
    )
    if n_steps == 0:
        return _empty_output(meta)

    # Circuit constants
    Lr, Cr, Lm, N = tank.Lr, tank.Cr, tank.Lm, tank.N
    Cf, Lf = filt.Cf, filt.Lf
    n_ser = config.n_series
    inv_clamp = 1.0 / (n_ser * N)
    lm_over = Lm / (Lm + Lr)
    Vm = grid.vm
    wg = TWO_PI * grid.fg
    qk = _q_coefficient(tank, Vm, n_ser)
    kp, ki = config.pi_kp, config.pi_ki
    kc = Lf / config.current_loop_tau  # proportional instantaneous-current correction
    zvs_thr = config.zvs_current_threshold
    fs_min, fs_max = config.fs_min, config.fs_max
    ctrl, _ = _make_fast_controller(tank, fs_min, fs_max)
    sin = math.sin
    cos = math.cos

    # Update operators for the six (mode, polarity) combinations.
    ops = {
        (mode, p): _step_matrices(mode, p, Lr, Cr, Lm, Cf, Lf, N, n_ser, dt)
        for mode in (-1, 0, 1)
        for p in (-1.0, 1.0)
    }

    seg_ends, seg_vins, seg_ipks = _unpack_schedule(schedule)
    seg_idx = 0
    Vin = seg_vins[0]
    a_target = seg_ipks[0]
    corr = 0.0
    integ = 0.0
    a_cmd = max(0.0, a_target)
    x = wg * Lf * a_cmd
    alpha = math.atan2(x, Vm)
    rv = math.hypot(Vm, x)
    q_est = qk * a_cmd
    acc_is = 0.0
    acc_t = 0.0
    pol = 1.0
    min_dwell = 0.2 / grid.fg  # a flip counts only after 40% of a half cycle

    # Modulator state
    psi = 0.0
    half_idx = 0
    s_a = 1.0
    s_b = 1.0  # phase-shifted leg; flips once per half period after phi
    b_fired = False
    g0 = max(0.0, rv * sin(alpha)) / (n_ser * Vin)
    fs_cmd, phi_cmd, sat = ctrl(g0, q_est)
    w_s = TWO_PI * fs_cmd

    # States: per-module tank current/cap/magnetizing, series-port bus, filter
    y0 = y1 = y2 = y3 = y4 = 0.0
    mode = 0
    e_in = 0.0
    e_out = 0.0

    n_samples = (n_steps + stride - 1) // stride
    out = {name: np.empty(n_samples) for name in SimOutput.CHANNELS}
    ev_t: list[float] = []
    ev_i: list[float] = []
    ev_tr: list[int] = []
    ev_zvs: list[bool] = []
    sample_i = 0
    last_good = 0.0

    for step in range(n_steps):
        t = step * dt

        # --- schedule segment
        while t >= seg_ends[seg_idx] and seg_idx < len(seg_ends) - 1:
            seg_idx += 1
            Vin = seg_vins[seg_idx]
            a_target = seg_ipks[seg_idx]
            a_cmd = max(0.0, a_target + corr)
            x = wg * Lf * a_cmd
            alpha = math.atan2(x, Vm)
            rv = math.hypot(Vm, x)
            q_est = qk * a_cmd

        # --- grid reference, polarity, per-half-cycle amplitude trim
        tm = t + 0.5 * dt
        sg = sin(wg * tm)
        cg = cos(wg * tm)
        v_g = Vm * sg
        ref = rv * (sg * cos(alpha) + cg * sin(alpha))
        p = 1.0 if ref >= 0.0 else -1.0
        # Reference-phase updates move the crossing point slightly, so a flip
        # only counts after a minimum dwell; measurement is the fundamental
        # component, which harmonic distortion leaves unbiased.
        if p != pol and acc_t > min_dwell:
            a_meas = 2.0 * acc_is / acc_t
            err = a_target - a_meas
            integ += ki * err
            lim = 0.5 * a_target + 5.0
            if integ > lim:
                integ = lim
            elif integ < -lim:
                integ = -lim
            corr = kp * err + integ
            a_cmd = max(0.0, a_target + corr)
            x = wg * Lf * a_cmd
            alpha = math.atan2(x, Vm)
            rv = math.hypot(Vm, x)
            q_est = qk * a_cmd
            pol = p
            acc_is = 0.0
            acc_t = 0.0
        acc_is += y4 * sg * dt
        acc_t += dt

        # --- leg transitions reached by the phase accumulator
        half_start = half_idx * math.pi
        if not b_fired and psi - half_start >= phi_cmd:
            s_b = -s_b
            tr = 2 if s_b > 0 else 3
            flag = _REQUIRED_SIGN[tr] * y0 > 0.0 and abs(y0) >= zvs_thr
            ev_t.append(t)
            ev_i.append(y0)
            ev_tr.append(tr)
            ev_zvs.append(flag)
            b_fired = True
        if psi >= half_start + math.pi:
            s_a = -s_a
            half_idx += 1
            tr = 0 if s_a > 0 else 1
            flag = _REQUIRED_SIGN[tr] * y0 > 0.0 and abs(y0) >= zvs_thr
            ev_t.append(t)
            ev_i.append(y0)
            ev_tr.append(tr)
            ev_zvs.append(flag)
            # Controller updates once per switching half-period: scheduled
            # feedforward plus instantaneous current correction
            v_cmd = ref + kc * (a_cmd * sg - y4)
            g = max(0.0, pol * v_cmd) / (n_ser * Vin)
            fs_cmd, phi_cmd, sat = ctrl(g, q_est)
            w_s = TWO_PI * fs_cmd
            b_fired = False
            if psi - half_idx * math.pi >= phi_cmd:
                s_b = -s_b
                tr = 2 if s_b > 0 else 3
                flag = _REQUIRED_SIGN[tr] * y0 > 0.0 and abs(y0) >= zvs_thr
                ev_t.append(t)
                ev_i.append(y0)
                ev_tr.append(tr)
                ev_zvs.append(flag)
                b_fired = True

        v_b = 0.5 * Vin * (s_a - s_b)

        # --- rectifier conduction state (held for the step)
        ipr = y0 - y2
        if mode == 1:
            if ipr <= 0.0:
                mode = 0
        elif mode == -1:
            if ipr >= 0.0:
                mode = 0
        if mode == 0:
            vp_open = lm_over * (v_b - y1)
            lim_v = y3 * inv_clamp
            if vp_open > lim_v:
                mode = 1
            elif vp_open < -lim_v:
                mode = -1

        # --- sampling (state at step start)
        if step % stride == 0:
            if not (math.isfinite(y0) and math.isfinite(y3) and math.isfinite(y4)):
                raise NumericError(
                    f"simulation diverged near t = {t:.6e} s", last_good_time=last_good
                )
            last_good = t
            out["t"][sample_i] = t
            out["i_lr"][sample_i] = y0
            out["v_cr"][sample_i] = y1
            out["i_lm"][sample_i] = y2
            out["v_cout"][sample_i] = y3
            out["i_grid"][sample_i] = y4
            out["v_grid"][sample_i] = v_g
            out["fs_cmd"][sample_i] = fs_cmd
            out["phi_cmd"][sample_i] = phi_cmd
            out["polarity"][sample_i] = pol
            out["saturated"][sample_i] = 1.0 if sat else 0.0
            out["e_in"][sample_i] = e_in
            out["e_out"][sample_i] = e_out
            sample_i += 1

        # --- one exact RK4 step of the frozen linear network
        phi_m, u_vb, u_vg = ops[(mode, pol)]
        r = phi_m[0]
        n0 = r[0] * y0 + r[1] * y1 + r[2] * y2 + r[3] * y3 + r[4] * y4 + v_b * u_vb[0] + v_g * u_vg[0]
        r = phi_m[1]
        n1 = r[0] * y0 + r[1] * y1 + r[2] * y2 + r[3] * y3 + r[4] * y4 + v_b * u_vb[1] + v_g * u_vg[1]
        r = phi_m[2]
        n2 = r[0] * y0 + r[1] * y1 + r[2] * y2 + r[3] * y3 + r[4] * y4 + v_b * u_vb[2] + v_g * u_vg[2]
        r = phi_m[3]
        n3 = r[0] * y0 + r[1] * y1 + r[2] * y2 + r[3] * y3 + r[4] * y4 + v_b * u_vb[3] + v_g * u_vg[3]
        r = phi_m[4]
        n4 = r[0] * y0 + r[1] * y1 + r[2] * y2 + r[3] * y3 + r[4] * y4 + v_b * u_vb[4] + v_g * u_vg[4]

        e_in += n_ser * v_b * 0.5 * (y0 + n0) * dt
        e_out += v_g * 0.5 * (y4 + n4) * dt
        y0, y1, y2, y3, y4 = n0, n1, n2, n3, n4
        psi += w_s * dt

    for name in out:
        out[name] = out[name][:sample_i]
    return SimOutput(
        **out,
        events_t=np.asarray(ev_t),
        events_i_lr=np.asarray(ev_i),
        events_transition=np.asarray(ev_tr, dtype=np.int8),
        events_zvs=np.asarray(ev_zvs, dtype=bool),
        meta=meta,
    )


def _run_envelope(tank, filt, grid, schedule, config) -> SimOutput:
    dt, duration, n_steps, stride, meta = _resolve_run(schedule, config, "envelope")
    meta.update(
        fg=grid.fg, vm=grid.vm, fs_min=config.fs_min, fs_max=config.fs_max,
        n_series=config.n_series, zvs_threshold=config.zvs_current_threshold,
    )
    if n_steps == 0:
        return _empty_output(meta)

    Lr, Cr, Lm, N = tank.Lr, tank.Cr, tank.Lm, tank.N
    Cf, Lf = filt.Cf, filt.Lf
    n_ser = config.n_series
    Vm = grid.vm
    wg = TWO_PI * grid.fg
    qk = _q_coefficient(tank, Vm, n_ser)
    kp, ki = config.pi_kp, config.pi_ki
    kc = Lf / config.current_loop_tau
    fs_min, fs_max = config.fs_min, config.fs_max
    m_ratio = tank.m
    fr1 = tank.fr1
    z0 = tank.z0
    r_s = config.envelope_rs_floor
    inv_rs = 1.0 / r_s
    sin = math.sin
    cos = math.cos
    atan2 = math.atan2
    hypot = math.hypot
    bisect_left = bisect.bisect_left
    four_over_pi = 4.0 / math.pi

    # Inverse gain schedule, rebuilt whenever the load estimate changes.
    fx_grid = np.linspace(fs_min / fr1, fs_max / fr1, 513)
    fs_grid_rev = (fx_grid[::-1] * fr1).tolist()

    def build_table(q):
        fx2 = fx_grid * fx_grid
        gains = N * fx2 * (m_ratio - 1.0) / np.hypot(
            m_ratio * fx2 - 1.0, fx_grid * (fx2 - 1.0) * (m_ratio - 1.0) * q
        )
        return gains[::-1].tolist(), float(gains[-1]), float(gains[0])

    seg_ends, seg_vins, seg_ipks = _unpack_schedule(schedule)
    seg_idx = 0
    Vin = seg_vins[0]
    a_target = seg_ipks[0]
    corr = 0.0
    integ = 0.0
    a_cmd = max(0.0, a_target)
    x = wg * Lf * a_cmd
    alpha = atan2(x, Vm)
    rv = hypot(Vm, x)
    q_est = qk * a_cmd
    g_rev, g_hi, g_lo = build_table(q_est)
    acc_is = 0.0
    acc_t = 0.0
    pol = 1.0
    min_dwell = 0.2 / grid.fg

    v_out = 0.0
    i_lf = 0.0
    e_in = 0.0
    e_out = 0.0
    inv_cf = 1.0 / Cf
    inv_lf = 1.0 / Lf

    n_samples = (n_steps + stride - 1) // stride
    out = {name: np.empty(n_samples) for name in SimOutput.CHANNELS}
    o_t, o_ilr, o_vcr, o_ilm = out["t"], out["i_lr"], out["v_cr"], out["i_lm"]
    o_vco, o_ig, o_vg = out["v_cout"], out["i_grid"], out["v_grid"]
    o_fs, o_phi, o_pol = out["fs_cmd"], out["phi_cmd"], out["polarity"]
    o_sat, o_ein, o_eout = out["saturated"], out["e_in"], out["e_out"]
    ev_t: list[float] = []
    ev_i: list[float] = []
    ev_tr: list[int] = []
    ev_zvs: list[bool] = []
    ev_t_append, ev_i_append = ev_t.append, ev_i.append
    ev_tr_append, ev_zvs_append = ev_tr.append, ev_zvs.append
    sample_i = 0
    last_good = 0.0

    for step in range(n_steps):
        t = step * dt
        while t >= seg_ends[seg_idx] and seg_idx < len(seg_ends) - 1:
            seg_idx += 1
            Vin = seg_vins[seg_idx]
            a_target = seg_ipks[seg_idx]
            a_cmd = max(0.0, a_target + corr)
            x = wg * Lf * a_cmd
            alpha = atan2(x, Vm)
            rv = hypot(Vm, x)
            q_est = qk * a_cmd
            g_rev, g_hi, g_lo = build_table(q_est)

        tm = t + 0.5 * dt
        sg = sin(wg * tm)
        cg = cos(wg * tm)
        v_g = Vm * sg
        ref = rv * (sg * cos(alpha) + cg * sin(alpha))
        p = 1.0 if ref >= 0.0 else -1.0
        if p != pol and acc_t > min_dwell:
            a_meas = 2.0 * acc_is / acc_t
            err = a_target - a_meas
            integ += ki * err
            lim = 0.5 * a_target + 5.0
            integ = min(max(integ, -lim), lim)
            corr = kp * err + integ
            a_cmd = max(0.0, a_target + corr)
            x = wg * Lf * a_cmd
            alpha = atan2(x, Vm)
            rv = hypot(Vm, x)
            q_est = qk * a_cmd
            g_rev, g_hi, g_lo = build_table(q_est)
            pol = p
            acc_is = 0.0
            acc_t = 0.0
        acc_is += i_lf * sg * dt
        acc_t += dt

        # Hybrid modulation from the inverse gain schedule; the commanded
        # pair realizes the loaded FHA gain min(g, g_lo).
        v_cmd = ref + kc * (a_cmd * sg - i_lf)
        g = max(0.0, pol * v_cmd) / (n_ser * Vin)
        sat = False
        if g < g_hi:
            fs_cmd = fs_max
            cos_half_phi = g / g_hi
            phi_cmd = 2.0 * math.acos(cos_half_phi)
            realized = g
        elif g > g_lo:
            fs_cmd = fs_min
            phi_cmd = 0.0
            cos_half_phi = 1.0
            realized = g_lo
            sat = True
        else:
            k = bisect_left(g_rev, g)
            if k == 0:
                fs_cmd = fs_grid_rev[0]
            elif k >= len(g_rev):
                fs_cmd = fs_grid_rev[-1]
            else:
                ga, gb = g_rev[k - 1], g_rev[k]
                fa, fb = fs_grid_rev[k - 1], fs_grid_rev[k]
                fs_cmd = fa + (fb - fa) * (g - ga) / (gb - ga)
            phi_cmd = 0.0
            cos_half_phi = 1.0
            realized = g
        # Feeding the measured load current through R_s keeps the interface
        # resistance out of the realized gain (it only shapes dynamics).
        v_t = n_ser * realized * Vin + r_s * pol * i_lf
        w = TWO_PI * fs_cmd

        # FHA amplitude estimates for the tank channels and ZVS events
        rac_rated = z0 / q_est if q_est > 1e-12 else 1e12
        ratio = abs(ref) / rv if rv > 0 else 1.0
        rac_eff = rac_rated * ratio if ratio > 1e-9 else rac_rated * 1e-9
        xs_m = w * Lr - 1.0 / (w * Cr)
        xm_m = w * Lm
        d2 = rac_eff * rac_eff + xm_m * xm_m
        # Near the crossings the rectifier clamp sits close to zero and the
        # tank sees almost a short, so the ZVS angle uses the scaled load.
        theta = atan2(xm_m * rac_eff * rac_eff / d2 + xs_m, xm_m * xm_m * rac_eff / d2)
        d2r = rac_rated * rac_rated + xm_m * xm_m
        re_z = xm_m * xm_m * rac_rated / d2r
        im_z = xm_m * rac_rated * rac_rated / d2r + xs_m
        v1 = four_over_pi * Vin * cos_half_phi
        i_lr_amp = v1 / hypot(re_z, im_z)
        v_cr_amp = i_lr_amp / (w * Cr)
        i_lm_amp = four_over_pi * (v_out / n_ser) / (N * w * Lm)
        half_phi = 0.5 * phi_cmd
        ev_t_append(t)
        ev_i_append(i_lr_amp)
        ev_tr_append(0)
        ev_zvs_append(sin(theta + half_phi) > 0.0)
        ev_t_append(t)
        ev_i_append(i_lr_amp)
        ev_tr_append(3)
        ev_zvs_append(theta - half_phi > 0.0)

        if step % stride == 0:
            if not (math.isfinite(v_out) and math.isfinite(i_lf)):
                raise NumericError(
                    f"simulation diverged near t = {t:.6e} s", last_good_time=last_good
                )
            last_good = t
            o_t[sample_i] = t
            o_ilr[sample_i] = i_lr_amp
            o_vcr[sample_i] = v_cr_amp
            o_ilm[sample_i] = i_lm_amp
            o_vco[sample_i] = v_out
            o_ig[sample_i] = i_lf
            o_vg[sample_i] = v_g
            o_fs[sample_i] = fs_cmd
            o_phi[sample_i] = phi_cmd
            o_pol[sample_i] = pol
            o_sat[sample_i] = 1.0 if sat else 0.0
            o_ein[sample_i] = e_in
            o_eout[sample_i] = e_out
            sample_i += 1

        # RK4 on (v_out, i_lf); the rectifier only sources current
        hdt = 0.5 * dt
        s1 = (v_t - v_out) * inv_rs
        k1v = ((s1 if s1 > 0.0 else 0.0) - pol * i_lf) * inv_cf
        k1i = (pol * v_out - v_g) * inv_lf
        va, ia = v_out + hdt * k1v, i_lf + hdt * k1i
        s2 = (v_t - va) * inv_rs
        k2v = ((s2 if s2 > 0.0 else 0.0) - pol * ia) * inv_cf
        k2i = (pol * va - v_g) * inv_lf
        va, ia = v_out + hdt * k2v, i_lf + hdt * k2i
        s3 = (v_t - va) * inv_rs
        k3v = ((s3 if s3 > 0.0 else 0.0) - pol * ia) * inv_cf
        k3i = (pol * va - v_g) * inv_lf
        va, ia = v_out + dt * k3v, i_lf + dt * k3i
        s4 = (v_t - va) * inv_rs
        k4v = ((s4 if s4 > 0.0 else 0.0) - pol * ia) * inv_cf
        k4i = (pol * va - v_g) * inv_lf
        v_new = v_out + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        i_new = i_lf + dt / 6.0 * (k1i + 2 * k2i + 2 * k3i + k4i)
        # Source power taken at the bus node, so storage + export balance it
        e_in += 0.5 * (v_out + v_new) * (s1 if s1 > 0.0 else 0.0) * dt
        e_out += v_g * 0.5 * (i_lf + i_new) * dt
        v_out, i_lf = v_new, i_new

    for name in out:
        out[name] = out[name][:sample_i]
    return SimOutput(
        **out,
        events_t=np.asarray(ev_t),
        events_i_lr=np.asarray(ev_i),
        events_transition=np.asarray(ev_tr, dtype=np.int8),
        events_zvs=np.asarray(ev_zvs, dtype=bool),
        meta=meta,
    )


def _provisional_filter(spec: DesignSpec, tank: ResonantTank) -> FilterDesign:
    """Stand-in filter for converter-side checks that run before filter sizing."""
    from .design import filter_capacitor

    fc = 0.5 * tank.fr2
    _, cf = filter_capacitor(spec.ipeak_min, spec.grid.vm, spec.grid.fg)
    return FilterDesign(Cf=cf, Lf=filter_inductor(fc, cf), fc=fc, region="region2")


def design_check_simulator(
    tank: ResonantTank,
    filt: Optional[FilterDesign],
    spec: DesignSpec,
    condition: str,
) -> dict:
    """Envelope-mode simulation backend for the design loop's checks.

    stress: worst tank stress (Vin_min, rated current) -> peak |vCr|
    zvs:    light load at maximum input -> ZVS coverage
    thd:    light load at maximum input -> grid-current THD
    """
    from .analysis import peak_stress, thd, zvs_coverage

    fg = spec.grid.fg
    if condition == "stress":
        vin, ipk, cycles = spec.Vin_min, spec.ipeak_max, 3
    elif condition == "zvs":
        vin, ipk, cycles = spec.Vin_max, spec.ipeak_min, 3
    elif condition == "thd":
        vin, ipk, cycles = spec.Vin_max, spec.ipeak_min, 4
    else:
        raise ConfigError(f"unknown design check {condition!r}")
    if filt is None:
        filt = _provisional_filter(spec, tank)
    duration = cycles / fg
    schedule = Schedule((Segment(0.0, duration, vin, ipk),))
    config = SimConfig(
        fs_min=spec.fs_min, fs_max=spec.fs_max, mode="envelope",
        n_series=spec.n_series,
    )
    output = _run_envelope(tank, filt, spec.grid, schedule, config)
    t_meas = duration - 2.0 / fg
    sel = output.t >= t_meas
    metrics: dict = {}
    if condition == "stress":
        metrics["vcr_peak"] = peak_stress(output.v_cr[sel])
    elif condition == "zvs":
        metrics["zvs_coverage"] = zvs_coverage(output, window=(t_meas, duration))
    else:
        metrics["thd"] = thd(
            output.i_grid[sel], output.sample_rate, fg, harmonics=100, periods=2
        )
    return metrics
