"""Sizing equations and the iterative design methodology.

The sizing functions are pure; run_design_loop() drives them through the
stress / regulation / ZVS / THD checks, delegating the simulation-backed
checks to a pluggable simulator (the fast envelope engine by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .errors import DomainError, InfeasibleError
from .fha import ResonantTank, gain_fha, load_context

SQRT6 = math.sqrt(6.0)

# E6 capacitor decade values (all of them E12 members), used to snap Cf
# downward; the coarser series keeps the 10% reactive-current budget intact
# with margin.
E6 = (1.0, 1.5, 2.2, 3.3, 4.7, 6.8)


@dataclass(frozen=True)
class GridSpec:
    """Stiff grid the inverter ties to: line-to-line RMS voltage, frequency, tolerance."""

    Vo: float
    fg: float
    k: float = 0.05

    def __post_init__(self):
        if self.Vo <= 0 or self.fg <= 0:
            raise DomainError("grid voltage and frequency must be positive")
        if not 0.0 <= self.k <= 0.05:
            raise DomainError("grid voltage tolerance k must lie in [0, 0.05]")

    @property
    def vm(self) -> float:
        """Peak of one phase voltage: sqrt(2)*Vo/sqrt(3)."""
        return math.sqrt(2.0) * self.Vo / math.sqrt(3.0)


@dataclass(frozen=True)
class DesignSpec:
    """Inputs and iteration policy for the design loop (single-phase quantities)."""

    grid: GridSpec
    Vin_min: float
    Vin_max: float
    Po_min: float
    Po_max: float
    fs_min: float
    fs_max: float
    Vcr_max: float
    THD_max: float
    n_series: int = 2
    region_preference: str = "auto"  # region1 | region2 | auto
    compact_filter: bool = False  # auto preference resolves to region1 when set
    # Iteration policy
    fr1_margin: float = 1.025  # fr1 = fs_min / fr1_margin
    m_init: float = 26.0
    cr_step: float = 1.2
    lm_step: float = 0.8
    lf_step: float = 1.25
    max_iterations: int = 32
    zvs_coverage_min: float = 0.90
    filter_x: float = 15.0  # lower band bound X*fg < fc (region 2)
    filter_y: float = 3.0  # upper band bound Y*fc < fr1 (region 1)
    cr_floor: float = 0.0
    cr_override: Optional[float] = None  # replaces the computed minimum when set

    def __post_init__(self):
        if not self.Vin_min < self.Vin_max:
            raise DomainError("need Vin_min < Vin_max")
        if not self.Po_min < self.Po_max:
            raise DomainError("need Po_min < Po_max")
        if not self.fs_min < self.fs_max:
            raise DomainError("need fs_min < fs_max")
        if self.Vcr_max <= 0 or self.THD_max <= 0:
            raise DomainError("Vcr_max and THD_max must be positive")
        if self.region_preference not in ("region1", "region2", "auto"):
            raise DomainError("region_preference must be region1|region2|auto")
        if self.n_series < 1:
            raise DomainError("n_series must be at least 1")

    @property
    def vm_module(self) -> float:
        """Peak output voltage of one series module."""
        return self.grid.vm / self.n_series

    @property
    def vo_module_rms(self) -> float:
        return self.vm_module / math.sqrt(2.0)

    @property
    def ipeak_max(self) -> float:
        """Rated peak grid current: P = Vm*Ipeak/2 for a single phase."""
        return 2.0 * self.Po_max / self.grid.vm

    @property
    def ipeak_min(self) -> float:
        return 2.0 * self.Po_min / self.grid.vm


@dataclass(frozen=True)
class FilterDesign:
    """Output LC filter: the converter capacitor bank and the grid-side inductor."""

    Cf: float
    Lf: float
    fc: float
    region: str

    def __post_init__(self):
        if self.Cf <= 0 or self.Lf <= 0 or self.fc <= 0:
            raise DomainError("filter components must be positive")
        if self.region not in ("region1", "region2"):
            raise DomainError("region must be region1 or region2")
        fc_check = 1.0 / (2.0 * math.pi * math.sqrt(self.Lf * self.Cf))
        if abs(fc_check - self.fc) > 1e-3 * self.fc:
            raise DomainError("fc does not match 1/(2*pi*sqrt(Lf*Cf)) within 0.1%")

    def satisfies_region(self, fr1: float, fr2: float, x: float, y: float, fg: float) -> bool:
        if self.region == "region2":
            return x * fg < self.fc < fr2
        return fr2 < self.fc and y * self.fc <= fr1


@dataclass(frozen=True)
class TraceEntry:
    """One design-loop event: which check ran, what it saw, what it changed."""

    iteration: int
    check: str
    outcome: str
    detail: str
    Cr: float
    Lr: float
    Lm: float
    Lf: Optional[float] = None
    fc: Optional[float] = None
    value: Optional[float] = None


@dataclass
class DesignReport:
    """Result of the design loop with a replayable trace."""

    feasible: bool
    tank: Optional[ResonantTank]
    filter: Optional[FilterDesign]
    trace: list[TraceEntry] = field(default_factory=list)
    failed_check: Optional[str] = None
    annotations: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


def turns_ratio(grid: GridSpec, Vin_min: float) -> tuple[float, int]:
    """Secondary-to-primary turns ratio per module: (1+k)*Vo/(sqrt(6)*Vin_min).

    Returns the raw value and the nearest integer, bumped up by one when
    rounding down would leave the worst-case gain demand above N (buck
    operation cannot exceed the resonance gain).
    """
    if Vin_min <= 0:
        raise DomainError("Vin_min must be positive")
    n_raw = (1.0 + grid.k) * grid.Vo / (SQRT6 * Vin_min)
    n = int(math.floor(n_raw + 0.5))
    if n < n_raw:
        n += 1
    return n_raw, n


def min_resonant_capacitance(
    N: float, Im: float, fs_min: float, Vcr_max: float, Vo_module: float
) -> float:
    """Smallest resonant capacitor keeping peak stress under Vcr_max.

        Cr_min = N*Im / (4*fs_min*(Vcr_max - Vo_module/N))

    Vo_module is the per-converter peak output voltage; the margin
    Vcr_max - Vo_module/N must be positive for the expression to exist.
    """
    if Im <= 0 or fs_min <= 0:
        raise DomainError("Im and fs_min must be positive")
    margin = Vcr_max - Vo_module / N
    if margin <= 0:
        raise InfeasibleError(
            f"Vcr_max = {Vcr_max:.6g} V does not exceed the reflected output "
            f"voltage {Vo_module / N:.6g} V; no capacitor satisfies the stress bound"
        )
    return N * Im / (4.0 * fs_min * margin)


def tank_from_fr1(fr1: float, Cr: float, m_init: float) -> tuple[float, float]:
    """Select (Lr, Lm) for a given first resonance and capacitor.

    Lr = 1/((2*pi*fr1)^2 * Cr) and Lm = (m_init - 1)*Lr.
    """
    if fr1 <= 0 or Cr <= 0:
        raise DomainError("fr1 and Cr must be positive")
    if m_init <= 1:
        raise DomainError("m_init must exceed 1")
    lr = 1.0 / ((2.0 * math.pi * fr1) ** 2 * Cr)
    return lr, (m_init - 1.0) * lr


def snap_standard_down(value: float) -> float:
    """Largest E6 standard value not exceeding `value`."""
    if value <= 0:
        raise DomainError("value must be positive")
    exp = math.floor(math.log10(value))
    for _ in range(3):
        candidates = [c * 10.0**exp for c in E6 if c * 10.0**exp <= value * (1 + 1e-12)]
        if candidates:
            return max(candidates)
        exp -= 1
    raise DomainError("no standard value found")  # pragma: no cover


def filter_capacitor(Im_min: float, Vm: float, fg: float) -> tuple[float, float]:
    """Filter capacitor sized for 10% of the minimum-power grid current.

        Cf = 0.1*Im_min/(2*pi*Vm*fg)

    Returns (raw value, standard-series value); snapping rounds down so
    the capacitor's reactive current stays within the 10% budget.
    """
    if Im_min <= 0 or Vm <= 0 or fg <= 0:
        raise DomainError("all filter capacitor inputs must be positive")
    cf_raw = 0.1 * Im_min / (2.0 * math.pi * Vm * fg)
    return cf_raw, snap_standard_down(cf_raw)


def filter_inductor(fc: float, Cf: float) -> float:
    """Lf = 1/(4*pi^2*fc^2*Cf)."""
    if fc <= 0 or Cf <= 0:
        raise DomainError("fc and Cf must be positive")
    return 1.0 / (4.0 * math.pi**2 * fc**2 * Cf)


def select_filter_region(spec: DesignSpec, fr1: float, fr2: float) -> FilterDesign:
    """Choose the filter region and place fc at the geometric mean of its band.

    Region 2 (fc below fr2) is bounded below by X*fg; region 1 (fc between
    fr2 and fr1) is bounded above by fr1/Y.  The auto preference takes
    region 2 unless the spec flags a compact filter.
    """
    if not fr2 < fr1:
        raise DomainError("need fr2 < fr1")
    region = spec.region_preference
    if region == "auto":
        region = "region1" if spec.compact_filter else "region2"
    if region == "region2":
        lo, hi = spec.filter_x * spec.grid.fg, fr2
    else:
        lo, hi = fr2, fr1 / spec.filter_y
    if lo >= hi:
        raise InfeasibleError(
            f"{region} band [{lo:.6g}, {hi:.6g}] Hz is empty for fr1={fr1:.6g}, fr2={fr2:.6g}"
        )
    fc = math.sqrt(lo * hi)
    im_min = spec.ipeak_min
    _, cf = filter_capacitor(im_min, spec.grid.vm, spec.grid.fg)
    lf = filter_inductor(fc, cf)
    return FilterDesign(Cf=cf, Lf=lf, fc=fc, region=region)


def regulation_check(tank: ResonantTank, spec: DesignSpec) -> tuple[bool, float]:
    """Verify the worst-case gain demand fits inside the frequency range.

    The peak per-module demand (1+k)*Vm_module/Vin_min must stay strictly
    below the full-load gain at fs_min; the low end is always reachable
    because full phase shift takes the gain to zero.
    """
    required = (1.0 + spec.grid.k) * spec.vm_module / spec.Vin_min
    ctx = load_context(tank, spec.vo_module_rms, spec.Po_max / spec.n_series)
    available = gain_fha(tank, ctx.Q, spec.fs_min / tank.fr1)
    margin = available - required
    return margin > 0.0, margin


def _filter_band(spec: DesignSpec, region: str, fr1: float, fr2: float) -> tuple[float, float]:
    if region == "region2":
        return spec.filter_x * spec.grid.fg, fr2
    return fr2, fr1 / spec.filter_y


def run_design_loop(
    spec: DesignSpec,
    simulator: Optional[Callable] = None,
) -> DesignReport:
    """Execute the iterative design flow and return a replayable report.

    simulator(tank, filter, spec, condition) -> metrics dict with keys
    "vcr_peak", "zvs_coverage", "thd"; condition is one of "stress",
    "zvs", "thd".  When omitted, the envelope simulator is used.
    """
    if simulator is None:
        from .simulate import design_check_simulator

        simulator = design_check_simulator

    report = DesignReport(feasible=False, tank=None, filter=None)
    trace = report.trace
    budget = spec.max_iterations

    def record(check, outcome, detail, cr, lr, lm, lf=None, fc=None, value=None):
        trace.append(
            TraceEntry(
                iteration=len(trace),
                check=check,
                outcome=outcome,
                detail=detail,
                Cr=cr,
                Lr=lr,
                Lm=lm,
                Lf=lf,
                fc=fc,
                value=value,
            )
        )

    # (1) Turns ratio
    n_raw, n = turns_ratio(spec.grid, spec.Vin_min)
    # (2) Initial tank
    fr1 = spec.fs_min / spec.fr1_margin
    try:
        cr_min = min_resonant_capacitance(
            n, spec.ipeak_max, spec.fs_min, spec.Vcr_max, spec.vm_module
        )
    except InfeasibleError as exc:
        record("stress", "infeasible", str(exc), 0.0, 0.0, 0.0)
        report.failed_check = "stress"
        return report
    if spec.cr_override is not None:
        cr = spec.cr_override
        if cr < cr_min:
            report.annotations.append(
                f"Cr override {cr:.4g} F is below the computed minimum {cr_min:.4g} F; "
                "stress margin relies on the simulation check"
            )
    else:
        cr = max(cr_min, spec.cr_floor)
    m = spec.m_init
    lr, lm = tank_from_fr1(fr1, cr, m)
    record("init", "ok", f"N_raw={n_raw:.4f}, N={n}, fr1={fr1:.6g} Hz", cr, lr, lm)

    def make_tank():
        return ResonantTank(Lr=lr, Cr=cr, Lm=lm, N=n)

    # (3) Resonant capacitor stress loop
    while True:
        if len(trace) > budget:
            report.failed_check = "stress"
            record("stress", "infeasible", "iteration budget exhausted", cr, lr, lm)
            return report
        tank = make_tank()
        metrics = simulator(tank, None, spec, "stress")
        vcr = metrics["vcr_peak"]
        if vcr <= spec.Vcr_max:
            record("stress", "pass", f"peak |vCr| = {vcr:.6g} V", cr, lr, lm, value=vcr)
            break
        cr = spec.cr_step * cr
        lr, lm = tank_from_fr1(fr1, cr, m)
        record(
            "stress",
            "adjust",
            f"peak |vCr| = {vcr:.6g} V > {spec.Vcr_max:.6g} V; Cr increased",
            cr,
            lr,
            lm,
            value=vcr,
        )

    # (4) Output voltage regulation loop
    while True:
        if len(trace) > budget:
            report.failed_check = "regulation"
            record("regulation", "infeasible", "iteration budget exhausted", cr, lr, lm)
            return report
        tank = make_tank()
        ok, margin = regulation_check(tank, spec)
        if ok:
            record("regulation", "pass", f"gain margin = {margin:.4g}", cr, lr, lm, value=margin)
            break
        lm = spec.lm_step * lm
        m = 1.0 + lm / lr
        record(
            "regulation",
            "adjust",
            f"gain margin = {margin:.4g} <= 0; Lm decreased",
            cr,
            lr,
            lm,
            value=margin,
        )

    # (5) ZVS coverage at minimum power
    while True:
        if len(trace) > budget:
            report.failed_check = "zvs"
            record("zvs", "infeasible", "iteration budget exhausted", cr, lr, lm)
            return report
        tank = make_tank()
        metrics = simulator(tank, None, spec, "zvs")
        cov = metrics["zvs_coverage"]
        if cov >= spec.zvs_coverage_min:
            record("zvs", "pass", f"coverage = {cov:.4f}", cr, lr, lm, value=cov)
            break
        lm = spec.lm_step * lm
        m = 1.0 + lm / lr
        record(
            "zvs",
            "adjust",
            f"coverage = {cov:.4f} < {spec.zvs_coverage_min:.2f}; Lm decreased",
            cr,
            lr,
            lm,
            value=cov,
        )

    tank = make_tank()
    fr2 = tank.fr2
    report.annotations.append(
        f"fr2 = {fr2:.6g} Hz derived from the final tank values"
    )

    # (6) Filter sizing
    try:
        filt = select_filter_region(spec, tank.fr1, fr2)
    except InfeasibleError as exc:
        record("filter", "infeasible", str(exc), cr, lr, lm)
        report.failed_check = "filter"
        report.tank = tank
        return report
    record("filter", "ok", f"{filt.region}, fc = {filt.fc:.6g} Hz", cr, lr, lm, filt.Lf, filt.fc)

    # (7) THD loop: move Lf monotonically within the region band
    lo, hi = _filter_band(spec, filt.region, tank.fr1, fr2)
    while True:
        if len(trace) > budget:
            report.failed_check = "thd"
            record("thd", "infeasible", "iteration budget exhausted", cr, lr, lm, filt.Lf, filt.fc)
            report.tank = tank
            report.filter = filt
            return report
        metrics = simulator(tank, filt, spec, "thd")
        thd_val = metrics["thd"]
        if thd_val <= spec.THD_max:
            record("thd", "pass", f"THD = {thd_val:.4f}", cr, lr, lm, filt.Lf, filt.fc, value=thd_val)
            break
        if filt.region == "region2":
            new_lf = filt.Lf * spec.lf_step  # larger Lf pushes fc down
            new_fc = 1.0 / (2.0 * math.pi * math.sqrt(new_lf * filt.Cf))
            if new_fc < lo:
                record(
                    "thd",
                    "infeasible",
                    f"THD = {thd_val:.4f} > {spec.THD_max:.4f} with fc at its band bound",
                    cr, lr, lm, filt.Lf, filt.fc, value=thd_val,
                )
                report.failed_check = "thd"
                report.tank = tank
                report.filter = filt
                return report
        else:
            new_lf = filt.Lf / spec.lf_step  # smaller Lf pushes fc up
            new_fc = 1.0 / (2.0 * math.pi * math.sqrt(new_lf * filt.Cf))
            if new_fc > hi:
                record(
                    "thd",
                    "infeasible",
                    f"THD = {thd_val:.4f} > {spec.THD_max:.4f} with fc at its band bound",
                    cr, lr, lm, filt.Lf, filt.fc, value=thd_val,
                )
                report.failed_check = "thd"
                report.tank = tank
                report.filter = filt
                return report
        filt = FilterDesign(Cf=filt.Cf, Lf=new_lf, fc=new_fc, region=filt.region)
        record(
            "thd",
            "adjust",
            f"THD = {thd_val:.4f} > {spec.THD_max:.4f}; Lf moved to {new_lf:.6g} H",
            cr, lr, lm, filt.Lf, filt.fc, value=thd_val,
        )

    report.feasible = True
    report.tank = tank
    report.filter = filt
    report.metrics = {"fr1": tank.fr1, "fr2": fr2, "N": n, "N_raw": n_raw, "thd": thd_val}
    return report


# ---------------------------------------------------------------------------
# Reference design shipped with the package (the 1 MW / 13.8 kV example).

def reference_grid() -> GridSpec:
    return GridSpec(Vo=13.8e3, fg=60.0, k=0.05)


def reference_spec(**overrides) -> DesignSpec:
    """DesignSpec for the shipped medium-voltage PV example."""
    base = DesignSpec(
        grid=reference_grid(),
        Vin_min=600.0,
        Vin_max=850.0,
        Po_min=30e3,
        Po_max=1e6 / 3,
        fs_min=45e3,
        fs_max=70e3,
        Vcr_max=850.0,
        THD_max=0.12,
    )
    return replace(base, **overrides) if overrides else base


def reference_tank() -> ResonantTank:
    """The hand-picked tank of the reference design."""
    return ResonantTank(Lr=4e-6, Cr=3.3e-6, Lm=100e-6, N=10)


def reference_filter(name: str) -> FilterDesign:
    """Shipped filter designs: 'fc4k' (region 2, 16 mH) and 'fc13k' (region 1, 1.5 mH)."""
    if name == "fc4k":
        return FilterDesign(Cf=0.1e-6, Lf=filter_inductor(4e3, 0.1e-6), fc=4e3, region="region2")
    if name == "fc13k":
        return FilterDesign(Cf=0.1e-6, Lf=filter_inductor(13e3, 0.1e-6), fc=13e3, region="region1")
    raise DomainError(f"unknown filter preset {name!r}; use 'fc4k' or 'fc13k'")
