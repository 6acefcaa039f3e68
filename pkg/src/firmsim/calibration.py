"""Mean-field recursion for sector totals and fitting of demography parameters.

The recursion evolves a sector's expected firm count and employment:

    firms[t+1]     = firms[t] * (1 - theta) * (1 + p_spin(mean_size[t]))
    employees[t+1] = employees[t] * (1 + epsilon) * (1 - theta)

with ``mean_size = employees / firms``; closures remove mean-sized firms and
spin-offs conserve employment. Spin-offs are drawn from the survivors only,
matching the event order of the agent simulation (a firm that closes in a
year cannot also spin off). ``fit_sector`` adjusts (epsilon, theta, spin
rate) by alternating one-dimensional root solves until both end-of-horizon
totals match the target.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from importlib import resources

from scipy.optimize import brentq

from .demography import spinoff_probability
from .world import SectorParams, check_sector


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationTarget:
    sector: int
    firms_t0: int
    employees_t0: int
    firms_T: int
    employees_T: int
    horizon_years: int = 54

    def __post_init__(self):
        check_sector(self.sector)
        if self.horizon_years < 1:
            raise CalibrationError("horizon must be at least one year")
        if min(self.firms_t0, self.employees_t0, self.firms_T, self.employees_T) < 0:
            raise CalibrationError(f"sector {self.sector}: negative target")


@dataclass(frozen=True)
class SearchSpec:
    epsilon_bounds: tuple[float, float] = (-0.1, 0.1)
    theta_bounds: tuple[float, float] = (0.0, 0.05)
    spin_bounds: tuple[float, float] = (0.0, 0.15)
    theta_init: float = 0.005
    spin_alpha: float = 0.0  # 0 makes the spin-off rate independent of size
    s_crit: float | None = None  # default: initial mean firm size
    spin_sigma: float = 1.0  # spin-off size spread; its mean is set to the initial mean firm size
    orientation: int = 1
    tolerance: float = 1e-3
    max_iter: int = 50


@dataclass
class CalibrationResult:
    sector: int
    params: SectorParams
    spin_rate: float
    xi: float
    psi: float
    rel_xi: float
    rel_psi: float
    iterations: int
    converged: bool
    message: str = ""


def expected_totals(params: SectorParams, firms_t0: float, employees_t0: float, horizon: int,
                    orientation: int = 1, path: list | None = None) -> tuple[float, float]:
    """Run the mean-field recursion for ``horizon`` years.

    If ``path`` is a list, every intermediate ``(firms, employees)`` pair is
    appended to it (including the starting point).
    """
    if horizon < 0:
        raise CalibrationError("horizon must be non-negative")
    f, e = float(firms_t0), float(employees_t0)
    if path is not None:
        path.append((f, e))
    grow = (1.0 + params.epsilon) * (1.0 - params.theta)
    for _ in range(horizon):
        p = spinoff_probability(e / f, params, orientation) if f > 0 else 0.0
        f = f * (1.0 - params.theta) * (1.0 + p)
        e = e * grow
        if f < 0 or e < 0:
            raise CalibrationError(f"negative totals (firms={f}, employees={e})")
        if path is not None:
            path.append((f, e))
    return f, e


def objective(params: SectorParams, target: CalibrationTarget, orientation: int = 1) -> tuple[float, float]:
    f, e = expected_totals(params, target.firms_t0, target.employees_t0, target.horizon_years, orientation)
    return abs(e - target.employees_T), abs(f - target.firms_T)


def spin_beta_for_rate(rate: float, alpha: float, mean_size: float, s_crit: float, orientation: int = 1) -> float:
    """beta giving spin-off probability ``rate`` at ``mean_size``."""
    if rate <= 0.0:
        return -orientation * math.inf
    if rate >= 1.0:
        return orientation * math.inf
    logit = math.log(rate / (1.0 - rate))
    return alpha * mean_size + orientation * s_crit * logit


def _solve(fn, lo, hi):
    """Root of increasing-or-decreasing ``fn`` on [lo, hi]; the better bound if none."""
    flo, fhi = fn(lo), fn(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo < 0) != (fhi < 0):
        return brentq(fn, lo, hi, xtol=1e-15, rtol=1e-14, maxiter=500)
    return lo if abs(flo) <= abs(fhi) else hi


def fit_sector(target: CalibrationTarget, spec: SearchSpec = SearchSpec(), base: SectorParams | None = None) -> CalibrationResult:
    """Fit epsilon, theta and the spin-off rate to one sector's target.

    The spin-off rate is the probability at the initial mean size; with
    ``spec.spin_alpha == 0`` it is the same at every size. Each round solves
    the firm count for the spin-off rate (falling back to theta when no
    admissible spin rate reaches the target), then employment for epsilon.
    Deterministic; no random numbers are used.
    """
    base = base or SectorParams()
    t = target
    if t.firms_t0 <= 0 or t.employees_t0 <= 0:
        raise CalibrationError(f"sector {t.sector}: initial firms and employees must be positive")
    m0 = t.employees_t0 / t.firms_t0
    s_crit = spec.s_crit if spec.s_crit is not None else max(m0, 1e-9)
    o = spec.orientation
    theta = min(max(spec.theta_init, spec.theta_bounds[0]), spec.theta_bounds[1])
    eps, rate = 0.0, spec.spin_bounds[0]
    spin_mu = math.log(m0) - 0.5 * spec.spin_sigma**2

    def make(eps, theta, rate):
        beta = spin_beta_for_rate(rate, spec.spin_alpha, m0, s_crit, o)
        return replace(base, epsilon=eps, theta=theta, spin_alpha=spec.spin_alpha, spin_beta=beta, s_crit=s_crit,
                       spin_mu=spin_mu, spin_sigma=spec.spin_sigma)

    def firms_gap(eps, theta, rate):
        return expected_totals(make(eps, theta, rate), t.firms_t0, t.employees_t0, t.horizon_years, o)[0] - t.firms_T

    def empl_gap(eps, theta, rate):
        return expected_totals(make(eps, theta, rate), t.firms_t0, t.employees_t0, t.horizon_years, o)[1] - t.employees_T

    it = 0
    converged = False
    rel_xi = rel_psi = math.inf
    xi = psi = math.inf
    prev = None
    for it in range(1, spec.max_iter + 1):
        rate = _solve(lambda r: firms_gap(eps, theta, r), *spec.spin_bounds)
        if abs(firms_gap(eps, theta, rate)) > 0 and rate in spec.spin_bounds:
            theta = _solve(lambda th: firms_gap(eps, th, rate), *spec.theta_bounds)
        eps = _solve(lambda e: empl_gap(e, theta, rate), *spec.epsilon_bounds)
        xi, psi = objective(make(eps, theta, rate), t, o)
        rel_xi = xi / max(t.employees_T, 1)
        rel_psi = psi / max(t.firms_T, 1)
        if rel_xi <= spec.tolerance and rel_psi <= spec.tolerance:
            converged = True
            break
        if prev == (eps, theta, rate):
            break
        prev = (eps, theta, rate)
    msg = "" if converged else "target not reachable within parameter bounds"
    return CalibrationResult(t.sector, make(eps, theta, rate), rate, xi, psi, rel_xi, rel_psi, it, converged, msg)


TARGET_FIELDS = ("sector", "firms_t0", "employees_t0", "firms_T", "employees_T")
RESULT_FIELDS = ("sector", "epsilon", "theta", "spin_rate", "spin_alpha", "spin_beta", "s_crit",
                 "xi", "psi", "rel_xi", "rel_psi", "iterations", "converged", "message")


def read_targets(text_or_stream, horizon: int = 54) -> list[CalibrationTarget]:
    fh = io.StringIO(text_or_stream) if isinstance(text_or_stream, str) else text_or_stream
    reader = csv.DictReader(fh)
    out = []
    if reader.fieldnames is None:
        return out
    missing = set(TARGET_FIELDS) - set(reader.fieldnames)
    if missing:
        raise CalibrationError(f"targets file lacks columns {sorted(missing)}")
    for lineno, row in enumerate(reader, start=2):
        try:
            out.append(CalibrationTarget(*(int(row[k]) for k in TARGET_FIELDS), horizon_years=horizon))
        except (TypeError, ValueError) as exc:
            raise CalibrationError(f"line {lineno}: {exc}") from None
    return out


def bundled_targets(horizon: int = 54) -> list[CalibrationTarget]:
    """Sector totals for 1950 and 2004 as bundled with the package."""
    text = resources.files("firmsim").joinpath("data/targets_1950_2004.csv").read_text()
    return read_targets(text, horizon)


def write_results(results: list[CalibrationResult], stream) -> None:
    w = csv.writer(stream)
    w.writerow(RESULT_FIELDS)
    for r in results:
        p = r.params
        w.writerow([r.sector, repr(p.epsilon), repr(p.theta), repr(r.spin_rate), repr(p.spin_alpha),
                    repr(p.spin_beta), repr(p.s_crit), repr(r.xi), repr(r.psi), repr(r.rel_xi),
                    repr(r.rel_psi), r.iterations, str(r.converged).lower(), r.message])
