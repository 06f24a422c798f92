"""Time integration of the first and second mVN flows for a real periodic potential

For real p the full right-hand side is plus-part + minus-part = 2 Re(plus-part),
with the nonlocal fields

    dbar w  = d(p^2)
    dbar zt = d(p^2 w - (d p)^2)

solved spectrally in the zero-mean gauge.  The conserved quantity monitored is
S = 2 * integral(p^2 dx dy).
"""

import csv
import dataclasses
import datetime
import inspect
import logging
import math
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)

if THIS_DIR not in sys.path:
    sys.path.append(THIS_DIR)

import numpy as np

import mvn_const
import mvn_utils
import pip_import
import spectral_field

from spectral_field import ComplexField, Grid, RealField

pip_import.pip_import("tqdm")

from tqdm import tqdm

logger = logging.getLogger(__name__)

###############################################################################
# Exceptions
###############################################################################


class ConfigError(ValueError):
    pass


class FlowBlowUpError(RuntimeError):
    def __init__(self, message: str, diagnostics: Optional["Diagnostics"] = None):
        super().__init__(message)
        self.diagnostics = diagnostics


###############################################################################
# Dataclasses
###############################################################################


@dataclasses.dataclass(frozen=True)
class FlowState:
    p: RealField
    t: float = 0.0
    n_flow: int = 1
    # max |Im p| thrown away when the last step was projected back to real values
    imag_discarded: float = 0.0


class Diagnostics(NamedTuple):
    step: int
    t: float
    S: float
    max_abs_p: float
    s_drift_rel: float
    flux_residual: Optional[float] = None

    def as_row(self) -> List[str]:
        flux = "" if self.flux_residual is None else repr(float(self.flux_residual))
        return [str(self.step), repr(float(self.t)), repr(float(self.S)), repr(float(self.max_abs_p)),
                repr(float(self.s_drift_rel)), flux]


def _check_keys(section: str, data: Dict[str, Any], cls):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}; expected some of {sorted(known)}")


@dataclasses.dataclass
class GridConfig:
    n: int = mvn_const.DEFAULT_GRID_N
    length: float = mvn_const.DEFAULT_LENGTH

    def validate(self):
        try:
            spectral_field.make_grid(self.n, self.length)
        except spectral_field.GridError as err:
            raise ConfigError(f"[grid] {err}") from err

    def make_grid(self) -> Grid:
        return spectral_field.make_grid(self.n, self.length)


@dataclasses.dataclass
class FlowConfig:
    n_flow: int = 1
    dt: Optional[float] = None
    steps: int = mvn_const.DEFAULT_STEPS
    scheme: str = mvn_const.DEFAULT_SCHEME
    dealias: bool = True
    blowup_cap: float = mvn_const.DEFAULT_BLOWUP_CAP
    # sample flux_residual_numeric every this many steps; 0 disables
    flux_every: int = 0

    def validate(self):
        if self.n_flow not in mvn_const.FLOW_ORDERS:
            raise ConfigError(f"[flow] n_flow must be one of {mvn_const.FLOW_ORDERS} - got: {self.n_flow!r}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError(f"[flow] dt must be positive - got: {self.dt!r}")
        if not isinstance(self.steps, int) or self.steps < 0:
            raise ConfigError(f"[flow] steps must be a non-negative integer - got: {self.steps!r}")
        if self.scheme not in mvn_const.SCHEMES:
            raise ConfigError(f"[flow] scheme must be one of {mvn_const.SCHEMES} - got: {self.scheme!r}")
        if not self.blowup_cap > 0:
            raise ConfigError(f"[flow] blowup_cap must be positive - got: {self.blowup_cap!r}")
        if not isinstance(self.flux_every, int) or self.flux_every < 0:
            raise ConfigError(f"[flow] flux_every must be a non-negative integer - got: {self.flux_every!r}")

    def resolve_dt(self, grid: Grid) -> float:
        if self.dt is not None:
            return float(self.dt)
        return default_dt(grid, self.n_flow)


@dataclasses.dataclass
class ICConfig:
    kind: str = mvn_const.DEFAULT_IC_KIND
    amplitude: float = mvn_const.DEFAULT_AMPLITUDE
    seed: int = mvn_const.DEFAULT_SEED
    mode: Tuple[int, int] = (1, 0)
    kmax: int = mvn_const.DEFAULT_IC_KMAX
    width: float = 0.5

    def validate(self):
        if self.kind not in mvn_const.IC_KINDS:
            raise ConfigError(f"[ic] kind must be one of {mvn_const.IC_KINDS} - got: {self.kind!r}")
        if not math.isfinite(self.amplitude):
            raise ConfigError(f"[ic] amplitude must be finite - got: {self.amplitude!r}")
        if len(tuple(self.mode)) != 2:
            raise ConfigError(f"[ic] mode must be a pair of integers - got: {self.mode!r}")
        if self.kmax < 1:
            raise ConfigError(f"[ic] kmax must be at least 1 - got: {self.kmax!r}")
        if not self.width > 0:
            raise ConfigError(f"[ic] width must be positive - got: {self.width!r}")


@dataclasses.dataclass
class OutputConfig:
    dir: str = os.path.join(mvn_const.DEFAULT_OUTPUT_DIR, "evolve")
    snapshot_every: int = mvn_const.DEFAULT_SNAPSHOT_EVERY

    def validate(self):
        if not isinstance(self.snapshot_every, int) or self.snapshot_every < 1:
            raise ConfigError(f"[output] snapshot_every must be a positive integer - got: {self.snapshot_every!r}")


@dataclasses.dataclass
class EvolveConfig:
    grid: GridConfig = dataclasses.field(default_factory=GridConfig)
    flow: FlowConfig = dataclasses.field(default_factory=FlowConfig)
    ic: ICConfig = dataclasses.field(default_factory=ICConfig)
    output: OutputConfig = dataclasses.field(default_factory=OutputConfig)

    SECTIONS = {"grid": GridConfig, "flow": FlowConfig, "ic": ICConfig, "output": OutputConfig}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvolveConfig":
        unknown = set(data) - set(cls.SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}; expected some of {sorted(cls.SECTIONS)}")
        kwargs = {}
        for section, section_cls in cls.SECTIONS.items():
            values = dict(data.get(section, {}))
            _check_keys(section, values, section_cls)
            if "mode" in values:
                values["mode"] = tuple(values["mode"])
            kwargs[section] = section_cls(**values)
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str) -> "EvolveConfig":
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from err
        return cls.from_dict(data)

    def validate(self):
        for section in self.SECTIONS:
            getattr(self, section).validate()

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def with_overrides(self, **overrides) -> "EvolveConfig":
        """Apply `section.key` style overrides (e.g. flow_steps=0); None values are ignored"""
        data = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            section, _, name = key.partition("_")
            if section not in self.SECTIONS or name not in data[section]:
                raise ConfigError(f"unknown override {key!r}")
            data[section][name] = value
        return EvolveConfig.from_dict(data)


class EvolveResult(NamedTuple):
    state: FlowState
    diagnostics: List[Diagnostics]
    snapshots: List[str]
    elapsed: datetime.timedelta


###############################################################################
# Nonlocal fields
###############################################################################


def _mul(dealias: bool, *factors) -> ComplexField:
    """Product of fields, truncated after every binary product when dealiasing"""
    result = factors[0]
    for factor in factors[1:]:
        result = spectral_field.product(result, factor, dealias=dealias)
    return result


def _d(f, order: int = 1) -> ComplexField:
    return spectral_field.wirtinger(f, "dz", order)


def compute_omega(p: RealField, dealias: bool = False) -> ComplexField:
    """w with dbar w = d(p^2), zero-mean gauge"""
    return spectral_field.dbar_inverse(_d(_mul(dealias, p, p)))


def compute_zeta(p: RealField, omega: ComplexField, dealias: bool = False) -> ComplexField:
    """zt with dbar zt = d(p^2 w - (d p)^2), zero-mean gauge"""
    dp = _d(p)
    inner = _mul(dealias, p, p, omega) - _mul(dealias, dp, dp)
    return spectral_field.dbar_inverse(_d(inner))


###############################################################################
# Right-hand sides
###############################################################################


def _plus_part(p: RealField, n: int, dealias: bool, include_head: bool) -> ComplexField:
    if n not in mvn_const.FLOW_ORDERS:
        raise ValueError(f"flow n must be one of {mvn_const.FLOW_ORDERS} - got: {n!r}")
    omega = compute_omega(p, dealias)
    dp = _d(p)
    domega = _d(omega)
    if n == 1:
        result = 3.0 * _mul(dealias, omega, dp) + 1.5 * _mul(dealias, p, domega)
    else:
        zeta = compute_zeta(p, omega, dealias)
        d2p = _d(p, 2)
        d3p = _d(p, 3)
        d2omega = _d(omega, 2)
        omega2 = _mul(dealias, omega, omega)
        result = (
            5.0 * _mul(dealias, omega, d3p)
            + 7.5 * _mul(dealias, domega, d2p)
            + 2.5 * _mul(dealias, dp, 2.0 * omega2 + 3.0 * d2omega + 2.0 * zeta)
            + 2.5 * _mul(dealias, p, _d(omega2 + zeta + d2omega))
        )
    if include_head:
        result = result + _d(p, 2 * n + 1)
    return result


def flow_rhs_plus(p: RealField, n: int, dealias: bool = False) -> ComplexField:
    """The (+) part dp/dt_n+"""
    return _plus_part(p, n, dealias, include_head=True)


def flow_rhs(p: RealField, n: int, dealias: bool = True) -> RealField:
    """dp/dt_n = 2 Re(plus-part) for real p"""
    return flow_rhs_plus(p, n, dealias).real * 2.0


def nonlinear_rhs(p: RealField, n: int, dealias: bool = True) -> RealField:
    """flow_rhs without the dispersive head d^(2n+1) p + dbar^(2n+1) p"""
    return _plus_part(p, n, dealias, include_head=False).real * 2.0


def linear_symbol(grid: Grid, n: int) -> np.ndarray:
    """sigma_d^(2n+1) + sigma_dbar^(2n+1), purely imaginary"""
    m = 2 * n + 1
    return spectral_field.symbol(grid, "dz") ** m + spectral_field.symbol(grid, "dzbar") ** m


def default_dt(grid: Grid, n: int) -> float:
    k_cut = 2.0 * np.pi / grid.length * grid.n / 3.0
    return mvn_const.DT_SAFETY / (k_cut / 2.0) ** (2 * n + 1)


###############################################################################
# Conserved quantities and flux identities
###############################################################################


def willmore(p: RealField) -> float:
    """S = 2 * integral(p^2 dx dy)"""
    return 2.0 * spectral_field.integrate(spectral_field.product(p, p)).real


def flux_bracket_numeric(p: RealField, n: int) -> ComplexField:
    """The bracket F with 2 p dp/dt+ = d(F), evaluated with exact products"""
    omega = compute_omega(p)
    dp = _d(p)
    p2 = p * p
    if n == 1:
        return _d(p2, 2) - 3.0 * dp * dp + 3.0 * p2 * omega
    if n != 2:
        raise ValueError(f"flow n must be one of {mvn_const.FLOW_ORDERS} - got: {n!r}")
    zeta = compute_zeta(p, omega)
    d2p = _d(p, 2)
    return (
        _d(p2, 4)
        - 5.0 * _d(dp * dp, 2)
        + 5.0 * d2p * d2p
        + 5.0 * omega * _d(p2, 2)
        - 15.0 * omega * dp * dp
        + 2.5 * _d(omega) * _d(p2)
        + 5.0 * p2 * (omega * omega + zeta + _d(omega, 2))
    )


def flux_residual_numeric(p: RealField, n: int) -> float:
    """max|2 p rhs+ - d(F)| / max|2 p rhs+|, dealiasing off"""
    lhs = 2.0 * p * flow_rhs_plus(p, n, dealias=False)
    rhs = _d(flux_bracket_numeric(p, n))
    return mvn_utils.rel_max_norm(lhs.samples - rhs.samples, lhs.samples)


###############################################################################
# Initial conditions
###############################################################################


def initial_condition(grid: Grid, ic: ICConfig) -> RealField:
    x, y = grid.coords()
    k0 = 2.0 * np.pi / grid.length
    if ic.kind == "cosine":
        mx, my = ic.mode
        return RealField(grid, ic.amplitude * np.cos(k0 * (mx * x + my * y)))
    m = grid.integer_modes()
    mx, my = np.meshgrid(m, m, indexing="ij")
    radius = np.sqrt(mx**2 + my**2)
    band = (radius <= ic.kmax) & (radius > 0)
    if ic.kind == "random":
        rng = np.random.default_rng(ic.seed)
        coeffs = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * band
    elif ic.kind == "bump":
        center = grid.length / 2.0
        width = ic.width * grid.length / (2.0 * np.pi)
        coeffs = np.exp(-0.5 * (k0 * radius * width) ** 2) * np.exp(-1j * k0 * (mx + my) * center)
        coeffs = coeffs * (radius <= ic.kmax)
    else:
        raise ConfigError(f"unknown initial condition kind {ic.kind!r}")
    samples = spectral_field.ifft2(coeffs).real
    peak = np.max(np.abs(samples))
    if peak == 0.0:
        return RealField(grid, samples)
    return RealField(grid, samples * (ic.amplitude / peak))


###############################################################################
# Time stepping
###############################################################################


def _check_finite(p_samples: np.ndarray, blowup_cap: float, t: float):
    if not np.all(np.isfinite(p_samples)):
        raise FlowBlowUpError(f"non-finite values in p at t={t:.6g}")
    peak = float(np.max(np.abs(p_samples)))
    if peak > blowup_cap:
        raise FlowBlowUpError(f"max|p| = {peak:.3e} exceeds blow-up cap {blowup_cap:.1e} at t={t:.6g}")


def step(
    state: FlowState,
    dt: float,
    scheme: str = mvn_const.DEFAULT_SCHEME,
    dealias: bool = True,
    blowup_cap: float = mvn_const.DEFAULT_BLOWUP_CAP,
) -> FlowState:
    """Advance one step with integrating-factor RK4 (exact dispersive head) or plain RK4"""
    if not dt > 0:
        raise ValueError(f"dt must be positive - got: {dt!r}")
    p = state.p
    grid = p.grid
    n = state.n_flow
    u_hat = spectral_field.fft2(p.samples)

    def real_field(modes: np.ndarray) -> RealField:
        samples = spectral_field.ifft2(modes).real
        _check_finite(samples, blowup_cap, state.t)
        return RealField(grid, samples)

    if scheme == "ifrk4":
        linear = linear_symbol(grid, n)
        half = np.exp(linear * (dt / 2.0))
        full = half * half

        def N(modes: np.ndarray) -> np.ndarray:
            return spectral_field.fft2(nonlinear_rhs(real_field(modes), n, dealias).samples)

        k1 = N(u_hat)
        k2 = N(half * (u_hat + (dt / 2.0) * k1))
        k3 = N(half * u_hat + (dt / 2.0) * k2)
        k4 = N(full * u_hat + dt * half * k3)
        new_hat = full * u_hat + (dt / 6.0) * (full * k1 + 2.0 * half * (k2 + k3) + k4)
    elif scheme == "rk4":

        def F(modes: np.ndarray) -> np.ndarray:
            return spectral_field.fft2(flow_rhs(real_field(modes), n, dealias).samples)

        k1 = F(u_hat)
        k2 = F(u_hat + (dt / 2.0) * k1)
        k3 = F(u_hat + (dt / 2.0) * k2)
        k4 = F(u_hat + dt * k3)
        new_hat = u_hat + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError(f"scheme must be one of {mvn_const.SCHEMES} - got: {scheme!r}")

    samples = spectral_field.ifft2(new_hat)
    t_new = state.t + dt
    _check_finite(samples.real, blowup_cap, t_new)
    discarded = float(np.max(np.abs(samples.imag)))
    peak = float(np.max(np.abs(samples.real)))
    if discarded > mvn_const.REALITY_TOL * max(peak, np.finfo(float).tiny):
        logger.warning("discarded imaginary part %.3e exceeds %.0e x max|p| at t=%.6g", discarded,
                       mvn_const.REALITY_TOL, t_new)
    else:
        logger.debug("t=%.6g discarded imaginary part %.3e", t_new, discarded)
    return FlowState(p=RealField(grid, samples.real), t=t_new, n_flow=n, imag_discarded=discarded)


def integrate_to(state: FlowState, t_final: float, dt: float, **step_kwargs) -> FlowState:
    """Take round((t_final - t) / dt) equal steps"""
    num_steps = int(round((t_final - state.t) / dt))
    for _ in range(num_steps):
        state = step(state, dt, **step_kwargs)
    return state


###############################################################################
# Driver
###############################################################################


def diagnose(state: FlowState, step_index: int, s0: float, flux: bool = False) -> Diagnostics:
    S = willmore(state.p)
    drift = abs(S - s0) / s0 if s0 > 0 else abs(S - s0)
    flux_residual = flux_residual_numeric(state.p, state.n_flow) if flux else None
    return Diagnostics(
        step=step_index,
        t=state.t,
        S=S,
        max_abs_p=state.p.max_abs(),
        s_drift_rel=drift,
        flux_residual=flux_residual,
    )


def snapshot_path(out_dir: str, step_index: int) -> str:
    return os.path.join(out_dir, f"p_{step_index:06d}.txt")


def evolve(
    config: EvolveConfig,
    progress_bar: bool = False,
    on_diagnostics: Optional[Callable[[Diagnostics], None]] = None,
) -> EvolveResult:
    """Run the configured flow, writing snapshots, diagnostics.csv and the resolved config"""
    config.validate()
    start = datetime.datetime.now()
    grid = config.grid.make_grid()
    flow = config.flow
    dt = flow.resolve_dt(grid)
    out_dir = mvn_utils.ensure_dir(config.output.dir)

    resolved = config.to_dict()
    resolved["flow"]["dt"] = dt
    mvn_utils.write_json_record(os.path.join(out_dir, mvn_const.RESOLVED_CONFIG_FILENAME), resolved)
    logger.info("evolving flow %d on n=%d for %d steps of dt=%.3e (%s)", flow.n_flow, grid.n, flow.steps, dt,
                flow.scheme)

    state = FlowState(p=initial_condition(grid, config.ic), t=0.0, n_flow=flow.n_flow)
    s0 = willmore(state.p)
    diagnostics: List[Diagnostics] = []
    snapshots: List[str] = []

    def record(step_index: int, final: bool = False):
        want_flux = bool(flow.flux_every) and (step_index % flow.flux_every == 0 or final)
        row = diagnose(state, step_index, s0, flux=want_flux)
        diagnostics.append(row)
        writer.writerow(row.as_row())
        if on_diagnostics is not None:
            on_diagnostics(row)
        if step_index % config.output.snapshot_every == 0 or final:
            path = snapshot_path(out_dir, step_index)
            spectral_field.write_field(path, state.p, t=repr(state.t), n_flow=flow.n_flow)
            snapshots.append(path)
        return row

    csv_path = os.path.join(out_dir, mvn_const.DIAGNOSTICS_FILENAME)
    with open(csv_path, "w", newline="", encoding="utf8") as csv_file:
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(mvn_const.DIAGNOSTICS_COLUMNS)
        record(0, final=flow.steps == 0)

        steps = range(1, flow.steps + 1)
        if progress_bar:
            steps = tqdm(steps, desc=f"flow {flow.n_flow}", unit="step")
        try:
            for step_index in steps:
                try:
                    state = step(state, dt, scheme=flow.scheme, dealias=flow.dealias, blowup_cap=flow.blowup_cap)
                except FlowBlowUpError as err:
                    err.diagnostics = diagnostics[-1] if diagnostics else None
                    logger.error("blow-up after step %d: %s", step_index - 1, err)
                    raise
                row = record(step_index, final=step_index == flow.steps)
                if progress_bar:
                    steps.set_postfix({"S_drift": f"{row.s_drift_rel:.2e}"})
        finally:
            if progress_bar:
                steps.close()

    elapsed = datetime.datetime.now() - start
    summary = {
        "steps": flow.steps,
        "dt": dt,
        "t_final": state.t,
        "S_initial": s0,
        "S_final": diagnostics[-1].S,
        "s_drift_rel": diagnostics[-1].s_drift_rel,
        "max_s_drift_rel": max(d.s_drift_rel for d in diagnostics),
        "elapsed_seconds": elapsed.total_seconds(),
        "snapshots": len(snapshots),
    }
    mvn_utils.write_json_record(os.path.join(out_dir, mvn_const.SUMMARY_FILENAME), summary)
    logger.info("finished in %s, final S drift %.3e", mvn_utils.format_elapsed(elapsed), summary["s_drift_rel"])
    return EvolveResult(state=state, diagnostics=diagnostics, snapshots=snapshots, elapsed=elapsed)
