"""Generalized Weierstrass inducing of surfaces in R^3 from spinor pairs

Given a conformal immersion X(z, zbar), the spinors are

    psi1 = sqrt(dbar(X2 + i X1)),   psi2 = sqrt(-d(X2 + i X1)),   psi2 conj(psi1) = -d X3

and they satisfy d psi1 = p psi2, dbar psi2 = -p psi1 with p = lambda H / 2.
Conversely the closed forms

    Omega+ = conj(psi1)^2 dz - conj(psi2)^2 dzbar      (X2 - i X1 = integral)
    Omega3 = -(psi2 conj(psi1) dz + psi1 conj(psi2) dzbar)   (X3 = integral)

rebuild X up to translation.  Periodic charts differentiate spectrally, open
charts use fourth-order finite differences (one-sided of the same order at
the edges).  e3 = e1 x e2 fixes the sign of H and phi.
"""

import dataclasses
import inspect
import logging
import math
import os
import sys

from typing import Dict, List, NamedTuple, Optional, Tuple, Union

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)

if THIS_DIR not in sys.path:
    sys.path.append(THIS_DIR)

import numpy as np
import scipy.integrate

import mvn_const
import mvn_flow
import mvn_utils
import spectral_field

from spectral_field import NO_TWIST, RealField, Twist

logger = logging.getLogger(__name__)

###############################################################################
# Constants
###############################################################################

IMMERSION_FILES = ("X1.txt", "X2.txt", "X3.txt")
SPINOR_FILES = ("psi1.txt", "psi2.txt")

# samples excluded along each edge of an open chart when judging pointwise tolerances
OPEN_MARGIN = 2

# one-sided fourth-order stencils (offsets 0..4 and -1..3 for d/dx, 0..5 and -1..4 for d2/dx2)
D1_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
D1_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0
D2_EDGE0 = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0
D2_EDGE1 = np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / 12.0
MIN_FD_SAMPLES = 6

###############################################################################
# Exceptions
###############################################################################


class NonConformalError(ValueError):
    pass


class BranchDiscontinuityError(ValueError):
    pass


class FormsNotClosedError(ValueError):
    pass


class DegenerateMetricError(ValueError):
    pass


###############################################################################
# Finite differences
###############################################################################


def fd_derivative(values: np.ndarray, axis: int, h: float, order: int = 1) -> np.ndarray:
    """Fourth-order finite difference along one axis of a non-periodic sample array"""
    f = np.moveaxis(np.asarray(values), axis, 0)
    n = f.shape[0]
    if n < MIN_FD_SAMPLES:
        raise ValueError(f"finite differences need at least {MIN_FD_SAMPLES} samples per axis - got: {n}")
    out = np.empty_like(f, dtype=np.result_type(f, float))
    if order == 1:
        out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / 12.0
        out[0] = np.tensordot(D1_EDGE0, f[0:5], axes=1)
        out[1] = np.tensordot(D1_EDGE1, f[0:5], axes=1)
        out[-1] = -np.tensordot(D1_EDGE0, f[::-1][0:5], axes=1)
        out[-2] = -np.tensordot(D1_EDGE1, f[::-1][0:5], axes=1)
        out /= h
    elif order == 2:
        out[2:-2] = (-f[:-4] + 16.0 * f[1:-3] - 30.0 * f[2:-2] + 16.0 * f[3:-1] - f[4:]) / 12.0
        out[0] = np.tensordot(D2_EDGE0, f[0:6], axes=1)
        out[1] = np.tensordot(D2_EDGE1, f[0:6], axes=1)
        out[-1] = np.tensordot(D2_EDGE0, f[::-1][0:6], axes=1)
        out[-2] = np.tensordot(D2_EDGE1, f[::-1][0:6], axes=1)
        out /= h * h
    else:
        raise ValueError(f"order must be 1 or 2 - got: {order}")
    return np.moveaxis(out, 0, axis)


###############################################################################
# Dataclasses
###############################################################################


@dataclasses.dataclass(frozen=True)
class Chart:
    kind: str
    n: int
    extent: Tuple[float, float, float, float]

    def __post_init__(self):
        if self.kind not in mvn_const.CHART_KINDS:
            raise ValueError(f"chart kind must be one of {mvn_const.CHART_KINDS} - got: {self.kind!r}")
        x0, x1, y0, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"chart extent must be increasing - got: {self.extent}")
        if self.kind == "periodic":
            if not math.isclose(x1 - x0, y1 - y0):
                raise ValueError("periodic charts must be square")
            # validates n
            spectral_field.make_grid(self.n, x1 - x0)
        elif self.n < 2:
            raise ValueError(f"open charts need at least 2 samples per axis - got: {self.n}")
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))

    @classmethod
    def open(cls, n: int, extent=(-1.0, 1.0, -1.0, 1.0)) -> "Chart":
        return cls("open", int(n), tuple(extent))

    @classmethod
    def periodic(cls, n: int, length: float = mvn_const.DEFAULT_LENGTH, origin=(0.0, 0.0)) -> "Chart":
        return cls("periodic", int(n), (origin[0], origin[0] + length, origin[1], origin[1] + length))

    @property
    def is_periodic(self) -> bool:
        return self.kind == "periodic"

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    @property
    def grid(self) -> spectral_field.Grid:
        if not self.is_periodic:
            raise ValueError("open charts have no periodic grid")
        return spectral_field.make_grid(self.n, self.extent[1] - self.extent[0])

    @property
    def spacing(self) -> Tuple[float, float]:
        x0, x1, y0, y1 = self.extent
        cells = self.n if self.is_periodic else self.n - 1
        return ((x1 - x0) / cells, (y1 - y0) / cells)

    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        x0, _, y0, _ = self.extent
        hx, hy = self.spacing
        return x0 + np.arange(self.n) * hx, y0 + np.arange(self.n) * hy

    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        ax, ay = self.axes()
        return np.meshgrid(ax, ay, indexing="ij")

    def z(self) -> np.ndarray:
        x, y = self.coords()
        return x + 1j * y

    def interior(self, margin: int = OPEN_MARGIN) -> Tuple[slice, slice]:
        if self.is_periodic or self.n <= 2 * margin:
            return (slice(None), slice(None))
        return (slice(margin, -margin), slice(margin, -margin))

    def header(self) -> Dict[str, str]:
        return {
            "n": str(self.n),
            "length": repr(self.extent[1] - self.extent[0]),
            "chart": self.kind,
            "extent": ",".join(repr(v) for v in self.extent),
        }

    @classmethod
    def from_header(cls, header: Dict[str, str]) -> "Chart":
        n = int(header["n"])
        length = float(header["length"])
        kind = header.get("chart", "periodic")
        if "extent" in header:
            extent = tuple(float(v) for v in header["extent"].split(","))
            if len(extent) != 4:
                raise spectral_field.FieldFormatError(f"extent needs 4 values - got: {header['extent']!r}")
        else:
            extent = (0.0, length, 0.0, length)
        return cls(kind, n, extent)

    # derivatives -------------------------------------------------------------

    def derivative(self, values: np.ndarray, axis: int, order: int = 1, twist: Twist = NO_TWIST) -> np.ndarray:
        values = np.asarray(values)
        if self.is_periodic:
            field = spectral_field.ComplexField(self.grid, values)
            result = spectral_field.partial(field, axis, order, twist).samples
            return result if np.iscomplexobj(values) else result.real
        return fd_derivative(values, axis, self.spacing[axis], order)

    def dx(self, values, twist: Twist = NO_TWIST):
        return self.derivative(values, 0, 1, twist)

    def dy(self, values, twist: Twist = NO_TWIST):
        return self.derivative(values, 1, 1, twist)

    def d(self, values, twist: Twist = NO_TWIST) -> np.ndarray:
        return 0.5 * (self.dx(values, twist) - 1j * self.dy(values, twist))

    def dbar(self, values, twist: Twist = NO_TWIST) -> np.ndarray:
        return 0.5 * (self.dx(values, twist) + 1j * self.dy(values, twist))

    def integrate(self, values: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
        """Integral against dx dy; trapezoid weights on open charts, spectral mean on periodic ones"""
        values = np.asarray(values)
        if mask is not None:
            values = values * mask
        if self.is_periodic:
            return spectral_field.integrate(spectral_field.field_like(self.grid, values)).real
        ax, ay = self.axes()
        return float(np.real(scipy.integrate.trapezoid(scipy.integrate.trapezoid(values, ay, axis=1), ax)))


@dataclasses.dataclass(frozen=True, eq=False)
class Immersion:
    chart: Chart
    X1: np.ndarray
    X2: np.ndarray
    X3: np.ndarray

    def __post_init__(self):
        for name in ("X1", "X2", "X3"):
            values = np.array(getattr(self, name), dtype=np.float64)
            if values.shape != self.chart.shape:
                raise ValueError(f"{name} has shape {values.shape}, chart expects {self.chart.shape}")
            values.setflags(write=False)
            object.__setattr__(self, name, values)

    def stack(self) -> np.ndarray:
        return np.stack([self.X1, self.X2, self.X3])

    def at(self, index) -> np.ndarray:
        return self.stack()[:, index[0], index[1]]

    def translated(self, offset) -> "Immersion":
        return Immersion(self.chart, self.X1 - offset[0], self.X2 - offset[1], self.X3 - offset[2])


@dataclasses.dataclass(frozen=True, eq=False)
class SpinorField:
    chart: Chart
    psi1: np.ndarray
    psi2: np.ndarray
    # axes along which the pair changes sign around a period of a periodic chart
    twist: Twist = NO_TWIST

    def __post_init__(self):
        for name in ("psi1", "psi2"):
            values = np.array(getattr(self, name), dtype=np.complex128)
            if values.shape != self.chart.shape:
                raise ValueError(f"{name} has shape {values.shape}, chart expects {self.chart.shape}")
            values.setflags(write=False)
            object.__setattr__(self, name, values)
        object.__setattr__(self, "twist", tuple(bool(t) for t in self.twist))

    @property
    def lam(self) -> np.ndarray:
        """lambda = |psi1|^2 + |psi2|^2"""
        return np.abs(self.psi1) ** 2 + np.abs(self.psi2) ** 2


@dataclasses.dataclass(frozen=True, eq=False)
class FrameCurvature:
    chart: Chart
    lam: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    H: np.ndarray
    phi: np.ndarray

    @property
    def p(self) -> np.ndarray:
        """The potential lambda H / 2"""
        return self.lam * self.H / 2.0

    @property
    def second_fundamental_form(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(h11, h12, h22) in the orthonormal frame"""
        return self.H + self.phi.real, -self.phi.imag, self.H - self.phi.real

    @property
    def K(self) -> np.ndarray:
        """Gaussian curvature, det of the second fundamental form"""
        h11, h12, h22 = self.second_fundamental_form
        return h11 * h22 - h12 * h12


class InducedSurface(NamedTuple):
    immersion: Immersion
    path_independence: float
    # integral of dX over one x period and one y period (periodic charts only)
    periods: Optional[Tuple[np.ndarray, np.ndarray]]
    closedness: Tuple[float, float]
    consistent: bool


class ReportRow(NamedTuple):
    quantity: str
    value: float
    tolerance: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.tolerance is None or self.value <= self.tolerance

    @property
    def status(self) -> str:
        if self.tolerance is None:
            return "INFO"
        return "OK" if self.passed else "FAIL"


###############################################################################
# Utilities
###############################################################################


def _as_array(values) -> np.ndarray:
    if isinstance(values, spectral_field._Field):
        return values.samples
    return np.asarray(values)


def _interior_max(chart: Chart, values: np.ndarray) -> float:
    return mvn_utils.max_norm(np.asarray(values)[chart.interior()])


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=0)


def _rel(chart: Chart, residual: np.ndarray, *references: np.ndarray, scale: float = 0.0) -> float:
    """Relative interior max-norm; scale bounds the denominator from below"""
    interior = chart.interior()
    refs = [np.asarray(r)[..., interior[0], interior[1]] for r in references]
    if scale:
        refs.append(np.array(scale))
    return mvn_utils.rel_max_norm(np.asarray(residual)[..., interior[0], interior[1]], *refs)


def _derivative_scale(chart: Chart, *values: np.ndarray) -> float:
    """max|value| over the chart width; a reference for residuals whose terms all vanish analytically"""
    x0, x1, y0, y1 = chart.extent
    size = max(_interior_max(chart, v) for v in values)
    return size / min(x1 - x0, y1 - y0)


def _wirtinger_components(X: Immersion) -> np.ndarray:
    chart = X.chart
    return np.stack([chart.d(c) for c in (X.X1, X.X2, X.X3)])


def conformality_residual(X: Immersion) -> float:
    """max|sum_j (d X_j)^2| / max sum_j |d X_j|^2 over interior samples"""
    dX = _wirtinger_components(X)
    g_zz = np.sum(dX * dX, axis=0)
    norm = np.sum(np.abs(dX) ** 2, axis=0)
    return mvn_utils.rel_max_norm(g_zz[X.chart.interior()], norm[X.chart.interior()])


###############################################################################
# Spinor extraction
###############################################################################


def _pointwise_pairs(s1: np.ndarray, s2: np.ndarray, m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pairs with psi1^2 = s1, psi2^2 = s2 and psi2 conj(psi1) = m, up to a common sign

    Only the larger of the two squares is rooted; the other component comes from
    the quotient by m, which stays smooth where its own square crosses zero.
    """
    use_first = np.abs(s1) >= np.abs(s2)
    pivot = np.sqrt(np.where(use_first, s1, s2))
    with np.errstate(divide="ignore", invalid="ignore"):
        other = np.where(use_first, m / np.conj(pivot), np.conj(m / pivot))
    other = np.where(pivot == 0, 0.0, other)
    psi1 = np.where(use_first, pivot, other)
    psi2 = np.where(use_first, other, pivot)
    return psi1, psi2


def _align(ref1, ref2, cand1, cand2, where: str) -> np.ndarray:
    """+1 or -1 per sample, choosing the sign of (cand1, cand2) nearer (ref1, ref2)"""
    plus = np.sqrt(np.abs(cand1 - ref1) ** 2 + np.abs(cand2 - ref2) ** 2)
    minus = np.sqrt(np.abs(cand1 + ref1) ** 2 + np.abs(cand2 + ref2) ** 2)
    ref_size = np.sqrt(np.abs(ref1) ** 2 + np.abs(ref2) ** 2)
    jump = np.minimum(plus, minus)
    bad = jump > mvn_const.BRANCH_JUMP * ref_size
    if np.any(bad):
        index = np.argwhere(np.atleast_1d(bad))[0]
        raise BranchDiscontinuityError(
            f"branch discontinuity {where} (entry {tuple(index)}): both roots are farther than"
            f" {mvn_const.BRANCH_JUMP} x |previous| from the neighbouring sample"
        )
    return np.where(plus <= minus, 1.0, -1.0)


def _unwrap_pairs(psi1: np.ndarray, psi2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Continuity sweep: first along x on the j = 0 line, then along y for every i"""
    psi1 = psi1.copy()
    psi2 = psi2.copy()
    n = psi1.shape[0]
    for i in range(1, n):
        sign = _align(psi1[i - 1, 0], psi2[i - 1, 0], psi1[i, 0], psi2[i, 0], f"at sample ({i}, 0)")
        psi1[i, 0] *= sign
        psi2[i, 0] *= sign
    for j in range(1, psi1.shape[1]):
        sign = _align(psi1[:, j - 1], psi2[:, j - 1], psi1[:, j], psi2[:, j], f"along column j={j}")
        psi1[:, j] *= sign
        psi2[:, j] *= sign
    return psi1, psi2


def _seam_twist(psi1: np.ndarray, psi2: np.ndarray) -> Twist:
    """Whether the unwrapped pair comes back negated across each seam of a periodic chart"""
    twist = []
    for axis in (0, 1):
        last1 = np.take(psi1, -1, axis=axis)
        last2 = np.take(psi2, -1, axis=axis)
        first1 = np.take(psi1, 0, axis=axis)
        first2 = np.take(psi2, 0, axis=axis)
        same = np.abs(first1 - last1) ** 2 + np.abs(first2 - last2) ** 2
        flipped = np.abs(first1 + last1) ** 2 + np.abs(first2 + last2) ** 2
        twist.append(bool(np.sum(flipped < same) > len(same) / 2))
    return (twist[0], twist[1])


def extract_spinors(X: Immersion, tol_conf: float = mvn_const.TOL_CONF) -> SpinorField:
    """psi1 = sqrt(dbar(X2 + i X1)), psi2 = sqrt(-d(X2 + i X1)), signs fixed by continuity

    The relative sign of the pair is fixed by psi2 conj(psi1) = -d X3; the global
    sign is left at the principal root of the basepoint (0, 0).
    """
    residual = conformality_residual(X)
    if residual > tol_conf:
        raise NonConformalError(f"non-conformal immersion: |g_zz| residual {residual:.3e} exceeds {tol_conf:.1e}")
    chart = X.chart
    F = X.X2 + 1j * X.X1
    s1 = chart.dbar(F)
    s2 = -chart.d(F)
    m = -chart.d(X.X3)
    psi1, psi2 = _pointwise_pairs(s1, s2, m)
    psi1, psi2 = _unwrap_pairs(psi1, psi2)
    twist = _seam_twist(psi1, psi2) if chart.is_periodic else NO_TWIST
    if any(twist):
        logger.info("spinor pair is antiperiodic along axes %s", [a for a, t in zip("xy", twist) if t])
    return SpinorField(chart, psi1, psi2, twist)


###############################################################################
# Residuals
###############################################################################


def dirac_residual(psi: SpinorField, p) -> float:
    """max of the relative max-norms of d psi1 - p psi2 and dbar psi2 + p psi1

    Normalized by the largest first derivative of either spinor.
    """
    chart = psi.chart
    p = _as_array(p)
    d1 = chart.d(psi.psi1, psi.twist)
    db1 = chart.dbar(psi.psi1, psi.twist)
    d2 = chart.d(psi.psi2, psi.twist)
    db2 = chart.dbar(psi.psi2, psi.twist)
    r1 = d1 - p * psi.psi2
    r2 = db2 + p * psi.psi1
    scale = _derivative_scale(chart, psi.psi1, psi.psi2)
    return max(_rel(chart, r1, d1, db1, d2, db2, scale=scale), _rel(chart, r2, d1, db1, d2, db2, scale=scale))


def form_coefficients(psi: SpinorField) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """dz and dzbar coefficients of Omega+ and Omega3"""
    c1 = np.conj(psi.psi1)
    c2 = np.conj(psi.psi2)
    return {
        "plus": (c1 * c1, -c2 * c2),
        "3": (-psi.psi2 * c1, -psi.psi1 * c2),
    }


def check_closed(psi: SpinorField) -> Tuple[float, float]:
    """(r_plus, r_3): relative residuals of d(psi1^2) + dbar(psi2^2) and dbar(psi2 conj psi1) - d(psi1 conj psi2)

    The bilinears are single valued even for twisted pairs.
    """
    chart = psi.chart
    a = chart.d(psi.psi1 * psi.psi1)
    b = chart.dbar(psi.psi2 * psi.psi2)
    c = chart.dbar(psi.psi2 * np.conj(psi.psi1))
    d = chart.d(psi.psi1 * np.conj(psi.psi2))
    scale = _derivative_scale(chart, psi.psi1 * psi.psi1, psi.psi2 * psi.psi2, psi.psi1 * np.conj(psi.psi2))
    return _rel(chart, a + b, a, b, scale=scale), _rel(chart, c - d, c, d, scale=scale)


def hopf_residuals(psi: SpinorField, fc: FrameCurvature) -> Tuple[float, float]:
    """Relative residuals of dbar(psi1/lambda) - conj(phi)/2 psi2 and d(psi2/lambda) + phi/2 psi1"""
    chart = psi.chart
    a = chart.dbar(psi.psi1 / fc.lam, psi.twist)
    b = np.conj(fc.phi) / 2.0 * psi.psi2
    c = chart.d(psi.psi2 / fc.lam, psi.twist)
    d = fc.phi / 2.0 * psi.psi1
    scale = _derivative_scale(chart, psi.psi1 / fc.lam, psi.psi2 / fc.lam)
    return _rel(chart, a - b, a, b, scale=scale), _rel(chart, c + d, c, d, scale=scale)


###############################################################################
# Inducing
###############################################################################


def _line_integral(chart: Chart, g: np.ndarray, axis: int, start: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Antiderivative of g along one axis anchored at index start; periods for periodic charts"""
    h = chart.spacing[axis]
    if chart.is_periodic:
        return spectral_field.cumulative_periodic(g, axis, h, start)
    trap = scipy.integrate.cumulative_trapezoid(g, dx=h, axis=axis, initial=0)
    dg = fd_derivative(g, axis, h, 1) if g.shape[axis] >= MIN_FD_SAMPLES else np.zeros_like(g)
    # Euler-Maclaurin end correction lifts the trapezoid rule to fourth order
    corrected = trap - (h * h / 12.0) * (dg - np.take(dg, [0], axis=axis))
    return corrected - np.take(corrected, [start], axis=axis), None


def _path_integrals(chart: Chart, a: np.ndarray, b: np.ndarray, basepoint) -> Tuple[np.ndarray, np.ndarray, tuple]:
    """Integrals of a dz + b dzbar along x-first and y-first grid paths from basepoint"""
    i0, j0 = basepoint
    gx = a + b
    gy = 1j * (a - b)
    Iy, period_y = _line_integral(chart, gy, axis=1, start=j0)
    Ix, period_x = _line_integral(chart, gx, axis=0, start=i0)
    x_first = Ix[:, j0][:, None] + Iy
    y_first = Iy[i0, :][None, :] + Ix
    periods = None
    if period_x is not None:
        periods = (complex(period_x[j0]), complex(period_y[i0]))
    return x_first, y_first, periods


def induce_surface(
    psi: SpinorField,
    basepoint=None,
    tol_closed: float = mvn_const.TOL_CLOSED,
) -> InducedSurface:
    """X2 - i X1 = integral of Omega+, X3 = integral of Omega3, with X(basepoint) = 0

    Integrates along x-first grid paths; the y-first paths give the reported
    path-independence residual.
    """
    chart = psi.chart
    if basepoint is None:
        basepoint = (chart.n // 2, chart.n // 2)
    basepoint = mvn_utils.GridIndex(*basepoint)
    closedness = check_closed(psi)
    if max(closedness) > tol_closed:
        raise FormsNotClosedError(
            f"forms not closed: residuals r_plus={closedness[0]:.3e}, r_3={closedness[1]:.3e} exceed {tol_closed:.1e}"
        )
    coeffs = form_coefficients(psi)
    plus_x, plus_y, plus_periods = _path_integrals(chart, *coeffs["plus"], basepoint)
    three_x, three_y, three_periods = _path_integrals(chart, *coeffs["3"], basepoint)

    immersion = Immersion(chart, -plus_x.imag, plus_x.real, three_x.real)
    scale = max(mvn_utils.max_norm(plus_x), mvn_utils.max_norm(three_x.real))
    mismatch = max(mvn_utils.max_norm(plus_x - plus_y), mvn_utils.max_norm((three_x - three_y).real))
    path_independence = mismatch / scale if scale > 0 else mismatch

    periods = None
    if plus_periods is not None:
        periods = tuple(
            np.array([-plus_period.imag, plus_period.real, three_period.real])
            for plus_period, three_period in zip(plus_periods, three_periods)
        )
    consistent = path_independence <= mvn_const.PATH_INDEPENDENCE_FACTOR * tol_closed
    if not consistent:
        logger.warning(
            "path-independence residual %.3e exceeds %g x tol_closed: inconsistent input",
            path_independence,
            mvn_const.PATH_INDEPENDENCE_FACTOR,
        )
    return InducedSurface(
        immersion=immersion,
        path_independence=path_independence,
        periods=periods,
        closedness=closedness,
        consistent=consistent,
    )


###############################################################################
# Frame and curvature
###############################################################################


def frame_and_curvature(X: Immersion) -> FrameCurvature:
    chart = X.chart
    comps = (X.X1, X.X2, X.X3)
    Xx = np.stack([chart.derivative(c, 0) for c in comps])
    Xy = np.stack([chart.derivative(c, 1) for c in comps])
    Xxx = np.stack([chart.derivative(c, 0, 2) for c in comps])
    Xyy = np.stack([chart.derivative(c, 1, 2) for c in comps])
    Xxy = np.stack([chart.derivative(chart.derivative(c, 0), 1) for c in comps])

    lam2 = (_dot(Xx, Xx) + _dot(Xy, Xy)) / 2.0
    lam = np.sqrt(lam2)
    lam_max = _interior_max(chart, lam)
    interior = chart.interior()
    if lam_max == 0.0 or np.min(lam[interior]) < mvn_const.DEGENERATE_LAMBDA * lam_max:
        raise DegenerateMetricError(f"degenerate metric: min lambda {np.min(lam[interior]):.3e} (max {lam_max:.3e})")

    e1 = Xx / lam
    e2 = Xy / lam
    e3 = np.cross(e1, e2, axis=0)
    e3 = e3 / np.sqrt(_dot(e3, e3))

    d_dbar_X = (Xxx + Xyy) / 4.0
    d2_X = (Xxx - Xyy - 2j * Xxy) / 4.0
    H = 2.0 / lam2 * _dot(d_dbar_X, e3)
    phi = 2.0 / lam2 * _dot(d2_X, e3)
    return FrameCurvature(chart=chart, lam=lam, e1=e1, e2=e2, e3=e3, H=H, phi=phi)


def structure_residuals(X: Immersion, fc: FrameCurvature) -> Tuple[float, float]:
    """Relative residuals of d dbar X = (lambda^2/2) H e3 and d^2 X = d(lambda)(e1 - i e2) + (lambda^2/2) phi e3"""
    chart = X.chart
    comps = (X.X1, X.X2, X.X3)
    dX = np.stack([chart.d(c) for c in comps])
    d_dbar_X = np.stack([chart.dbar(v) for v in dX])
    d2_X = np.stack([chart.d(v) for v in dX])
    lam2_half = fc.lam**2 / 2.0
    r1 = d_dbar_X - lam2_half * fc.H * fc.e3
    r3 = d2_X - chart.d(fc.lam) * (fc.e1 - 1j * fc.e2) - lam2_half * fc.phi * fc.e3
    scale = _derivative_scale(chart, *dX)
    return _rel(chart, r1, d_dbar_X, scale=scale), _rel(chart, r3, d2_X, scale=scale)


def orthonormality_residual(fc: FrameCurvature) -> float:
    frame = (fc.e1, fc.e2, fc.e3)
    worst = 0.0
    for i, a in enumerate(frame):
        for j, b in enumerate(frame):
            target = 1.0 if i == j else 0.0
            worst = max(worst, _interior_max(fc.chart, _dot(a, b) - target))
    return worst


###############################################################################
# Willmore functional
###############################################################################


def disk_mask(chart: Chart, radius: Optional[float]) -> Optional[np.ndarray]:
    if radius is None:
        return None
    return (np.abs(chart.z()) <= radius).astype(float)


def willmore_geometric(fc: FrameCurvature, radius: Optional[float] = None) -> float:
    """Integral of sqrt|g| H^2 = (lambda^2 / 2) H^2 against dx dy, optionally over |z| <= radius"""
    integrand = fc.lam**2 / 2.0 * fc.H**2
    return fc.chart.integrate(integrand, disk_mask(fc.chart, radius))


def willmore_potential(fc: FrameCurvature, radius: Optional[float] = None) -> float:
    """2 * integral(p^2) with p = lambda H / 2; the flow module's S on periodic charts"""
    chart = fc.chart
    if chart.is_periodic and radius is None:
        return mvn_flow.willmore(RealField(chart.grid, fc.p))
    return 2.0 * chart.integrate(fc.p**2, disk_mask(chart, radius))


###############################################################################
# Built-in surfaces
###############################################################################


class BuiltinSurface(NamedTuple):
    name: str
    immersion: Immersion
    # closed forms where known
    spinors: Optional[SpinorField]
    p: Optional[np.ndarray]
    willmore_radius: Optional[float]
    willmore_expected: Optional[float]


DEFAULT_BUILTIN_CHARTS = {
    "plane": Chart.open(64, (-1.0, 1.0, -1.0, 1.0)),
    "sphere": Chart.open(256, (-2.0, 2.0, -2.0, 2.0)),
    "enneper": Chart.open(64, (-1.0, 1.0, -1.0, 1.0)),
    "cylinder": Chart.open(64, (-1.0, 1.0, -1.0, 1.0)),
    "torus": Chart.periodic(64),
}


def sphere_willmore_disk(radius: float) -> float:
    """Closed form of the functional for the unit sphere over the chart disk |z| <= radius"""
    return 2.0 * math.pi * (1.0 - 1.0 / (1.0 + radius * radius))


def _torus_angle(u: np.ndarray) -> np.ndarray:
    """Meridian angle as a function of the conformal coordinate for radii sqrt(2) and 1"""
    return 2.0 * np.arctan2((math.sqrt(2.0) + 1.0) * np.sin(u / 2.0), np.cos(u / 2.0))


def builtin_surface(name: str, chart: Optional[Chart] = None) -> BuiltinSurface:
    if name not in mvn_const.BUILTIN_SURFACES:
        raise ValueError(f"unknown built-in surface {name!r}; choices: {mvn_const.BUILTIN_SURFACES}")
    chart = chart or DEFAULT_BUILTIN_CHARTS[name]
    x, y = chart.coords()
    z = x + 1j * y
    r2 = x * x + y * y
    zeros = np.zeros(chart.shape)
    spinors = None
    p = None
    radius = None
    expected = None
    if name == "plane":
        X = Immersion(chart, x, y, zeros)
        spinors = SpinorField(chart, np.full(chart.shape, np.exp(1j * np.pi / 4)), zeros)
        p = zeros
        expected = 0.0
    elif name == "sphere":
        X = Immersion(chart, 2 * x / (1 + r2), 2 * y / (1 + r2), (r2 - 1) / (1 + r2))
        spinors = SpinorField(chart, (1 + 1j) / (1 + r2), -(1 + 1j) * np.conj(z) / (1 + r2))
        p = 1.0 / (1 + r2)
        if not chart.is_periodic:
            x0, x1, y0, y1 = chart.extent
            radius = min(abs(x0), abs(x1), abs(y0), abs(y1))
            expected = sphere_willmore_disk(radius)
    elif name == "enneper":
        X = Immersion(chart, np.real(z - z**3 / 3), np.real(1j * (z + z**3 / 3)), np.real(z**2))
        rot = np.exp(-1j * np.pi / 4)
        spinors = SpinorField(chart, -rot * np.conj(z), np.full(chart.shape, rot))
        p = zeros
        expected = 0.0
    elif name == "cylinder":
        X = Immersion(chart, np.cos(x), np.sin(x), y)
        spinors = SpinorField(chart, np.exp(-0.5j * x) / math.sqrt(2), 1j * np.exp(-0.5j * x) / math.sqrt(2))
        p = np.full(chart.shape, -0.25)
    else:
        phi = _torus_angle(x)
        ring = math.sqrt(2.0) + np.cos(phi)
        X = Immersion(chart, ring * np.cos(y), ring * np.sin(y), np.sin(phi))
        p = (math.sqrt(2.0) + 2.0 * np.cos(phi)) / 4.0
        expected = math.pi**2
    return BuiltinSurface(name, X, spinors, p, radius, expected)


###############################################################################
# I/O
###############################################################################


def write_immersion(out_dir: str, X: Immersion):
    for filename, values in zip(IMMERSION_FILES, (X.X1, X.X2, X.X3)):
        spectral_field.write_samples(os.path.join(out_dir, filename), values, X.chart.header())


def write_spinors(out_dir: str, psi: SpinorField):
    header = psi.chart.header()
    header["twist"] = "".join("1" if t else "0" for t in psi.twist)
    for filename, values in zip(SPINOR_FILES, (psi.psi1, psi.psi2)):
        spectral_field.write_samples(os.path.join(out_dir, filename), values, header)


def _read_components(in_dir: str, filenames) -> Tuple[Chart, List[np.ndarray], Dict[str, str]]:
    arrays = []
    chart = None
    header = {}
    for filename in filenames:
        samples, header = spectral_field.read_samples(os.path.join(in_dir, filename))
        this_chart = Chart.from_header(header)
        if chart is not None and this_chart != chart:
            raise spectral_field.FieldFormatError(f"{filename}: chart {this_chart} differs from {chart}")
        chart = this_chart
        arrays.append(samples)
    return chart, arrays, header


def read_immersion(in_dir: str) -> Immersion:
    chart, (X1, X2, X3), _ = _read_components(in_dir, IMMERSION_FILES)
    return Immersion(chart, np.real(X1), np.real(X2), np.real(X3))


def read_spinors(in_dir: str) -> SpinorField:
    chart, (psi1, psi2), header = _read_components(in_dir, SPINOR_FILES)
    flags = header.get("twist", "00")
    return SpinorField(chart, psi1, psi2, (flags[0] == "1", flags[1] == "1"))


def export_obj(X: Immersion, path: str) -> str:
    """Wavefront OBJ with one vertex per sample (row-major) and two triangles per quad

    Triangles wind so that their normals point along -e3; periodic charts close both seams.
    """
    chart = X.chart
    n = chart.n
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)

    def vertex(i: int, j: int) -> int:
        return (i % n) * n + (j % n) + 1

    quads = n if chart.is_periodic else n - 1
    with open(path, "w", encoding="utf8") as f:
        f.write(f"# mvntest immersion: {chart.kind} chart, {n}x{n} samples\n")
        for x1, x2, x3 in zip(X.X1.reshape(-1), X.X2.reshape(-1), X.X3.reshape(-1)):
            f.write(f"v {x1:.17g} {x2:.17g} {x3:.17g}\n")
        for i in range(quads):
            for j in range(quads):
                a, b, c, d = vertex(i, j), vertex(i, j + 1), vertex(i + 1, j + 1), vertex(i + 1, j)
                f.write(f"f {a} {b} {c}\n")
                f.write(f"f {a} {c} {d}\n")
    logger.info("wrote %d vertices and %d faces to %s", n * n, 2 * quads * quads, path)
    return path


###############################################################################
# Reports
###############################################################################


def surface_report(
    X: Optional[Immersion] = None,
    psi: Optional[SpinorField] = None,
    basepoint=None,
    willmore_radius: Optional[float] = None,
    willmore_expected: Optional[float] = None,
    tol_closed: float = mvn_const.TOL_CLOSED,
) -> Tuple[InducedSurface, List[ReportRow]]:
    """Run extraction (when X is given), inducing and every residual check

    Returns the induced surface and one report row per quantity.
    """
    if X is None and psi is None:
        raise ValueError("need an immersion or a spinor field")
    rows: List[ReportRow] = []
    if X is not None:
        rows.append(ReportRow("conformality", conformality_residual(X), mvn_const.TOL_CONF))
        if psi is None:
            psi = extract_spinors(X)
    induced = induce_surface(psi, basepoint, tol_closed)
    chart = psi.chart
    rows.append(ReportRow("closedness_plus", induced.closedness[0], tol_closed))
    rows.append(ReportRow("closedness_3", induced.closedness[1], tol_closed))
    rows.append(
        ReportRow(
            "path_independence",
            induced.path_independence,
            mvn_const.PATH_INDEPENDENCE_FACTOR * max(max(induced.closedness), mvn_const.RESIDUAL_FLOOR),
        )
    )
    target = X if X is not None else induced.immersion
    if X is not None:
        expected = X.translated(X.at(_basepoint(chart, basepoint)))
        error = induced.immersion.stack() - expected.stack()
        rows.append(ReportRow("round_trip", _interior_max(chart, error), mvn_const.TOL_ROUND_TRIP))
    fc = frame_and_curvature(target)
    p = fc.p
    rows.append(ReportRow("dirac", dirac_residual(psi, p), mvn_const.TOL_DIRAC))
    hopf = hopf_residuals(psi, fc)
    rows.append(ReportRow("hopf", max(hopf), 1e-4))
    rows.append(ReportRow("structure", max(structure_residuals(target, fc)), 1e-4))
    geometric = willmore_geometric(fc, willmore_radius)
    potential = willmore_potential(fc, willmore_radius)
    rows.append(ReportRow("willmore_geometric", geometric))
    rows.append(ReportRow("willmore_potential", potential))
    scale = max(abs(geometric), abs(potential))
    rows.append(ReportRow("willmore_agreement", abs(geometric - potential) / scale if scale else 0.0, 1e-10))
    if willmore_expected is not None:
        if willmore_expected:
            deviation = abs(geometric - willmore_expected) / abs(willmore_expected)
        else:
            deviation = abs(geometric)
        rows.append(ReportRow("willmore_closed_form", deviation, mvn_const.TOL_WILLMORE_REL))
    if induced.periods is not None:
        for axis, period in zip("xy", induced.periods):
            rows.append(ReportRow(f"period_{axis}", float(np.linalg.norm(period))))
    return induced, rows


def _basepoint(chart: Chart, basepoint) -> mvn_utils.GridIndex:
    if basepoint is None:
        return mvn_utils.GridIndex(chart.n // 2, chart.n // 2)
    return mvn_utils.GridIndex(*basepoint)
