"""Periodic-grid field arithmetic via the fast Fourier transform

Conventions, fixed for the whole package:

    z = x + iy,   d = (d_x - i d_y) / 2,   dbar = (d_x + i d_y) / 2

so a Fourier mode exp(i (kx x + ky y)) is an eigenfunction of d with eigenvalue
(i kx + ky) / 2 and of dbar with eigenvalue (i kx - ky) / 2.  Samples are stored
row-major over (x, y): samples[i, j] is the value at (x_i, y_j).

Integrals are taken against dx dy (Lebesgue measure on the chart).
"""

import dataclasses
import functools
import inspect
import logging
import os
import sys

from typing import Dict, Literal, Optional, Tuple, Union

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)

if THIS_DIR not in sys.path:
    sys.path.append(THIS_DIR)

import numpy as np
import scipy.fft

import mvn_const

logger = logging.getLogger(__name__)

Direction = Literal["dz", "dzbar"]
Twist = Tuple[bool, bool]
NO_TWIST: Twist = (False, False)

# worker count handed to every scipy.fft call; None lets scipy decide
_FFT_WORKERS: Optional[int] = None

###############################################################################
# Exceptions
###############################################################################


class GridError(ValueError):
    pass


class GaugeObstructionError(ValueError):
    pass


class FieldFormatError(ValueError):
    pass


###############################################################################
# Dataclasses
###############################################################################


@dataclasses.dataclass(frozen=True)
class Grid:
    n: int
    length: float = mvn_const.DEFAULT_LENGTH

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < mvn_const.MIN_GRID_N or self.n % 2:
            raise GridError(f"n must be even ≥ {mvn_const.MIN_GRID_N} - got: {self.n!r}")
        if not self.length > 0:
            raise GridError(f"length must be positive - got: {self.length!r}")

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """(x, y) sample coordinates, each n x n, indexed [i, j]"""
        ax = self.axis()
        return np.meshgrid(ax, ax, indexing="ij")

    def integer_modes(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    def header(self) -> Dict[str, str]:
        return {"n": str(self.n), "length": repr(float(self.length))}


@dataclasses.dataclass(frozen=True, eq=False)
class _Field:
    grid: Grid
    samples: np.ndarray

    dtype = np.complex128
    kind = "complex"

    def __post_init__(self):
        samples = np.array(self.samples, dtype=self.dtype)
        if samples.shape != self.grid.shape:
            raise GridError(f"expected {self.grid.shape} samples, got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("field samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def _check_grid(self, other: "_Field"):
        if other.grid != self.grid:
            raise GridError(f"grid mismatch: {self.grid} vs {other.grid}")

    def _binary(self, other, op):
        if isinstance(other, _Field):
            self._check_grid(other)
            result = op(self.samples, other.samples)
        else:
            result = op(self.samples, other)
        return field_like(self.grid, result)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return field_like(self.grid, -self.samples)

    def conj(self):
        return field_like(self.grid, np.conj(self.samples))

    @property
    def real(self) -> "RealField":
        return RealField(self.grid, np.real(self.samples))

    @property
    def imag(self) -> "RealField":
        return RealField(self.grid, np.imag(self.samples))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.samples)))


class ComplexField(_Field):
    dtype = np.complex128
    kind = "complex"


class RealField(_Field):
    dtype = np.float64
    kind = "real"


Field = Union[RealField, ComplexField]


def field_like(grid: Grid, samples: np.ndarray) -> Field:
    """Wrap samples as a RealField when they are real-typed, else a ComplexField"""
    if np.iscomplexobj(samples):
        return ComplexField(grid, samples)
    return RealField(grid, samples)


###############################################################################
# Transforms
###############################################################################


def set_fft_workers(workers: Optional[int]):
    global _FFT_WORKERS
    _FFT_WORKERS = workers
    logger.debug("fft workers set to %s", workers)


def fft2(samples: np.ndarray) -> np.ndarray:
    return scipy.fft.fft2(samples, workers=_FFT_WORKERS)


def ifft2(modes: np.ndarray) -> np.ndarray:
    return scipy.fft.ifft2(modes, workers=_FFT_WORKERS)


def to_modes(f: Field) -> np.ndarray:
    """Fourier coefficients c with f = sum c[m] exp(2 pi i (m . x) / length)"""
    return fft2(f.samples) / f.grid.n**2


def from_modes(grid: Grid, coeffs: np.ndarray, kind: str = "complex") -> Field:
    samples = ifft2(np.asarray(coeffs) * grid.n**2)
    if kind == "real":
        return RealField(grid, samples.real)
    return ComplexField(grid, samples)


###############################################################################
# Symbols
###############################################################################


@functools.lru_cache(maxsize=64)
def _wavenumbers(n: int, length: float, twisted: bool) -> np.ndarray:
    m = np.fft.fftfreq(n, d=1.0 / n)
    if twisted:
        # antiperiodic: half-integer modes m + 1/2 form a symmetric set
        k = 2.0 * np.pi / length * (m + 0.5)
    else:
        k = 2.0 * np.pi / length * m
        k[n // 2] = 0.0
    k.setflags(write=False)
    return k


@functools.lru_cache(maxsize=64)
def _symbol(n: int, length: float, direction: str, twist: Twist) -> np.ndarray:
    kx = _wavenumbers(n, length, twist[0])[:, None]
    ky = _wavenumbers(n, length, twist[1])[None, :]
    if direction == "dz":
        sigma = (1j * kx + ky) / 2.0
    elif direction == "dzbar":
        sigma = (1j * kx - ky) / 2.0
    else:
        raise ValueError(f"direction must be 'dz' or 'dzbar' - got: {direction!r}")
    sigma.setflags(write=False)
    return sigma


def symbol(grid: Grid, direction: Direction, twist: Twist = NO_TWIST) -> np.ndarray:
    """Multiplier of the Wirtinger derivative in mode space, indexed like fft2 output"""
    return _symbol(grid.n, float(grid.length), direction, tuple(twist))


@functools.lru_cache(maxsize=16)
def _twist_phase(n: int, length: float, twist: Twist) -> np.ndarray:
    ax = np.arange(n) * (length / n)
    phase_x = np.exp(1j * np.pi * ax / length) if twist[0] else np.ones(n)
    phase_y = np.exp(1j * np.pi * ax / length) if twist[1] else np.ones(n)
    phase = phase_x[:, None] * phase_y[None, :]
    phase.setflags(write=False)
    return phase


@functools.lru_cache(maxsize=16)
def dealias_mask(n: int) -> np.ndarray:
    """2/3 rule: keep modes with |m| < n/3 along both axes"""
    m = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    keep = m < n / 3.0
    mask = keep[:, None] & keep[None, :]
    mask.setflags(write=False)
    return mask


###############################################################################
# Core functions
###############################################################################


def make_grid(n: int, length: float = mvn_const.DEFAULT_LENGTH) -> Grid:
    return Grid(n=int(n), length=float(length))


def wirtinger(f: Field, direction: Direction, order: int = 1, twist: Twist = NO_TWIST) -> ComplexField:
    """Spectral d^order or dbar^order of f

    twist marks axes along which f is antiperiodic (spinors on a torus); those
    axes are differentiated on the half-integer modes.
    """
    if not 0 < order <= mvn_const.MAX_WIRTINGER_ORDER:
        raise ValueError(f"order must be in 1..{mvn_const.MAX_WIRTINGER_ORDER} - got: {order}")
    grid = f.grid
    sigma = symbol(grid, direction, twist)
    if any(twist):
        phase = _twist_phase(grid.n, float(grid.length), tuple(twist))
        modes = fft2(f.samples * np.conj(phase))
        return ComplexField(grid, ifft2(modes * sigma**order) * phase)
    return ComplexField(grid, ifft2(fft2(f.samples) * sigma**order))


def mixed_derivative(f: Field, a: int, b: int) -> ComplexField:
    """d^a dbar^b f in one transform pair"""
    grid = f.grid
    if a == 0 and b == 0:
        return ComplexField(grid, f.samples)
    multiplier = symbol(grid, "dz") ** a * symbol(grid, "dzbar") ** b
    return ComplexField(grid, ifft2(fft2(f.samples) * multiplier))


def partial(f: Field, axis: int, order: int = 1, twist: Twist = NO_TWIST) -> ComplexField:
    """Spectral d_x (axis 0) or d_y (axis 1), built from the Wirtinger symbols"""
    grid = f.grid
    d = symbol(grid, "dz", twist)
    dbar = symbol(grid, "dzbar", twist)
    if axis == 0:
        sigma = d + dbar
    elif axis == 1:
        sigma = 1j * (d - dbar)
    else:
        raise ValueError(f"axis must be 0 or 1 - got: {axis}")
    if any(twist):
        phase = _twist_phase(grid.n, float(grid.length), tuple(twist))
        return ComplexField(grid, ifft2(fft2(f.samples * np.conj(phase)) * sigma**order) * phase)
    return ComplexField(grid, ifft2(fft2(f.samples) * sigma**order))


def dbar_inverse(f: Field, tol_mean: float = mvn_const.GAUGE_TOL) -> ComplexField:
    """The zero-mean g with dbar g = f

    Raises GaugeObstructionError when f has a mean: constants are not
    dbar-exact on the torus. The Nyquist modes (n/2, 0), (0, n/2) and
    (n/2, n/2) have a zero dbar symbol and are projected out of f; a warning
    is logged when they carry more than tol_mean x max|f|.
    """
    grid = f.grid
    modes = fft2(f.samples)
    mean = modes[0, 0] / grid.n**2
    scale = float(np.max(np.abs(f.samples))) if f.samples.size else 0.0
    if abs(mean) > tol_mean * scale:
        raise GaugeObstructionError(
            f"gauge obstruction: mean {abs(mean):.3e} exceeds {tol_mean:.1e} x max|f| ({scale:.3e})"
        )
    sigma = symbol(grid, "dzbar")
    dropped = np.abs(np.where(sigma == 0, modes, 0.0))
    dropped[0, 0] = 0.0
    nyquist = float(np.sum(dropped)) / grid.n**2
    if nyquist > tol_mean * scale:
        logger.warning("dbar_inverse dropped Nyquist content %.3e (max|f| %.3e)", nyquist, scale)
    safe = np.where(sigma == 0, 1.0, sigma)
    inv_modes = np.where(sigma == 0, 0.0, modes / safe)
    return ComplexField(grid, ifft2(inv_modes))


def truncate(f: Field) -> Field:
    """Apply the 2/3-rule spectral truncation"""
    modes = fft2(f.samples) * dealias_mask(f.grid.n)
    samples = ifft2(modes)
    if isinstance(f, RealField):
        return RealField(f.grid, samples.real)
    return ComplexField(f.grid, samples)


def product(f: Field, g: Field, dealias: bool = False) -> Field:
    if f.grid != g.grid:
        raise GridError(f"grid mismatch: {f.grid} vs {g.grid}")
    result = field_like(f.grid, f.samples * g.samples)
    if dealias:
        return truncate(result)
    return result


def integrate(f: Field) -> complex:
    """Integral over one period cell against dx dy"""
    return complex(np.mean(f.samples) * f.grid.length**2)


def parseval_residual(f: Field) -> float:
    """Relative mismatch of sum|f|^2 h^2 against length^2 sum|c|^2"""
    grid = f.grid
    physical = float(np.sum(np.abs(f.samples) ** 2) * grid.spacing**2)
    spectral = float(np.sum(np.abs(to_modes(f)) ** 2) * grid.length**2)
    if physical == 0.0:
        return spectral
    return abs(physical - spectral) / physical


def cumulative_periodic(samples: np.ndarray, axis: int, spacing: float, start: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Spectral antiderivative along one axis, anchored to zero at index start

    Returns (integral, period) where period is the integral over one full
    cycle (mean times length) for every line along the axis.
    """
    samples = np.asarray(samples)
    n = samples.shape[axis]
    length = n * spacing
    modes = scipy.fft.fft(samples, axis=axis, workers=_FFT_WORKERS)
    k = 2.0 * np.pi / length * np.fft.fftfreq(n, d=1.0 / n)
    k[n // 2] = 0.0
    shape = [1, 1]
    shape[axis] = n
    k = k.reshape(shape)
    mean = np.take(modes, [0], axis=axis) / n
    safe = np.where(k == 0, 1.0, k)
    anti_modes = np.where(k == 0, 0.0, modes / (1j * safe))
    anti = scipy.fft.ifft(anti_modes, axis=axis, workers=_FFT_WORKERS)
    coord = (np.arange(n) * spacing).reshape(shape)
    integral = anti + mean * coord
    integral = integral - np.take(integral, [start], axis=axis)
    period = np.squeeze(mean * length, axis=axis)
    return integral, period


###############################################################################
# I/O
###############################################################################


def write_samples(path: str, samples: np.ndarray, header: Dict[str, str]):
    """Write an n x n array in the field text format under the given header keys"""
    samples = np.asarray(samples)
    kind = "complex" if np.iscomplexobj(samples) else "real"
    header = dict(header)
    header["kind"] = kind
    header_line = " ".join(f"{k}={v}" for k, v in header.items())
    flat = samples.reshape(-1)
    if kind == "complex":
        data = np.column_stack([flat.real, flat.imag])
    else:
        data = flat[:, None]
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    np.savetxt(path, data, fmt="%.17g", header=header_line, comments="# ")


def read_samples(path: str) -> Tuple[np.ndarray, Dict[str, str]]:
    """Read an n x n array in the field text format; returns (samples, header)"""
    header = read_header(path)
    try:
        n = int(header["n"])
    except ValueError as err:
        raise FieldFormatError(f"{path}: {err}") from err
    kind = header["kind"]
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except ValueError as err:
        raise FieldFormatError(f"{path}: {err}") from err
    if data.shape[0] != n * n:
        raise FieldFormatError(f"{path}: expected {n * n} samples, found {data.shape[0]}")
    if kind == "real":
        if data.shape[1] != 1:
            raise FieldFormatError(f"{path}: real fields take one column per line")
        return data[:, 0].reshape(n, n), header
    if kind == "complex":
        if data.shape[1] != 2:
            raise FieldFormatError(f"{path}: complex fields take two columns per line")
        return (data[:, 0] + 1j * data[:, 1]).reshape(n, n), header
    raise FieldFormatError(f"{path}: unknown kind {kind!r}")


def write_field(path: str, f: Field, **extra):
    """Write f in the field text format; extra key=value pairs go on the header line"""
    header = dict(f.grid.header())
    header.update({k: str(v) for k, v in extra.items()})
    write_samples(path, f.samples, header)


def read_header(path: str) -> Dict[str, str]:
    with open(path, "r", encoding="utf8") as f:
        first = f.readline()
    if not first.startswith("#"):
        raise FieldFormatError(f"{path}: missing '# n=... length=... kind=...' header")
    header = {}
    for token in first[1:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise FieldFormatError(f"{path}: malformed header token {token!r}")
        header[key] = value
    for key in ("n", "length", "kind"):
        if key not in header:
            raise FieldFormatError(f"{path}: header lacks {key!r}")
    return header


def read_field(path: str) -> Tuple[Field, Dict[str, str]]:
    """Read a field text file; returns the field and its full header"""
    samples, header = read_samples(path)
    try:
        grid = make_grid(int(header["n"]), float(header["length"]))
    except ValueError as err:
        raise FieldFormatError(f"{path}: {err}") from err
    if header["kind"] == "real":
        return RealField(grid, samples), header
    return ComplexField(grid, samples), header
