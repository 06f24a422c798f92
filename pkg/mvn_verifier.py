"""Exact symbolic checks of the second mVN deformation and its first integral

The operators are stored once, as text in the diffop_algebra grammar; only the
(+) parts are written down, the (-) parts come from conj_transform.
"""

import dataclasses
import datetime
import inspect
import logging
import os
import sys

from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Union

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)

if THIS_DIR not in sys.path:
    sys.path.append(THIS_DIR)

import diffop_algebra
import mvn_utils

from diffop_algebra import DiffPoly, Mat2, MatrixOperator, commutator, compose, conj_transform, normalize

logger = logging.getLogger(__name__)

###############################################################################
# Constants
###############################################################################

FLOW_DEFINITIONS = {
    1: "d(p,3) + 3*w*d(p) + 3/2*p*d(w)",
    2: (
        "d(p,5) + 5*w*d(p,3) + 15/2*d(w)*d(p,2) + 5/2*d(p)*(2*w^2 + 3*d(w,2) + 2*zt)"
        " + 5/2*p*d(w^2 + zt + d(w,2))"
    ),
}

# first-integral brackets F with dp^2/dt+ = d(F)
FLUX_DEFINITIONS = {
    1: "d(p^2,2) - 3*d(p)^2 + 3*p^2*w",
    2: (
        "d(p^2,4) - 5*d(d(p)^2,2) + 5*d(p,2)^2 + 5*w*d(p^2,2) - 15*w*d(p)^2 + 5/2*d(w)*d(p^2)"
        " + 5*p^2*(w^2 + zt + d(w,2))"
    ),
}

# matrix entries of A2+ = D^5 + V D^3 + W D^2 + X D + Z and B2+ = Q D^3 + R D^2 + S D + T;
# gauge V11 = W11 = X11 = 0 and the constant part of Z11 set to zero
ENTRY_DEFINITIONS = {
    "V11": "0",
    "V12": "-5*d(p)",
    "V21": "0",
    "V22": "5*w",
    "W11": "0",
    "W12": "-5*d(p,2) + 5*p*w",
    "W21": "0",
    "W22": "15/2*d(w)",
    "X11": "0",
    "X12": "5/2*(p*d(w) - 2*w*d(p) - 2*d(p,3))",
    "X21": "0",
    "X22": "5/2*(2*w^2 + 3*d(w,2) + 2*zt)",
    "Z11": "0",
    "Z12": "5*(p*(w^2 + zt + d(w,2)) + w*d(p,2) + 1/2*d(p)*d(w))",
    "Z21": "0",
    "Z22": "5/2*d(w^2 + zt + d(w,2))",
    "Q11": "0",
    "Q12": "-5*d(p)",
    "Q21": "5*d(p)",
    "Q22": "0",
    "R11": "0",
    "R21": "10*d(p,2) + 5*p*w",
    "R22": "0",
    "S11": "0",
    "S21": "5/2*(3*p*d(w) + 6*w*d(p) + 4*d(p,3))",
    "S22": "0",
    "T11": "0",
    "T21": "5/2*p*(2*w^2 + 2*zt + 3*d(w,2)) + 15*w*d(p,2) + 15*d(p)*d(w) + 5*d(p,4)",
    "T22": "0",
}

# the '12' entries of R, S, T repeat those of W, X, Z unless overridden
SHARED_ENTRIES = {"R12": "W12", "S12": "X12", "T12": "Z12"}

A_MATRICES = (("V", 3), ("W", 2), ("X", 1), ("Z", 0))
B_MATRICES = (("Q", 3), ("R", 2), ("S", 1), ("T", 0))
MATRIX_NAMES = tuple(name for name, _ in A_MATRICES + B_MATRICES)
ENTRY_SUFFIXES = ("11", "12", "21", "22")

# negative controls used by `verify --perturb NAME`
DEFAULT_PERTURBATIONS = {
    "V12": "-4*d(p)",
    "Z12": "0",
}

###############################################################################
# Exceptions
###############################################################################


class ScopeError(ValueError):
    pass


###############################################################################
# Dataclasses
###############################################################################


class LaxTriple(NamedTuple):
    L: MatrixOperator
    A_plus: MatrixOperator
    B_plus: MatrixOperator
    flow_rhs_plus: DiffPoly

    @property
    def A_minus(self) -> MatrixOperator:
        return conj_transform(self.A_plus)

    @property
    def B_minus(self) -> MatrixOperator:
        return conj_transform(self.B_plus)

    @property
    def flow_rhs_minus(self) -> DiffPoly:
        return self.flow_rhs_plus.conj()

    def matrix(self, name: str) -> Mat2:
        """One of V W X Z (from A_plus) or Q R S T (from B_plus)"""
        for names, op in ((A_MATRICES, self.A_plus), (B_MATRICES, self.B_plus)):
            for matrix_name, power in names:
                if matrix_name == name:
                    return op.coefficient(power, 0)
        raise KeyError(f"unknown matrix {name!r}; choices: {MATRIX_NAMES}")

    def entry(self, name: str) -> DiffPoly:
        """Scalar entry such as 'V12'"""
        return self.matrix(name[0]).entry(int(name[1]), int(name[2]))


@dataclasses.dataclass
class CheckResult:
    name: str
    residual: Union[DiffPoly, MatrixOperator]
    elapsed: datetime.timedelta = datetime.timedelta()

    @property
    def term_count(self) -> int:
        if isinstance(self.residual, MatrixOperator):
            return self.residual.term_count()
        return len(self.residual)

    @property
    def is_zero(self) -> bool:
        return self.term_count == 0

    @property
    def status(self) -> str:
        return "ZERO" if self.is_zero else "NONZERO"


###############################################################################
# Core functions
###############################################################################


def flow_rhs_symbolic(n: int) -> DiffPoly:
    """Normalized (+) part of dp/dt_n"""
    if n not in FLOW_DEFINITIONS:
        raise ScopeError(f"flow n={n} is not in scope: only n = 1, 2 are implemented")
    return diffop_algebra.parse_poly(FLOW_DEFINITIONS[n])


def flux_bracket(n: int, form: str = "direct", triple: Optional[LaxTriple] = None) -> DiffPoly:
    """The F with 2 p dp/dt+ = d(F)"""
    if n not in FLUX_DEFINITIONS:
        raise ScopeError(f"flux n={n} is not in scope: only n = 1, 2 are implemented")
    if form == "direct":
        return diffop_algebra.parse_poly(FLUX_DEFINITIONS[n])
    if form != "simpler":
        raise ValueError(f"form must be 'direct' or 'simpler' - got: {form!r}")
    if n != 2:
        raise ScopeError(f"the simpler flux form only exists for n=2, got n={n}")
    triple = triple or build_triple_n2()
    p = diffop_algebra.gen("p")
    bracket = (p * p).d(4)
    for name, power in A_MATRICES:
        bracket = bracket + triple.entry(f"{name}12") * p.d(power)
    return bracket


def resolve_entries(overrides: Optional[Mapping[str, Union[str, DiffPoly]]] = None) -> Dict[str, DiffPoly]:
    """All 32 matrix entries plus 'flow2', with overrides applied"""
    overrides = dict(overrides or {})
    texts: Dict[str, Union[str, DiffPoly]] = dict(ENTRY_DEFINITIONS)
    texts["flow2"] = FLOW_DEFINITIONS[2]
    for name, value in overrides.items():
        if name not in texts and name not in SHARED_ENTRIES:
            raise KeyError(f"unknown operator entry {name!r}")
        texts[name] = value

    def as_poly(value) -> DiffPoly:
        if isinstance(value, DiffPoly):
            return normalize(value)
        return diffop_algebra.parse_poly(value)

    entries = {name: as_poly(value) for name, value in texts.items()}
    for shared, source in SHARED_ENTRIES.items():
        entries[shared] = as_poly(texts[shared]) if shared in texts else entries[source]
    return entries


def build_triple_n2(overrides: Optional[Mapping[str, Union[str, DiffPoly]]] = None) -> LaxTriple:
    """L, A2+, B2+ and dp/dt2+; overrides replace entries by name ('V12', 'flow2', ...)"""
    entries = resolve_entries(overrides)

    def matrix(name: str) -> Mat2:
        return Mat2(*(entries[f"{name}{suffix}"] for suffix in ENTRY_SUFFIXES))

    A_plus = MatrixOperator.d(5)
    for name, power in A_MATRICES:
        A_plus = A_plus + MatrixOperator.from_matrix(matrix(name), power, 0)
    B_plus = MatrixOperator()
    for name, power in B_MATRICES:
        B_plus = B_plus + MatrixOperator.from_matrix(matrix(name), power, 0)
    return LaxTriple(
        L=diffop_algebra.dirac_operator(),
        A_plus=A_plus,
        B_plus=B_plus,
        flow_rhs_plus=entries["flow2"],
    )


def time_derivative_of_L(pdot: DiffPoly) -> MatrixOperator:
    """dL/dt for L = [[d, -p], [p, dbar]]: only the potential moves"""
    return MatrixOperator.from_matrix(Mat2(DiffPoly(), -pdot, pdot, DiffPoly()))


def check_compatibility(part: str = "plus", triple: Optional[LaxTriple] = None) -> MatrixOperator:
    """dL/dt - [A, L] + B o L, normalized; zero for a consistent triple

    The B-term sign is the one satisfied by the printed Q, R, S, T.
    """
    triple = triple or build_triple_n2()
    if part == "plus":
        A, B, pdot = triple.A_plus, triple.B_plus, triple.flow_rhs_plus
    elif part == "minus":
        A, B, pdot = triple.A_minus, triple.B_minus, triple.flow_rhs_minus
    else:
        raise ValueError(f"part must be 'plus' or 'minus' - got: {part!r}")
    L = triple.L
    residual = time_derivative_of_L(pdot) - commutator(A, L) + compose(B, L)
    return normalize(residual)


def check_telescoping(triple: Optional[LaxTriple] = None) -> List[DiffPoly]:
    """The five 12/21 component identities whose sum telescopes into a total d-derivative"""
    triple = triple or build_triple_n2()
    p = diffop_algebra.gen("p")
    e = triple.entry
    residuals = [
        5 * p.d() + e("V12"),
        10 * p.d(2) + e("V12").d() - p * e("V22") + e("W12"),
        10 * p.d(3) + e("W12").d() - p * e("W22") + e("X12"),
        5 * p.d(4) + e("X12").d() - p * e("X22") + e("Z12"),
        2 * p.d(5)
        + e("Z12").d()
        + e("V22") * p.d(3)
        + e("W22") * p.d(2)
        + e("X22") * p.d()
        - 2 * triple.flow_rhs_plus,
    ]
    return [normalize(r) for r in residuals]


def check_flux(n: int, form: str = "direct", triple: Optional[LaxTriple] = None) -> DiffPoly:
    """2 p dp/dt+ - d(F) for the requested first-integral bracket F"""
    if n not in FLOW_DEFINITIONS:
        raise ScopeError(f"flux n={n} is not in scope: only n = 1, 2 are implemented")
    if n == 2 and triple is not None:
        rhs = triple.flow_rhs_plus
    else:
        rhs = flow_rhs_symbolic(n)
    p = diffop_algebra.gen("p")
    bracket = flux_bracket(n, form, triple)
    return normalize(2 * p * rhs - bracket.d())


def check_flux_agreement(triple: Optional[LaxTriple] = None) -> DiffPoly:
    """Difference of the two n=2 brackets after substituting the matrices"""
    return normalize(flux_bracket(2, "direct") - flux_bracket(2, "simpler", triple))


def iter_checks(triple: Optional[LaxTriple] = None) -> List[tuple]:
    """(name, thunk) pairs for every identity, in table order"""
    triple = triple or build_triple_n2()
    checks: List[tuple] = [
        ("compatibility plus", lambda: check_compatibility("plus", triple)),
        ("compatibility minus", lambda: check_compatibility("minus", triple)),
    ]
    telescoping_cache: Dict[str, List[DiffPoly]] = {}

    def telescoping(i: int) -> Callable[[], DiffPoly]:
        def run():
            if "residuals" not in telescoping_cache:
                telescoping_cache["residuals"] = check_telescoping(triple)
            return telescoping_cache["residuals"][i]

        return run

    for i in range(5):
        checks.append((f"telescoping eq {i + 1}", telescoping(i)))
    checks += [
        ("flux n=1", lambda: check_flux(1)),
        ("flux n=2 direct", lambda: check_flux(2, "direct", triple)),
        ("flux n=2 simpler", lambda: check_flux(2, "simpler", triple)),
        ("flux n=2 agreement", lambda: check_flux_agreement(triple)),
    ]
    return checks


def run_checks(triple: Optional[LaxTriple] = None, progress: Callable = iter) -> List[CheckResult]:
    results = []
    for name, thunk in progress(iter_checks(triple)):
        with mvn_utils.Stopwatch() as watch:
            residual = thunk()
        result = CheckResult(name=name, residual=residual, elapsed=watch.elapsed)
        logger.info("%s: %s terms in %s", name, result.term_count, result.elapsed)
        results.append(result)
    logger.debug("rewrite cache: %s", diffop_algebra.rewrite_cache_info())
    return results


def overrides_from_definitions(definitions: Mapping[str, diffop_algebra.Value]) -> Dict[str, DiffPoly]:
    """Turn parsed `name = expr` definitions into entry overrides

    Accepts whole matrices (V W X Z Q R S T), single entries (V12, ...) and 'flow2'.
    """
    overrides: Dict[str, DiffPoly] = {}
    for name, value in definitions.items():
        if name in MATRIX_NAMES:
            if isinstance(value, DiffPoly):
                raise diffop_algebra.OperatorTypeError(f"{name} must be a matrix, got a scalar")
            if value.order() != (0, 0):
                raise diffop_algebra.OperatorTypeError(f"{name} must be a plain matrix, not an operator")
            mat = value.coefficient(0, 0)
            for suffix, entry in zip(ENTRY_SUFFIXES, mat):
                overrides[f"{name}{suffix}"] = entry
        else:
            if not isinstance(value, DiffPoly):
                raise diffop_algebra.OperatorTypeError(f"{name} must be a scalar, got an operator")
            overrides[name] = value
    return overrides


def _emit_header(value: diffop_algebra.Value) -> str:
    gens = sorted({sym.name for sym in diffop_algebra.iter_symbols(value)})
    lines = [f"# generators: {', '.join(gens) or 'none'}"]
    if isinstance(value, diffop_algebra.MatrixOperator):
        a, b = value.order()
        lines.append(f"# order: d^{a} dbar^{b}")
    return "".join(line + "\n" for line in lines)


def emit_operators(out_dir: str, triple: Optional[LaxTriple] = None) -> List[str]:
    """Write every operator and flow in the canonical grammar, one file each"""
    triple = triple or build_triple_n2()
    os.makedirs(out_dir, exist_ok=True)
    records = {
        "L": triple.L,
        "A2_plus": triple.A_plus,
        "B2_plus": triple.B_plus,
        "A2_minus": triple.A_minus,
        "B2_minus": triple.B_minus,
        "flow1_plus": flow_rhs_symbolic(1),
        "flow2_plus": triple.flow_rhs_plus,
        "flow2_minus": triple.flow_rhs_minus,
        "flux1": flux_bracket(1),
        "flux2_direct": flux_bracket(2, "direct"),
        "flux2_simpler": flux_bracket(2, "simpler", triple),
    }
    written = []
    for name, value in records.items():
        path = os.path.join(out_dir, f"{name}.txt")
        with open(path, "w", encoding="utf8") as f:
            f.write(_emit_header(value))
            f.write(f"{name} = {value}\n")
        written.append(path)
    logger.info("wrote %d operator dumps to %s", len(written), out_dir)
    return written
