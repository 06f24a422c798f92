"""Exact calculus of differential polynomials and 2x2 matrix differential operators

The ring is generated by formal derivatives d^a dbar^b of

    p   (real potential)
    w   with dbar w  = d(p^2)
    zt  with dbar zt = d(p^2 w - (d p)^2)
    wb, ztb  the complex conjugates of w, zt

Coefficients are exact rationals.  A polynomial is in normal form when no
dbar acts on w, zt and no d acts on wb, ztb; the four constraints above are
used as rewrite rules to get there.  Polynomials produced by differentiation,
composition and parsing are always normalized.

Text syntax (shared by the parser and the printer):

    generators  p w zt wb ztb
    derivatives d(expr[,k])  db(expr[,k])
    operators   D^k  Db^k  and matrices [[e11,e12],[e21,e22]]
    arithmetic  + - * / ^ and parentheses; / only by a nonzero constant
"""

import functools
import inspect
import logging
import math
import os
import re
import sys

from fractions import Fraction
from typing import Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Tuple, Union

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)

if THIS_DIR not in sys.path:
    sys.path.append(THIS_DIR)

import numpy as np

import spectral_field

from spectral_field import ComplexField, Field

logger = logging.getLogger(__name__)

###############################################################################
# Constants
###############################################################################

GENERATORS = ("p", "w", "zt", "wb", "ztb")
P, W, ZT, WB, ZTB = range(len(GENERATORS))
GENERATOR_INDEX = {name: i for i, name in enumerate(GENERATORS)}
CONJUGATE_GENERATOR = {P: P, W: WB, ZT: ZTB, WB: W, ZTB: ZT}
HOLOMORPHIC_NONLOCAL = (W, ZT)
ANTIHOLOMORPHIC_NONLOCAL = (WB, ZTB)

STRATEGIES = ("dbar-first", "d-first")
DEFAULT_STRATEGY = STRATEGIES[0]

Number = Union[int, Fraction]

###############################################################################
# Exceptions
###############################################################################


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"syntax error at offset {offset}: {message}")
        self.offset = offset
        self.detail = message


class OperatorTypeError(TypeError):
    pass


class UnboundGeneratorError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unbound generator"


###############################################################################
# Symbols and polynomials
###############################################################################


class DerivSymbol(NamedTuple):
    """d^a dbar^b applied to a generator; tuple order is the monomial order"""

    gen: int
    a: int = 0
    b: int = 0

    @property
    def name(self) -> str:
        return GENERATORS[self.gen]

    def is_canonical(self) -> bool:
        if self.gen in HOLOMORPHIC_NONLOCAL:
            return self.b == 0
        if self.gen in ANTIHOLOMORPHIC_NONLOCAL:
            return self.a == 0
        return True

    def conj(self) -> "DerivSymbol":
        return DerivSymbol(CONJUGATE_GENERATOR[self.gen], self.b, self.a)

    def __str__(self):
        text = self.name
        if self.b:
            text = f"db({text})" if self.b == 1 else f"db({text},{self.b})"
        if self.a:
            text = f"d({text})" if self.a == 1 else f"d({text},{self.a})"
        return text


Factors = Tuple[DerivSymbol, ...]


class Monomial(NamedTuple):
    coeff: Fraction
    factors: Factors

    def __str__(self):
        return _format_term(self.coeff, self.factors)


def _format_factors(factors: Factors) -> str:
    parts = []
    i = 0
    while i < len(factors):
        j = i
        while j < len(factors) and factors[j] == factors[i]:
            j += 1
        power = j - i
        parts.append(str(factors[i]) if power == 1 else f"{factors[i]}^{power}")
        i = j
    return "*".join(parts)


def _format_term(coeff: Fraction, factors: Factors) -> str:
    if not factors:
        return str(coeff)
    body = _format_factors(factors)
    if coeff == 1:
        return body
    if coeff == -1:
        return f"-{body}"
    return f"{coeff}*{body}"


class DiffPoly:
    """Rational linear combination of monomials, keyed by sorted factor tuples"""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Optional[Mapping[Factors, Number]] = None):
        clean: Dict[Factors, Fraction] = {}
        if terms:
            for factors, coeff in terms.items():
                coeff = Fraction(coeff)
                if coeff:
                    key = tuple(sorted(factors))
                    total = clean.get(key, 0) + coeff
                    if total:
                        clean[key] = total
                    else:
                        clean.pop(key, None)
        self._terms = clean
        self._hash = None

    # constructors ----------------------------------------------------------

    @classmethod
    def _from_clean(cls, terms: Dict[Factors, Fraction]) -> "DiffPoly":
        poly = cls.__new__(cls)
        poly._terms = terms
        poly._hash = None
        return poly

    @classmethod
    def const(cls, value: Number) -> "DiffPoly":
        return cls({(): value})

    @classmethod
    def symbol(cls, gen: Union[int, str], a: int = 0, b: int = 0) -> "DiffPoly":
        """The raw (possibly non-canonical) single-symbol polynomial"""
        if isinstance(gen, str):
            gen = GENERATOR_INDEX[gen]
        return cls({(DerivSymbol(gen, a, b),): 1})

    @classmethod
    def coerce(cls, value: Union["DiffPoly", Number]) -> "DiffPoly":
        if isinstance(value, DiffPoly):
            return value
        if isinstance(value, (int, Fraction)):
            return cls.const(value)
        raise OperatorTypeError(f"cannot use {type(value).__name__} as a differential polynomial")

    # inspection ------------------------------------------------------------

    @property
    def terms(self) -> Mapping[Factors, Fraction]:
        return dict(self._terms)

    @property
    def monomials(self) -> List[Monomial]:
        return [Monomial(self._terms[k], k) for k in sorted(self._terms)]

    def __len__(self):
        return len(self._terms)

    def __bool__(self):
        return bool(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(not k for k in self._terms)

    def constant_value(self) -> Fraction:
        return self._terms.get((), Fraction(0))

    def coefficient(self, *factors: DerivSymbol) -> Fraction:
        return self._terms.get(tuple(sorted(factors)), Fraction(0))

    def symbols(self) -> set:
        return {s for k in self._terms for s in k}

    def is_normalized(self) -> bool:
        return all(s.is_canonical() for s in self.symbols())

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        try:
            other = DiffPoly.coerce(other)
        except OperatorTypeError:
            return NotImplemented
        terms = dict(self._terms)
        for k, c in other._terms.items():
            total = terms.get(k, 0) + c
            if total:
                terms[k] = total
            else:
                terms.pop(k, None)
        return DiffPoly._from_clean(terms)

    __radd__ = __add__

    def __neg__(self):
        return DiffPoly._from_clean({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        try:
            other = DiffPoly.coerce(other)
        except OperatorTypeError:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return DiffPoly.coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            other = Fraction(other)
            if not other:
                return DiffPoly()
            return DiffPoly._from_clean({k: c * other for k, c in self._terms.items()})
        if not isinstance(other, DiffPoly):
            return NotImplemented
        terms: Dict[Factors, Fraction] = {}
        for k1, c1 in self._terms.items():
            for k2, c2 in other._terms.items():
                key = tuple(sorted(k1 + k2))
                total = terms.get(key, 0) + c1 * c2
                if total:
                    terms[key] = total
                else:
                    terms.pop(key, None)
        return DiffPoly._from_clean(terms)

    __rmul__ = __mul__

    def __pow__(self, power: int):
        if not isinstance(power, int) or power < 0:
            raise ValueError(f"powers must be non-negative integers - got: {power!r}")
        result = DiffPoly.const(1)
        for _ in range(power):
            result = result * self
        return result

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = DiffPoly.const(other)
        if not isinstance(other, DiffPoly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    # calculus ----------------------------------------------------------------

    def d(self, order: int = 1, strategy: str = DEFAULT_STRATEGY) -> "DiffPoly":
        result = self
        for _ in range(order):
            result = _differentiate(result, "dz", strategy)
        return result

    def db(self, order: int = 1, strategy: str = DEFAULT_STRATEGY) -> "DiffPoly":
        result = self
        for _ in range(order):
            result = _differentiate(result, "dzbar", strategy)
        return result

    def conj(self) -> "DiffPoly":
        """Formal complex conjugation: d <-> dbar, w <-> wb, zt <-> ztb, p fixed"""
        return DiffPoly._from_clean(
            {tuple(sorted(s.conj() for s in k)): c for k, c in self._terms.items()}
        )

    # printing ----------------------------------------------------------------

    def __str__(self):
        if not self._terms:
            return "0"
        text = ""
        for i, mono in enumerate(self.monomials):
            term = str(mono)
            if i == 0:
                text = term
            elif term.startswith("-"):
                text += f" - {term[1:]}"
            else:
                text += f" + {term}"
        return text

    def __repr__(self):
        return f"DiffPoly({str(self)!r})"


def gen(name: str) -> DiffPoly:
    return DiffPoly.symbol(name)


###############################################################################
# Rewrite rules
###############################################################################


@functools.lru_cache(maxsize=None)
def _rule_image(gen_index: int) -> DiffPoly:
    """Normalized image of dbar w, dbar zt, d wb, d ztb"""
    p = DiffPoly.symbol(P)
    dp = DiffPoly.symbol(P, 1, 0)
    ddp = DiffPoly.symbol(P, 2, 0)
    w = DiffPoly.symbol(W)
    dw = DiffPoly.symbol(W, 1, 0)
    if gen_index == W:
        return 2 * p * dp
    if gen_index == ZT:
        return 2 * p * w * dp + p * p * dw - 2 * dp * ddp
    if gen_index in (WB, ZTB):
        return _rule_image(CONJUGATE_GENERATOR[gen_index]).conj()
    raise ValueError(f"no rewrite rule for generator {GENERATORS[gen_index]!r}")


@functools.lru_cache(maxsize=None)
def canonical_symbol(sym: DerivSymbol, strategy: str = DEFAULT_STRATEGY) -> DiffPoly:
    """Normalized polynomial equal to the single symbol sym"""
    if sym.is_canonical():
        return DiffPoly._from_clean({(sym,): Fraction(1)})
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES} - got: {strategy!r}")
    image = _rule_image(sym.gen)
    if sym.gen in HOLOMORPHIC_NONLOCAL:
        remaining_d, remaining_db = sym.a, sym.b - 1
    else:
        remaining_d, remaining_db = sym.a - 1, sym.b
    if strategy == "dbar-first":
        return image.db(remaining_db, strategy).d(remaining_d, strategy)
    return image.d(remaining_d, strategy).db(remaining_db, strategy)


@functools.lru_cache(maxsize=None)
def _differentiate_symbol(sym: DerivSymbol, direction: str, strategy: str) -> DiffPoly:
    if direction == "dz":
        raised = DerivSymbol(sym.gen, sym.a + 1, sym.b)
    else:
        raised = DerivSymbol(sym.gen, sym.a, sym.b + 1)
    return canonical_symbol(raised, strategy)


def _differentiate(poly: DiffPoly, direction: str, strategy: str) -> DiffPoly:
    """Leibniz rule over every factor of every monomial"""
    result: Dict[Factors, Fraction] = {}
    for factors, coeff in poly._terms.items():
        for i, sym in enumerate(factors):
            if i and factors[i - 1] == sym:
                # repeated factor already counted with its multiplicity
                continue
            multiplicity = factors.count(sym)
            rest = factors[:i] + factors[i + 1 :]
            if not sym.is_canonical():
                sym_poly = canonical_symbol(sym, strategy)
                derivative = _differentiate(sym_poly, direction, strategy)
            else:
                derivative = _differentiate_symbol(sym, direction, strategy)
            scale = coeff * multiplicity
            for d_factors, d_coeff in derivative._terms.items():
                key = tuple(sorted(rest + d_factors))
                total = result.get(key, 0) + scale * d_coeff
                if total:
                    result[key] = total
                else:
                    result.pop(key, None)
    return DiffPoly._from_clean(result)


def normalize(poly: Union[DiffPoly, "MatrixOperator"], strategy: str = DEFAULT_STRATEGY):
    """Rewrite every non-canonical symbol, then collect; idempotent"""
    if isinstance(poly, MatrixOperator):
        return MatrixOperator(
            {key: Mat2(*(normalize(e, strategy) for e in mat)) for key, mat in poly.terms.items()}
        )
    result: Dict[Factors, Fraction] = {}
    for factors, coeff in poly._terms.items():
        if all(s.is_canonical() for s in factors):
            expanded = DiffPoly._from_clean({factors: coeff})
        else:
            expanded = DiffPoly.const(coeff)
            for sym in factors:
                expanded = expanded * canonical_symbol(sym, strategy)
        for k, c in expanded._terms.items():
            total = result.get(k, 0) + c
            if total:
                result[k] = total
            else:
                result.pop(k, None)
    return DiffPoly._from_clean(result)


def rewrite_cache_info():
    return canonical_symbol.cache_info()


###############################################################################
# Matrix operators
###############################################################################


class Mat2(NamedTuple):
    m11: DiffPoly
    m12: DiffPoly
    m21: DiffPoly
    m22: DiffPoly

    @classmethod
    def zero(cls) -> "Mat2":
        z = DiffPoly()
        return cls(z, z, z, z)

    @classmethod
    def identity(cls) -> "Mat2":
        return cls.scalar(DiffPoly.const(1))

    @classmethod
    def scalar(cls, value: DiffPoly) -> "Mat2":
        z = DiffPoly()
        return cls(value, z, z, value)

    @classmethod
    def of(cls, m11=0, m12=0, m21=0, m22=0) -> "Mat2":
        return cls(*(DiffPoly.coerce(e) for e in (m11, m12, m21, m22)))

    def is_zero(self) -> bool:
        return not any(self)

    def entry(self, row: int, col: int) -> DiffPoly:
        return self[2 * (row - 1) + (col - 1)]

    def add(self, other: "Mat2") -> "Mat2":
        return Mat2(*(x + y for x, y in zip(self, other)))

    def scale(self, factor: Union[DiffPoly, Number]) -> "Mat2":
        return Mat2(*(factor * x for x in self))

    def matmul(self, other: "Mat2") -> "Mat2":
        a, b, c, d = self
        e, f, g, h = other
        return Mat2(a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h)

    def derivative(self, i: int, j: int) -> "Mat2":
        if not i and not j:
            return self
        return Mat2(*(x.d(i).db(j) for x in self))

    def conj_j(self) -> "Mat2":
        """J conj(M) J^-1 with J = [[0,-1],[1,0]]"""
        a, b, c, d = (x.conj() for x in self)
        return Mat2(d, -c, -b, a)

    def __str__(self):
        return f"[[{self.m11},{self.m12}],[{self.m21},{self.m22}]]"


OpKey = Tuple[int, int]


class MatrixOperator:
    """Finite sum of Mat2 coefficients times d^a dbar^b (coefficient on the left)"""

    __slots__ = ("_terms",)

    def __init__(self, terms: Optional[Mapping[OpKey, Mat2]] = None):
        clean: Dict[OpKey, Mat2] = {}
        if terms:
            for key, mat in terms.items():
                key = (int(key[0]), int(key[1]))
                mat = Mat2(*mat)
                if key in clean:
                    mat = clean[key].add(mat)
                if mat.is_zero():
                    clean.pop(key, None)
                else:
                    clean[key] = mat
        self._terms = clean

    @classmethod
    def identity(cls) -> "MatrixOperator":
        return cls({(0, 0): Mat2.identity()})

    @classmethod
    def d(cls, order: int = 1) -> "MatrixOperator":
        return cls({(order, 0): Mat2.identity()})

    @classmethod
    def db(cls, order: int = 1) -> "MatrixOperator":
        return cls({(0, order): Mat2.identity()})

    @classmethod
    def scalar(cls, value: Union[DiffPoly, Number]) -> "MatrixOperator":
        return cls({(0, 0): Mat2.scalar(DiffPoly.coerce(value))})

    @classmethod
    def from_matrix(cls, mat: Mat2, a: int = 0, b: int = 0) -> "MatrixOperator":
        return cls({(a, b): mat})

    @property
    def terms(self) -> Mapping[OpKey, Mat2]:
        return dict(self._terms)

    def coefficient(self, a: int = 0, b: int = 0) -> Mat2:
        return self._terms.get((a, b), Mat2.zero())

    def keys(self) -> List[OpKey]:
        return sorted(self._terms)

    def order(self) -> Tuple[int, int]:
        """Highest d-order and dbar-order present"""
        if not self._terms:
            return (0, 0)
        return (max(a for a, _ in self._terms), max(b for _, b in self._terms))

    def term_count(self) -> int:
        return sum(len(e) for mat in self._terms.values() for e in mat)

    def is_zero(self) -> bool:
        return not self._terms

    def __bool__(self):
        return bool(self._terms)

    def __eq__(self, other):
        if not isinstance(other, MatrixOperator):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def __add__(self, other):
        if isinstance(other, (DiffPoly, int, Fraction)):
            other = MatrixOperator.scalar(other)
        if not isinstance(other, MatrixOperator):
            return NotImplemented
        terms = dict(self._terms)
        for key, mat in other._terms.items():
            terms[key] = terms[key].add(mat) if key in terms else mat
        return MatrixOperator(terms)

    __radd__ = __add__

    def __neg__(self):
        return MatrixOperator({k: m.scale(-1) for k, m in self._terms.items()})

    def __sub__(self, other):
        if isinstance(other, (DiffPoly, int, Fraction)):
            other = MatrixOperator.scalar(other)
        if not isinstance(other, MatrixOperator):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return MatrixOperator.scalar(other) - self

    def __mul__(self, other):
        """Left multiplication of every coefficient by a scalar (not composition)"""
        if isinstance(other, (DiffPoly, int, Fraction)):
            return MatrixOperator({k: m.scale(other) for k, m in self._terms.items()})
        if isinstance(other, MatrixOperator):
            return compose(self, other)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (DiffPoly, int, Fraction)):
            return MatrixOperator({k: m.scale(other) for k, m in self._terms.items()})
        return NotImplemented

    def __matmul__(self, other):
        if not isinstance(other, MatrixOperator):
            return NotImplemented
        return compose(self, other)

    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for a, b in self.keys():
            text = str(self._terms[(a, b)])
            if a:
                text += "*D" if a == 1 else f"*D^{a}"
            if b:
                text += "*Db" if b == 1 else f"*Db^{b}"
            parts.append(text)
        return " + ".join(parts)

    def __repr__(self):
        return f"MatrixOperator({str(self)!r})"


###############################################################################
# Core functions
###############################################################################


def compose(A: MatrixOperator, B: MatrixOperator) -> MatrixOperator:
    """Operator product A o B by the generalized Leibniz rule

    (F d^a dbar^b)(G d^c dbar^d) = sum C(a,i) C(b,j) F (d^i dbar^j G) d^(a-i+c) dbar^(b-j+d)
    """
    derivative_cache: Dict[Tuple[OpKey, int, int], Mat2] = {}
    result: Dict[OpKey, Mat2] = {}
    for (a, b), F in A._terms.items():
        for (c, d), G in B._terms.items():
            for i in range(a + 1):
                for j in range(b + 1):
                    cache_key = ((c, d), i, j)
                    dG = derivative_cache.get(cache_key)
                    if dG is None:
                        dG = G.derivative(i, j)
                        derivative_cache[cache_key] = dG
                    if dG.is_zero():
                        continue
                    weight = math.comb(a, i) * math.comb(b, j)
                    term = F.matmul(dG).scale(weight)
                    key = (a - i + c, b - j + d)
                    result[key] = result[key].add(term) if key in result else term
    return MatrixOperator(result)


def commutator(A: MatrixOperator, B: MatrixOperator) -> MatrixOperator:
    return compose(A, B) - compose(B, A)


def conj_transform(A: MatrixOperator) -> MatrixOperator:
    """J conj(A) J^-1 with J = [[0,-1],[1,0]]; conjugation swaps d and dbar"""
    return MatrixOperator({(b, a): mat.conj_j() for (a, b), mat in A._terms.items()})


def dirac_operator() -> MatrixOperator:
    """L = [[d, -p], [p, dbar]]"""
    p = gen("p")
    return MatrixOperator(
        {
            (1, 0): Mat2.of(1, 0, 0, 0),
            (0, 1): Mat2.of(0, 0, 0, 1),
            (0, 0): Mat2.of(0, -p, p, 0),
        }
    )


def apply_to_poly(op: MatrixOperator, entry: Tuple[int, int], f: DiffPoly) -> DiffPoly:
    """Apply the (row, col) scalar entry of op to f"""
    row, col = entry
    result = DiffPoly()
    for (a, b), mat in op._terms.items():
        coeff = mat.entry(row, col)
        if coeff:
            result = result + coeff * f.d(a).db(b)
    return result


###############################################################################
# Grid evaluation
###############################################################################


def eval_on_grid(poly: DiffPoly, binding: Mapping[str, Field]) -> ComplexField:
    """Evaluate poly numerically; wb, ztb evaluate as conjugates of w, zt

    Derivatives are spectral and products are exact (no dealiasing).
    """
    if not binding:
        raise UnboundGeneratorError("unbound generator: no fields supplied")
    grid = next(iter(binding.values())).grid
    for name, field in binding.items():
        if field.grid != grid:
            raise spectral_field.GridError(f"grid mismatch: {name!r} is on {field.grid}, expected {grid}")
    cache: Dict[DerivSymbol, np.ndarray] = {}

    def lookup(sym: DerivSymbol) -> np.ndarray:
        if sym in cache:
            return cache[sym]
        if sym.name in binding:
            values = spectral_field.mixed_derivative(binding[sym.name], sym.a, sym.b).samples
        elif sym.gen in ANTIHOLOMORPHIC_NONLOCAL and GENERATORS[CONJUGATE_GENERATOR[sym.gen]] in binding:
            base = binding[GENERATORS[CONJUGATE_GENERATOR[sym.gen]]]
            values = np.conj(spectral_field.mixed_derivative(base, sym.b, sym.a).samples)
        else:
            raise UnboundGeneratorError(f"unbound generator {sym.name!r}")
        cache[sym] = values
        return values

    total = np.zeros(grid.shape, dtype=np.complex128)
    for factors, coeff in poly._terms.items():
        term = np.full(grid.shape, float(coeff), dtype=np.complex128)
        for sym in factors:
            term = term * lookup(sym)
        total += term
    return ComplexField(grid, total)


###############################################################################
# Parser
###############################################################################

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
    |(?P<number>\d+(?:\.\d+)?)
    |(?P<name>[A-Za-z_][A-Za-z_0-9]*)
    |(?P<op>[-+*/^(),\[\]])
    """,
    re.VERBOSE,
)


class Token(NamedTuple):
    kind: str
    text: str
    offset: int


def tokenize(text: str) -> List[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = match.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, match.group(), pos))
        pos = match.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


Value = Union[DiffPoly, MatrixOperator]


class _Parser:
    """Recursive descent over

    expr  := term (('+'|'-') term)*
    term  := unary (('*'|'/') unary)*
    unary := ('+'|'-') unary | power
    power := atom ('^' INT)?
    atom  := number | generator | d(expr[,k]) | db(expr[,k]) | D | Db | (expr) | [[e,e],[e,e]]
    """

    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.pos = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        if token.kind != "end":
            self.pos += 1
        return token

    def expect(self, text: str) -> Token:
        token = self.current
        if token.text != text or token.kind == "end":
            found = "end of input" if token.kind == "end" else repr(token.text)
            raise ParseError(f"expected {text!r}, found {found}", token.offset)
        return self.advance()

    def parse(self) -> Value:
        value = self.expr()
        if self.current.kind != "end":
            raise ParseError(f"unexpected {self.current.text!r}", self.current.offset)
        return value

    def expr(self) -> Value:
        value = self.term()
        while self.current.text in ("+", "-") and self.current.kind == "op":
            op = self.advance().text
            rhs = self.term()
            value = _add(value, rhs) if op == "+" else _add(value, _negate(rhs))
        return value

    def term(self) -> Value:
        value = self.unary()
        while self.current.text in ("*", "/") and self.current.kind == "op":
            op_token = self.advance()
            rhs = self.unary()
            if op_token.text == "*":
                value = _multiply(value, rhs)
            else:
                if not isinstance(rhs, DiffPoly) or not rhs.is_constant() or not rhs:
                    raise ParseError("division is only allowed by a nonzero constant", op_token.offset)
                value = _multiply(value, DiffPoly.const(1 / rhs.constant_value()))
        return value

    def unary(self) -> Value:
        if self.current.kind == "op" and self.current.text in ("+", "-"):
            op = self.advance().text
            value = self.unary()
            return _negate(value) if op == "-" else value
        return self.power()

    def power(self) -> Value:
        value = self.atom()
        if self.current.kind == "op" and self.current.text == "^":
            self.advance()
            exponent = self.integer()
            if isinstance(value, MatrixOperator):
                result = MatrixOperator.identity()
                for _ in range(exponent):
                    result = compose(result, value)
                return result
            return value**exponent
        return value

    def integer(self) -> int:
        token = self.current
        if token.kind != "number" or "." in token.text:
            found = "end of input" if token.kind == "end" else repr(token.text)
            raise ParseError(f"expected a non-negative integer, found {found}", token.offset)
        self.advance()
        return int(token.text)

    def atom(self) -> Value:
        token = self.current
        if token.kind == "number":
            self.advance()
            return DiffPoly.const(Fraction(token.text))
        if token.kind == "name":
            self.advance()
            if token.text in GENERATOR_INDEX:
                return DiffPoly.symbol(token.text)
            if token.text in ("d", "db"):
                return self.derivative(token)
            if token.text == "D":
                return MatrixOperator.d()
            if token.text == "Db":
                return MatrixOperator.db()
            raise ParseError(f"unknown name {token.text!r}", token.offset)
        if token.kind == "op" and token.text == "(":
            self.advance()
            value = self.expr()
            self.expect(")")
            return value
        if token.kind == "op" and token.text == "[":
            return self.matrix()
        found = "end of input" if token.kind == "end" else repr(token.text)
        raise ParseError(f"expected an operand, found {found}", token.offset)

    def derivative(self, name_token: Token) -> DiffPoly:
        self.expect("(")
        inner_offset = self.current.offset
        inner = self.expr()
        order = 1
        if self.current.kind == "op" and self.current.text == ",":
            self.advance()
            order = self.integer()
        self.expect(")")
        if not isinstance(inner, DiffPoly):
            raise OperatorTypeError(f"{name_token.text}() at offset {inner_offset} needs a scalar, got an operator")
        inner = normalize(inner)
        return inner.d(order) if name_token.text == "d" else inner.db(order)

    def matrix(self) -> MatrixOperator:
        self.expect("[")
        rows = []
        for row in range(2):
            if row:
                self.expect(",")
            self.expect("[")
            entries = []
            for col in range(2):
                if col:
                    self.expect(",")
                offset = self.current.offset
                entry = self.expr()
                if not isinstance(entry, DiffPoly):
                    raise OperatorTypeError(f"matrix entry at offset {offset} must be a scalar, got an operator")
                entries.append(entry)
            self.expect("]")
            rows.extend(entries)
        self.expect("]")
        return MatrixOperator.from_matrix(Mat2(*rows))


def _negate(value: Value) -> Value:
    return -value


def _add(lhs: Value, rhs: Value) -> Value:
    if isinstance(lhs, MatrixOperator) or isinstance(rhs, MatrixOperator):
        return _as_operator(lhs) + _as_operator(rhs)
    return lhs + rhs


def _multiply(lhs: Value, rhs: Value) -> Value:
    if isinstance(lhs, MatrixOperator) or isinstance(rhs, MatrixOperator):
        return compose(_as_operator(lhs), _as_operator(rhs))
    return lhs * rhs


def _as_operator(value: Value) -> MatrixOperator:
    if isinstance(value, MatrixOperator):
        return value
    return MatrixOperator.scalar(value)


def parse(text: str) -> Value:
    """Parse and normalize a polynomial or matrix operator"""
    return normalize(_Parser(text).parse())


def parse_poly(text: str) -> DiffPoly:
    value = parse(text)
    if not isinstance(value, DiffPoly):
        raise OperatorTypeError(f"expected a scalar polynomial, got an operator: {text!r}")
    return value


def parse_operator(text: str) -> MatrixOperator:
    value = parse(text)
    if isinstance(value, DiffPoly):
        return MatrixOperator.scalar(value)
    return value


def parse_definitions(lines: Iterable[str]) -> Dict[str, Value]:
    """Parse `name = expr` lines; '#' starts a comment, blank lines are skipped"""
    definitions: Dict[str, Value] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, expr = line.partition("=")
        name = name.strip()
        if not sep or not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name):
            raise ParseError(f"line {lineno}: expected 'name = expr'", 0)
        try:
            definitions[name] = parse(expr)
        except ParseError as err:
            raise ParseError(f"line {lineno}: {err.detail}", err.offset) from err
    return definitions


def iter_symbols(value: Value) -> Iterator[DerivSymbol]:
    if isinstance(value, DiffPoly):
        yield from value.symbols()
        return
    for mat in value.terms.values():
        for entry in mat:
            yield from entry.symbols()
