"""Tests for the exact differential-polynomial and matrix-operator algebra"""

import random

from fractions import Fraction

import numpy as np
import pytest

from conftest import band_limited

import diffop_algebra
import mvn_flow
import spectral_field

from diffop_algebra import (
    P,
    W,
    ZT,
    DerivSymbol,
    DiffPoly,
    Mat2,
    MatrixOperator,
    commutator,
    compose,
    conj_transform,
    gen,
    normalize,
    parse,
    parse_operator,
    parse_poly,
)

p = gen("p")
w = gen("w")
zt = gen("zt")


def random_poly(rng: random.Random, max_terms=4, max_order=2, gens=("p", "w", "zt", "wb", "ztb")) -> DiffPoly:
    """Random raw polynomial, including non-canonical mixed derivatives"""
    poly = DiffPoly()
    for _ in range(rng.randint(1, max_terms)):
        term = DiffPoly.const(Fraction(rng.randint(-5, 5), rng.randint(1, 3)))
        for _ in range(rng.randint(0, 2)):
            term = term * DiffPoly.symbol(rng.choice(gens), rng.randint(0, max_order), rng.randint(0, max_order))
        poly = poly + term
    return poly


def random_operator(rng: random.Random) -> MatrixOperator:
    terms = {}
    for _ in range(rng.randint(1, 2)):
        key = (rng.randint(0, 1), rng.randint(0, 1))
        terms[key] = Mat2(*(normalize(random_poly(rng, 2, 1, ("p", "w"))) for _ in range(4)))
    return MatrixOperator(terms)


class TestDiffPoly:
    def test_zero_is_empty(self):
        assert DiffPoly().is_zero()
        assert str(DiffPoly()) == "0"
        assert (p - p).is_zero()

    def test_factor_order(self):
        assert DerivSymbol(P, 3, 0) < DerivSymbol(W, 0, 0) < DerivSymbol(ZT, 0, 0)
        assert (w * p).monomials[0].factors == (DerivSymbol(P), DerivSymbol(W))

    def test_rational_coefficients_stay_exact(self):
        poly = Fraction(3, 2) * p * w * Fraction(5, 3)
        assert poly.coefficient(DerivSymbol(P), DerivSymbol(W)) == Fraction(5, 2)

    def test_power(self):
        assert (p + 1) ** 2 == p * p + 2 * p + 1

    def test_conj_swaps_generators(self):
        poly = parse_poly("p*d(w) + 2*zt")
        assert poly.conj() == parse_poly("p*db(wb) + 2*ztb")
        assert poly.conj().conj() == poly

    def test_printing_is_canonical(self):
        assert str(parse_poly("3/2*p*d(w) + d(p,3) + 3*w*d(p)")) == "3/2*p*d(w) + 3*d(p)*w + d(p,3)"
        assert str(parse_poly("p^2 - 2*p*w")) == "p^2 - 2*p*w"


class TestNormalize:
    def test_dbar_w(self):
        assert parse_poly("db(w)") == 2 * p * p.d()

    def test_dbar_squared_w(self):
        expected = 2 * p.db() * p.d() + 2 * p * DiffPoly.symbol("p", 1, 1)
        assert normalize(DiffPoly.symbol("w", 0, 2)) == expected

    def test_dbar_zt(self):
        expected = 2 * p * w * p.d() + p * p * w.d() - 2 * p.d() * p.d(2)
        assert normalize(DiffPoly.symbol("zt", 0, 1)) == expected

    def test_conjugate_rules(self):
        assert normalize(DiffPoly.symbol("wb", 1, 0)) == 2 * p * p.db()
        assert normalize(DiffPoly.symbol("ztb", 1, 0)) == normalize(DiffPoly.symbol("zt", 0, 1)).conj()

    def test_result_is_canonical(self):
        rng = random.Random(3)
        for _ in range(20):
            assert normalize(random_poly(rng)).is_normalized()

    def test_idempotent(self):
        rng = random.Random(5)
        for _ in range(20):
            once = normalize(random_poly(rng))
            assert normalize(once) == once

    @pytest.mark.parametrize("name", ["w", "zt", "wb", "ztb"])
    @pytest.mark.parametrize("a,b", [(0, 1), (1, 2), (2, 3), (3, 1), (0, 3)])
    def test_strategies_agree(self, name, a, b):
        if name in ("wb", "ztb"):
            a, b = b, a
        sym = DerivSymbol(diffop_algebra.GENERATOR_INDEX[name], a, b)
        assert diffop_algebra.canonical_symbol(sym, "dbar-first") == diffop_algebra.canonical_symbol(sym, "d-first")

    def test_derivatives_commute(self):
        rng = random.Random(11)
        for _ in range(10):
            poly = normalize(random_poly(rng))
            assert poly.d().db() == poly.db().d()


class TestCompose:
    def test_keys_are_plain_int_pairs(self):
        op = MatrixOperator({(np.int64(1), np.int64(0)): Mat2.scalar(p), (0, 0): Mat2.zero()})
        assert op.keys() == [(1, 0)]
        assert all(type(i) is int for i in op.keys()[0])
        assert op == MatrixOperator.scalar(p) * MatrixOperator.d()

    def test_leibniz_first_order(self):
        result = compose(MatrixOperator.d(), MatrixOperator.scalar(p))
        assert result == MatrixOperator.scalar(p) * MatrixOperator.d() + MatrixOperator.scalar(p.d())

    def test_leibniz_second_order(self):
        f = p * w
        result = compose(MatrixOperator.d(2), MatrixOperator.scalar(f))
        expected = MatrixOperator(
            {
                (2, 0): Mat2.scalar(f),
                (1, 0): Mat2.scalar(2 * f.d()),
                (0, 0): Mat2.scalar(f.d(2)),
            }
        )
        assert result == expected

    def test_dbar_w_commutator(self):
        assert commutator(MatrixOperator.db(), MatrixOperator.scalar(w)) == MatrixOperator.scalar(2 * p * p.d())

    def test_partials_commute(self):
        assert commutator(MatrixOperator.d(), MatrixOperator.db()).is_zero()

    def test_associative(self):
        rng = random.Random(7)
        for _ in range(5):
            A, B, C = (random_operator(rng) for _ in range(3))
            assert compose(compose(A, B), C) == compose(A, compose(B, C))

    def test_commutator_antisymmetric_and_jacobi(self):
        rng = random.Random(9)
        A, B, C = (random_operator(rng) for _ in range(3))
        assert commutator(A, B) == -commutator(B, A)
        jacobi = (
            commutator(A, commutator(B, C)) + commutator(B, commutator(C, A)) + commutator(C, commutator(A, B))
        )
        assert jacobi.is_zero()

    def test_leibniz_matches_direct_differentiation(self):
        rng = random.Random(13)
        f = normalize(random_poly(rng, gens=("p", "w")))
        g = normalize(random_poly(rng, gens=("p", "w")))
        op = compose(MatrixOperator.d(3), MatrixOperator.scalar(f))
        assert diffop_algebra.apply_to_poly(op, (1, 1), g) == (f * g).d(3)


class TestConjTransform:
    def test_involution(self):
        rng = random.Random(17)
        A = random_operator(rng)
        assert conj_transform(conj_transform(A)) == A

    def test_dirac_operator_is_fixed(self):
        L = diffop_algebra.dirac_operator()
        assert conj_transform(L) == L

    def test_swaps_d_and_dbar(self):
        assert conj_transform(MatrixOperator.d(5)) == MatrixOperator.db(5)


class TestParse:
    def test_first_flow(self):
        poly = parse("d(p,3) + 3*w*d(p) + 3/2*p*d(w)")
        assert isinstance(poly, DiffPoly)
        assert poly.coefficient(DerivSymbol(P), DerivSymbol(W, 1)) == Fraction(3, 2)

    def test_operator(self):
        op = parse_operator("D^2 + [[0,-p],[p,0]]*Db")
        assert op.coefficient(2, 0) == Mat2.identity()
        assert op.coefficient(0, 1) == Mat2.of(0, -p, p, 0)

    def test_order_and_symbols(self):
        op = parse_operator("D^2 + [[0,-p],[p,0]]*Db")
        assert op.order() == (2, 1)
        assert MatrixOperator.scalar(p).order() == (0, 0)
        assert {sym.name for sym in diffop_algebra.iter_symbols(op)} == {"p"}
        assert set(diffop_algebra.iter_symbols(parse("w*d(p)"))) == {DerivSymbol(W), DerivSymbol(P, 1)}

    def test_scalar_times_operator(self):
        assert parse_operator("p*D") == MatrixOperator.scalar(p) * MatrixOperator.d()

    def test_printed_forms_reparse(self):
        rng = random.Random(19)
        for _ in range(10):
            poly = normalize(random_poly(rng))
            assert parse_poly(str(poly)) == poly
        L = diffop_algebra.dirac_operator()
        assert parse_operator(str(L)) == L

    def test_syntax_error_offset(self):
        with pytest.raises(diffop_algebra.ParseError, match="syntax error at offset 3") as excinfo:
            parse("d(p")
        assert excinfo.value.offset == 3

    @pytest.mark.parametrize("text", ["p +", "2*/p", "q", "d(p,-1)", "[[p,0],[0]]"])
    def test_malformed(self, text):
        with pytest.raises(diffop_algebra.ParseError):
            parse(text)

    def test_division_by_constant_only(self):
        assert parse_poly("p/2") == Fraction(1, 2) * p
        with pytest.raises(diffop_algebra.ParseError, match="nonzero constant"):
            parse("p/w")

    def test_matrix_in_scalar_slot(self):
        with pytest.raises(diffop_algebra.OperatorTypeError):
            parse("d(D)")
        with pytest.raises(diffop_algebra.OperatorTypeError):
            parse_poly("[[p,0],[0,p]]")

    def test_definitions(self):
        definitions = diffop_algebra.parse_definitions(["# comment", "", "V12 = -4*d(p)  # perturbed", "Z = [[0,0],[0,0]]"])
        assert definitions["V12"] == -4 * p.d()
        assert isinstance(definitions["Z"], MatrixOperator)
        with pytest.raises(diffop_algebra.ParseError, match="line 1"):
            diffop_algebra.parse_definitions(["V12 -4"])


class TestEvalOnGrid:
    def test_square(self, grid64):
        x, _ = grid64.coords()
        field = diffop_algebra.eval_on_grid(p * p, {"p": spectral_field.RealField(grid64, np.cos(x))})
        np.testing.assert_allclose(field.samples, np.cos(x) ** 2, atol=1e-14)

    def test_rewrite_rule_holds_numerically(self, grid64):
        field = band_limited(grid64, seed=2)
        binding = {"p": field, "w": mvn_flow.compute_omega(field)}
        lhs = diffop_algebra.eval_on_grid(DiffPoly.symbol("w", 0, 1), binding)
        rhs = diffop_algebra.eval_on_grid(2 * p * p.d(), binding)
        assert np.max(np.abs((lhs - rhs).samples)) <= 1e-10 * rhs.max_abs()

    def test_ring_homomorphism(self, grid64):
        field = band_limited(grid64, seed=3)
        binding = {"p": field, "w": mvn_flow.compute_omega(field)}
        q = parse_poly("p*d(w) + w^2")
        r = parse_poly("d(p,2) - p*wb")
        eq = diffop_algebra.eval_on_grid
        product = eq(q * r, binding)
        factored = eq(q, binding) * eq(r, binding)
        assert np.max(np.abs((product - factored).samples)) <= 1e-10 * factored.max_abs()
        derivative = eq(q.d(), binding)
        direct = spectral_field.wirtinger(eq(q, binding), "dz")
        assert np.max(np.abs((derivative - direct).samples)) <= 1e-10 * derivative.max_abs()

    def test_unbound_generator(self, grid64):
        with pytest.raises(diffop_algebra.UnboundGeneratorError, match="zt"):
            diffop_algebra.eval_on_grid(p * zt, {"p": spectral_field.RealField(grid64, np.zeros(grid64.shape))})

    def test_fields_must_share_a_grid(self, grid64, grid128):
        binding = {
            "p": spectral_field.RealField(grid64, np.zeros(grid64.shape)),
            "w": spectral_field.ComplexField(grid128, np.zeros(grid128.shape)),
        }
        with pytest.raises(spectral_field.GridError, match="grid mismatch: 'w'"):
            diffop_algebra.eval_on_grid(p * w, binding)
