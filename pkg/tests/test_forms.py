import random

import pytest

from cechbc.expr import Const, Div, Log, Param, Pow, Var, ConjVar, conj, normalize
from cechbc.forms import (
    Chart,
    ChartMap,
    Form,
    ParamMap,
    VectorField,
    contract,
    dbar_del,
    form_is_zero,
    forms_equal,
    lie_bracket,
    pullback,
    wedge,
)
from cechbc.sampling import is_zero


C2 = Chart("C2", ("z", "w"))
CY = Chart("CY", ("s", "y"), avoid=(Var("y"),))


def rand_coeff(rng, chart, log_ok=True):
    out = Const(0)
    for _ in range(2):
        t = Const(rng.randint(-3, 3))
        for n in chart.coords:
            t = t * Pow(Var(n), rng.randint(0, 2))
            if rng.random() < 0.5:
                t = t * Pow(ConjVar(n), rng.randint(0, 1))
        out = out + t
    if log_ok and rng.random() < 0.3:
        n = rng.choice(chart.coords)
        out = out + Const(rng.randint(1, 2)) * Log(Const(1) + Var(n) * ConjVar(n))
    return out


def rand_form(rng, chart, p, q, log_ok=True):
    n = len(chart.coords)
    import itertools

    terms = {}
    for I in itertools.combinations(range(n), p):
        for J in itertools.combinations(range(n), q):
            if rng.random() < 0.8:
                terms[(I, J)] = rand_coeff(rng, chart, log_ok)
    return Form(chart, terms)


class TestWedge:
    def test_antisymmetry_one_forms(self):
        a = Form.dz(C2, "z")
        b = Form.dzbar(C2, "z")
        assert forms_equal(wedge(a, b), wedge(b, a).scale(-1))

    def test_square_zero(self):
        a = Form.dz(C2, "z")
        assert wedge(a, a).is_zero_syntactic()

    def test_scalar_action(self):
        f = Form.scalar(C2, Var("z"))
        vol = wedge(Form.dz(C2, "z"), Form.dzbar(C2, "z"))
        assert forms_equal(wedge(f, vol), vol.scale(Var("z")))

    def test_graded_commutative(self):
        rng = random.Random(2)
        for _ in range(5):
            p1, q1 = rng.choice([(1, 0), (0, 1), (1, 1)])
            p2, q2 = rng.choice([(1, 0), (0, 1), (2, 0)])
            a = rand_form(rng, C2, p1, q1)
            b = rand_form(rng, C2, p2, q2)
            s = (-1) ** ((p1 + q1) * (p2 + q2))
            assert forms_equal(wedge(a, b), wedge(b, a).scale(s))

    def test_associative(self):
        rng = random.Random(3)
        a = rand_form(rng, C2, 1, 0)
        b = rand_form(rng, C2, 0, 1)
        c = rand_form(rng, C2, 1, 0)
        assert forms_equal(wedge(wedge(a, b), c), wedge(a, wedge(b, c)))


class TestDifferentials:
    def test_del_log_modulus(self):
        y = Var("y")
        f = Form.scalar(CY, Log(y * ConjVar("y")))
        want = Form.dz(CY, "y", Div(Const(1), y))
        assert forms_equal(f.del_(), want)

    def test_delbar_del(self):
        f = Form.scalar(C2, Var("z") * ConjVar("z"))
        got = f.del_().delbar()
        want = wedge(Form.dzbar(C2, "z"), Form.dz(C2, "z"))
        assert forms_equal(got, want)

    def test_d_squared_zero_random(self):
        rng = random.Random(5)
        for _ in range(8):
            p, q = rng.choice([(0, 0), (1, 0), (0, 1), (1, 1)])
            a = rand_form(rng, C2, p, q)
            assert form_is_zero(a.d().d())
            assert form_is_zero(a.del_().del_())
            assert form_is_zero(a.delbar().delbar())
            anti = a.del_().delbar() + a.delbar().del_()
            assert form_is_zero(anti)

    def test_leibniz(self):
        rng = random.Random(6)
        for _ in range(6):
            p, q = rng.choice([(0, 0), (1, 0), (0, 1)])
            a = rand_form(rng, C2, p, q)
            b = rand_form(rng, C2, rng.choice([0, 1]), 0)
            lhs = wedge(a, b).d()
            rhs = wedge(a.d(), b) + wedge(a, b.d()).scale((-1) ** (p + q))
            assert form_is_zero(lhs - rhs)

    def test_dbar_del_product_rule(self):
        # ∂̄∂(ω∧θ) = ∂̄∂ω∧θ + (−1)^{deg+1}∂ω∧∂̄θ + (−1)^{deg}∂̄ω∧∂θ + ω∧∂̄∂θ
        rng = random.Random(7)
        for _ in range(6):
            p, q = rng.choice([(0, 0), (1, 0), (0, 1)])
            r, s = rng.choice([(0, 0), (1, 0), (0, 1)])
            w = rand_form(rng, C2, p, q, log_ok=False)
            t = rand_form(rng, C2, r, s, log_ok=False)
            sgn = (-1) ** (p + q)
            lhs = dbar_del(wedge(w, t))
            rhs = (
                wedge(dbar_del(w), t)
                + wedge(w.del_(), t.delbar()).scale(-sgn)
                + wedge(w.delbar(), t.del_()).scale(sgn)
                + wedge(w, dbar_del(t))
            )
            assert form_is_zero(lhs - rhs)


class TestTypeComponent:
    def test_split(self):
        a = Form.dz(C2, "z") + Form.dzbar(C2, "z")
        assert forms_equal(a.type_component(1, 0), Form.dz(C2, "z"))
        assert forms_equal(a.type_component(0, 1), Form.dzbar(C2, "z"))

    def test_zero(self):
        assert Form.zero(C2).type_component(2, 1).is_zero_syntactic()


class TestVectorFields:
    def test_hopf_bracket(self):
        ch = Chart("amb", ("x", "y", "z"))
        v1 = VectorField(ch, (Const(0), Var("y"), Var("z")))
        dz = VectorField(ch, (Const(0), Const(0), Const(1)))
        got = lie_bracket(v1, dz)
        assert all(is_zero(c - w) for c, w in zip(got.coeffs, (Const(0), Const(0), Const(-1))))

    def test_commuting(self):
        ch = Chart("amb", ("x", "y", "z"))
        vx = VectorField(ch, (Const(1), Const(0), Const(0)))
        vz = VectorField(ch, (Const(0), Const(0), Const(1)))
        assert all(is_zero(c) for c in lie_bracket(vx, vz).coeffs)

    def test_self_bracket(self):
        ch = Chart("amb", ("x", "y", "z"))
        v = VectorField(ch, (Var("y"), Var("z") * Var("x"), Const(2)))
        assert all(is_zero(c) for c in lie_bracket(v, v).coeffs)

    def test_jacobi(self):
        ch = Chart("amb", ("x", "y", "z"))
        rng = random.Random(9)

        def rv():
            return VectorField(
                ch, [rand_coeff(rng, ch, log_ok=False) for _ in ch.coords]
            )

        for _ in range(3):
            u, v, w = rv(), rv(), rv()
            j = (
                lie_bracket(u, lie_bracket(v, w)).coeffs,
                lie_bracket(v, lie_bracket(w, u)).coeffs,
                lie_bracket(w, lie_bracket(u, v)).coeffs,
            )
            for a, b, c in zip(*j):
                assert is_zero(a + b + c)


class TestContract:
    def test_log_derivative_pairing(self):
        y = Var("y")
        theta = Form.dz(CY, "y", Div(Const(1), y))
        v1 = VectorField(CY, (Const(0), y))
        assert is_zero(contract(theta, v1).coefficient(()) - Const(1))

    def test_type_pairing(self):
        a = Form.dzbar(C2, "z")
        u = VectorField(C2, (Const(1), Const(0)))
        assert contract(a, u).is_zero_syntactic()

    def test_antiderivation_sign(self):
        f = Var("z") + Const(2)
        a = wedge(Form.dz(C2, "z", f), Form.dz(C2, "w"))
        u = VectorField(C2, (Const(0), Const(1)))
        want = Form.dz(C2, "z", f).scale(-1)
        assert forms_equal(contract(a, u), want)


class TestPullback:
    def test_circle(self):
        # t = delta (cos φ + i sin φ): dt/t -> i dφ
        CT = Chart("CT", ("t",), avoid=(Var("t"),))
        phi = Param("phi")
        m = ParamMap(
            ("phi",),
            CT,
            (Const(1, ) * (Div(Const(1), Const(2))) * (
                __import__("cechbc.expr", fromlist=["Cos"]).Cos(phi)
                + Const(0)),),
        )
        # simpler: build expression directly below
        assert m is not None

    def test_circle_dt_over_t(self):
        from cechbc.expr import Cos, Sin, I

        CT = Chart("CT", ("t",), avoid=(Var("t"),))
        phi = Param("phi")
        expr = Div(Const(1), Const(2)) * (Cos(phi) + I * Sin(phi))
        m = ParamMap(("phi",), CT, (expr,), periodic=(True,))
        a = Form.dz(CT, "t", Div(Const(1), Var("t")))
        got = pullback(a, m)
        want = Form.dz(m.source, "phi", I)
        assert forms_equal(got, want)

    def test_constant_map_kills(self):
        CT = Chart("CT", ("t",))
        m = ParamMap(("u",), CT, (Const(1),))
        with pytest.warns(UserWarning):
            got = pullback(Form.dz(CT, "t"), m)
        assert got.is_zero_syntactic()

    def test_log_cylinder(self):
        # x = exp(u+iv): dx/x ∧ dx̄/x̄ -> (du + i dv) ∧ (du − i dv)
        from cechbc.expr import Exp, I

        CX = Chart("CX", ("x",), avoid=(Var("x"),))
        u, v = Param("u"), Param("v")
        m = ParamMap(("u", "v"), CX, (Exp(u + I * v),), periodic=(False, True))
        a = wedge(
            Form.dz(CX, "x", Div(Const(1), Var("x"))),
            Form.dzbar(CX, "x", Div(Const(1), ConjVar("x"))),
        )
        got = pullback(a, m)
        du = Form.dz(m.source, "u")
        dv = Form.dz(m.source, "v")
        want = wedge(du + dv.scale(I), du - dv.scale(I))
        assert forms_equal(got, want)

    def test_pullback_commutes_with_d(self):
        rng = random.Random(12)
        CT = Chart("CT", ("t", "x"), avoid=(Var("x"),))
        from cechbc.expr import Exp, I, Sin, Cos

        m = ParamMap(
            ("u", "v"),
            CT,
            (Param("u") + I * Param("v"), Exp(Param("u") - I * Param("v"))),
        )
        for _ in range(4):
            a = rand_form(rng, CT, rng.choice([0, 1]), 0, log_ok=False)
            lhs = pullback(a.d(), m)
            rhs = pullback(a, m).d()
            assert form_is_zero(lhs - rhs)

    def test_chart_restriction(self):
        # U01 -> U0 with s = 1/t, y = t x  pulls dy/y back to dt/t + dx/x
        U0 = Chart("U0", ("s", "y"), avoid=(Var("y"),))
        U01 = Chart("U01", ("t", "x"), avoid=(Var("t"), Var("x")))
        m = ChartMap(U01, U0, (Div(Const(1), Var("t")), Var("t") * Var("x")))
        a = Form.dz(U0, "y", Div(Const(1), Var("y")))
        got = pullback(a, m)
        want = Form.dz(U01, "t", Div(Const(1), Var("t"))) + Form.dz(
            U01, "x", Div(Const(1), Var("x"))
        )
        assert forms_equal(got, want)
