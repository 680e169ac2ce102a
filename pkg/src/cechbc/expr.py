"""Symbolic complex-valued scalars with exact Wirtinger calculus.

Expressions are immutable trees over complex-rational constants, pi,
coordinates z_j, their conjugates, real parameters, the field operations,
integer powers, conj, certified log, exp/sin/cos of parameter-only
arguments, and a smooth cutoff ``bump`` (0 for x<=0, exp(-1/x) for x>0).

Normalization brings every expression to a quotient P/Q of polynomials
over the atom alphabet (coordinates, conjugates, parameters, pi, and
opaque function atoms), with conj pushed to the leaves, like terms
collected under a fixed graded-lexicographic monomial order, and common
factors cancelled by content/monomial gcd plus exact polynomial division.
The normal form is canonical on the rational subclass, which makes zero
testing there exact; equalities involving the transcendental atoms fall
back to the sampled tier in :mod:`cechbc.sampling`.

Everything here is a pure function of immutable values; sharing across
threads needs no synchronization.
"""

from __future__ import annotations

import cmath
import math
import re
from fractions import Fraction

import numpy as np


class ExprError(Exception):
    """Malformed expression or invalid operation."""


class CertificateError(ExprError):
    """A log argument without a syntactic positivity certificate."""


class PoleError(ExprError):
    """Evaluation hit a pole (division by zero, log at zero)."""

    def __init__(self, message, subexpr=None):
        super().__init__(message if subexpr is None else f"{message}: {subexpr}")
        self.subexpr = subexpr


class UnboundVariableError(ExprError):
    """Evaluation found a free variable without a binding."""


_MAX_EXP_ARG = 709.0  # exp overflow guard for bump


class QI:
    """Gaussian rational a + b*i with exact Fraction parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = Fraction(re)
        self.im = Fraction(im)

    def __add__(self, o):
        return QI(self.re + o.re, self.im + o.im)

    def __sub__(self, o):
        return QI(self.re - o.re, self.im - o.im)

    def __neg__(self):
        return QI(-self.re, -self.im)

    def __mul__(self, o):
        return QI(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    def __truediv__(self, o):
        d = o.re * o.re + o.im * o.im
        if d == 0:
            raise ZeroDivisionError("division by zero QI")
        return QI((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)

    def conj(self):
        return QI(self.re, -self.im)

    def is_zero(self):
        return self.re == 0 and self.im == 0

    def is_one(self):
        return self.re == 1 and self.im == 0

    def is_real(self):
        return self.im == 0

    def __eq__(self, o):
        return isinstance(o, QI) and self.re == o.re and self.im == o.im

    def __hash__(self):
        return hash((self.re, self.im))

    def to_complex(self):
        return complex(float(self.re), float(self.im))

    def __repr__(self):
        return f"QI({self.re},{self.im})"


QI_ZERO = QI(0)
QI_ONE = QI(1)
QI_I = QI(0, 1)


# ---------------------------------------------------------------------------
# Expression nodes


class Expression:
    """Immutable expression tree node. Subclasses define the alphabet."""

    __slots__ = ("_hash", "_nf")

    def __init__(self):
        self._hash = None
        self._nf = None

    def _key(self):
        raise NotImplementedError

    def __hash__(self):
        if self._hash is None:
            object.__setattr__(self, "_hash", hash(self._key()))
        return self._hash

    def __eq__(self, other):
        return self is other or (isinstance(other, Expression) and self._key() == other._key())

    def __repr__(self):
        return to_prefix(self)

    # arithmetic sugar -----------------------------------------------------
    def __add__(self, o):
        return Add((self, as_expr(o)))

    def __radd__(self, o):
        return Add((as_expr(o), self))

    def __sub__(self, o):
        return Add((self, Mul((MINUS_ONE, as_expr(o)))))

    def __rsub__(self, o):
        return Add((as_expr(o), Mul((MINUS_ONE, self))))

    def __mul__(self, o):
        return Mul((self, as_expr(o)))

    def __rmul__(self, o):
        return Mul((as_expr(o), self))

    def __truediv__(self, o):
        return Div(self, as_expr(o))

    def __rtruediv__(self, o):
        return Div(as_expr(o), self)

    def __pow__(self, n):
        return Pow(self, n)

    def __neg__(self):
        return Mul((MINUS_ONE, self))


class Const(Expression):
    __slots__ = ("value",)

    def __init__(self, value):
        super().__init__()
        if isinstance(value, QI):
            self.value = value
        elif isinstance(value, (int, Fraction)):
            self.value = QI(value)
        elif isinstance(value, complex):
            # only exact Gaussian integers via complex literals
            if value.real != int(value.real) or value.imag != int(value.imag):
                raise ExprError("non-rational complex literal; use QI")
            self.value = QI(int(value.real), int(value.imag))
        else:
            raise ExprError(f"bad constant {value!r}")

    def _key(self):
        return ("const", self.value.re, self.value.im)


class PiConst(Expression):
    __slots__ = ()

    def _key(self):
        return ("pi",)


class Var(Expression):
    """Coordinate variable z_name."""

    __slots__ = ("name",)

    def __init__(self, name):
        super().__init__()
        self.name = name

    def _key(self):
        return ("var", self.name)


class ConjVar(Expression):
    """Conjugate coordinate variable."""

    __slots__ = ("name",)

    def __init__(self, name):
        super().__init__()
        self.name = name

    def _key(self):
        return ("cvar", self.name)


class Param(Expression):
    """Real parameter (chain parameters, transgression variable, ...)."""

    __slots__ = ("name",)

    def __init__(self, name):
        super().__init__()
        self.name = name

    def _key(self):
        return ("param", self.name)


class Add(Expression):
    __slots__ = ("args",)

    def __init__(self, args):
        super().__init__()
        self.args = tuple(as_expr(a) for a in args)

    def _key(self):
        return ("add", self.args)


class Mul(Expression):
    __slots__ = ("args",)

    def __init__(self, args):
        super().__init__()
        self.args = tuple(as_expr(a) for a in args)

    def _key(self):
        return ("mul", self.args)


class Pow(Expression):
    __slots__ = ("base", "exp")

    def __init__(self, base, exp):
        super().__init__()
        if not isinstance(exp, int):
            raise ExprError("only integer powers are supported")
        self.base = as_expr(base)
        self.exp = exp

    def _key(self):
        return ("pow", self.base, self.exp)


class Div(Expression):
    __slots__ = ("num", "den")

    def __init__(self, num, den):
        super().__init__()
        self.num = as_expr(num)
        self.den = as_expr(den)

    def _key(self):
        return ("div", self.num, self.den)


class Conj(Expression):
    __slots__ = ("arg",)

    def __init__(self, arg):
        super().__init__()
        self.arg = as_expr(arg)

    def _key(self):
        return ("conj", self.arg)


class _Func(Expression):
    __slots__ = ("arg",)
    kind = "?"

    def __init__(self, arg, _trusted=False):
        super().__init__()
        self.arg = as_expr(arg)
        if not _trusted:
            self._validate()

    def _validate(self):
        pass

    def _key(self):
        return (self.kind, self.arg)


class Log(_Func):
    kind = "log"

    def _validate(self):
        if not certified_positive(self.arg):
            raise CertificateError(f"log argument lacks a positivity certificate: {self.arg}")


class Exp(_Func):
    kind = "exp"

    def _validate(self):
        _require_param_only(self.arg, "exp")


class Sin(_Func):
    kind = "sin"

    def _validate(self):
        _require_param_only(self.arg, "sin")


class Cos(_Func):
    kind = "cos"

    def _validate(self):
        _require_param_only(self.arg, "cos")


class Bump(_Func):
    """Smooth cutoff: 0 for x<=0, exp(-1/x) for x>0."""

    kind = "bump"

    def _validate(self):
        if normalize(conj(self.arg)) != normalize(self.arg):
            raise ExprError(f"bump argument must be real-valued: {self.arg}")


ZERO = Const(0)
ONE = Const(1)
MINUS_ONE = Const(-1)
I = Const(QI_I)
PI = PiConst()


def as_expr(x):
    if isinstance(x, Expression):
        return x
    if isinstance(x, (int, Fraction, QI)):
        return Const(x)
    raise ExprError(f"cannot coerce {x!r} to Expression")


def qi(re, im=0):
    return Const(QI(re, im))


def free_vars(e):
    """Return (coords, conj-coords, params) appearing free in e."""
    cs, js, ps = set(), set(), set()
    _free_vars(e, cs, js, ps)
    return cs, js, ps


def _free_vars(e, cs, js, ps):
    if isinstance(e, Var):
        cs.add(e.name)
    elif isinstance(e, ConjVar):
        js.add(e.name)
    elif isinstance(e, Param):
        ps.add(e.name)
    elif isinstance(e, Add) or isinstance(e, Mul):
        for a in e.args:
            _free_vars(a, cs, js, ps)
    elif isinstance(e, Pow):
        _free_vars(e.base, cs, js, ps)
    elif isinstance(e, Div):
        _free_vars(e.num, cs, js, ps)
        _free_vars(e.den, cs, js, ps)
    elif isinstance(e, (Conj, _Func)):
        _free_vars(e.arg, cs, js, ps)


def _require_param_only(arg, what):
    cs, js, ps = free_vars(arg)
    if cs or js:
        raise ExprError(f"{what} argument may only contain real parameters: {arg}")


# ---------------------------------------------------------------------------
# Positivity certificates for log


def certified_positive(e):
    """Syntactic certificate that e > 0 wherever it is defined and nonzero.

    Accepted shapes: positive rational constants, pi, f*conj(f) (modulo
    association), sums/products/quotients/integer powers of certified
    expressions, exp of a real argument, and normal forms whose every
    numerator/denominator term is a positive multiple of |monomial|^2.
    """
    if _cert_raw(e):
        return True
    try:
        nf = _nf(e)
    except ExprError:
        return False
    return _cert_poly(nf.num) and _cert_poly(nf.den)


def _cert_raw(e):
    if isinstance(e, Const):
        return e.value.is_real() and e.value.re > 0
    if isinstance(e, PiConst):
        return True
    if isinstance(e, Exp):
        return normalize(conj(e.arg)) == normalize(e.arg)
    if isinstance(e, Add):
        return all(_cert_raw(a) for a in e.args)
    if isinstance(e, Div):
        return _cert_raw(e.num) and _cert_raw(e.den)
    if isinstance(e, Pow):
        return _cert_raw(e.base)
    if isinstance(e, Mul):
        rest = list(e.args)
        # peel conjugate pairs f * conj(f)
        changed = True
        while changed:
            changed = False
            for i, a in enumerate(rest):
                for j, b in enumerate(rest):
                    if i != j and isinstance(b, Conj) and b.arg == a:
                        rest = [x for k, x in enumerate(rest) if k not in (i, j)]
                        changed = True
                        break
                if changed:
                    break
        return all(_cert_raw(a) for a in rest)
    return False


def _cert_poly(poly):
    if not poly:
        return False
    for mono, c in poly.items():
        if not (c.is_real() and c.re > 0):
            return False
        powers = {}
        for atom, k in mono:
            powers[atom] = k
        for atom, k in powers.items():
            tag = atom[0]
            if tag == "c":
                if powers.get(("cj", atom[1]), 0) != k:
                    return False
            elif tag == "cj":
                if powers.get(("c", atom[1]), 0) != k:
                    return False
            elif tag == "p":
                if k % 2 != 0:
                    return False
            elif tag == "pi":
                pass
            elif tag == "f":
                if atom[1] != "exp":
                    return False
            else:
                return False
    return True


# ---------------------------------------------------------------------------
# Normal form: fraction of polynomials over atoms
#
# atom        = ("c", name) | ("cj", name) | ("p", name) | ("pi",)
#             | ("f", kind, canonical-arg-Expression)
# monomial    = tuple of (atom, positive-exponent), sorted by _atom_key
# polynomial  = dict monomial -> QI


def _atom_key(atom):
    tag = atom[0]
    if tag == "c":
        return (0, atom[1], "")
    if tag == "cj":
        return (1, atom[1], "")
    if tag == "p":
        return (2, atom[1], "")
    if tag == "pi":
        return (3, "", "")
    return (4, atom[1], to_prefix(atom[2]))


def _mono_key(mono):
    return (sum(k for _, k in mono), tuple((_atom_key(a), k) for a, k in mono))


def _mono_mul(m1, m2):
    d = dict(m1)
    for a, k in m2:
        d[a] = d.get(a, 0) + k
        if d[a] == 0:
            del d[a]
    return tuple(sorted(d.items(), key=lambda ak: _atom_key(ak[0])))


_EMPTY_MONO = ()


def _poly_const(c):
    return {} if c.is_zero() else {_EMPTY_MONO: c}


_P_ONE_TEMPLATE = {_EMPTY_MONO: QI_ONE}


def _p_one():
    return dict(_P_ONE_TEMPLATE)


def _poly_add(p, q):
    r = dict(p)
    for m, c in q.items():
        nc = r.get(m, QI_ZERO) + c
        if nc.is_zero():
            r.pop(m, None)
        else:
            r[m] = nc
    return r


def _poly_neg(p):
    return {m: -c for m, c in p.items()}


def _poly_mul(p, q):
    if not p or not q:
        return {}
    r = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = _mono_mul(m1, m2)
            nc = r.get(m, QI_ZERO) + c1 * c2
            if nc.is_zero():
                r.pop(m, None)
            else:
                r[m] = nc
    return r


def _poly_scale(p, c):
    if c.is_zero():
        return {}
    return {m: cc * c for m, cc in p.items()}


def _poly_conj(p):
    r = {}
    for m, c in p.items():
        nm = []
        for atom, k in m:
            nm.append((_atom_conj(atom), k))
        nm = tuple(sorted(nm, key=lambda ak: _atom_key(ak[0])))
        r[nm] = c.conj()
    return r


def _atom_conj(atom):
    tag = atom[0]
    if tag == "c":
        return ("cj", atom[1])
    if tag == "cj":
        return ("c", atom[1])
    if tag in ("p", "pi"):
        return atom
    kind, arg = atom[1], atom[2]
    if kind in ("log", "bump"):
        return atom  # certified/real arguments are self-conjugate
    return ("f", kind, normalize(conj(arg)))


def _leading(p):
    return max(p, key=_mono_key)


def _poly_divexact(f, g):
    """Return q with f == g*q, or None."""
    if not g:
        return None
    if not f:
        return {}
    lg = _leading(g)
    cg = g[lg]
    q = {}
    rem = dict(f)
    lgd = dict(lg)
    steps = 0
    while rem:
        steps += 1
        if steps > 2000:
            return None
        lf = _leading(rem)
        lfd = dict(lf)
        qm = {}
        for a, k in lgd.items():
            if lfd.get(a, 0) < k:
                return None
            qm[a] = lfd[a] - k
        for a, k in lfd.items():
            if a not in lgd:
                qm[a] = k
        qmono = tuple(sorted(((a, k) for a, k in qm.items() if k), key=lambda ak: _atom_key(ak[0])))
        qc = rem[lf] / cg
        q[qmono] = qc
        sub = _poly_mul({qmono: qc}, g)
        rem = _poly_add(rem, _poly_neg(sub))
    return q


def _mono_gcd_of_poly(p):
    gcd = None
    for m in p:
        d = dict(m)
        if gcd is None:
            gcd = d
        else:
            gcd = {a: min(k, d.get(a, 0)) for a, k in gcd.items() if d.get(a, 0) > 0}
        if not gcd:
            return {}
    return gcd or {}


def _poly_div_mono(p, gcd):
    if not gcd:
        return p
    r = {}
    for m, c in p.items():
        d = dict(m)
        for a, k in gcd.items():
            d[a] -= k
            if d[a] == 0:
                del d[a]
        r[tuple(sorted(d.items(), key=lambda ak: _atom_key(ak[0])))] = c
    return r


class NF:
    """Canonical fraction num/den of atom-polynomials."""

    __slots__ = ("num", "den")

    def __init__(self, num, den):
        self.num = num
        self.den = den

    def is_zero(self):
        return not self.num


def _nf_canonical(num, den):
    if not den:
        raise PoleError("division by symbolic zero")
    if not num:
        return NF({}, _p_one())
    # common monomial factor
    gn = _mono_gcd_of_poly(num)
    gd = _mono_gcd_of_poly(den)
    common = {a: min(k, gd.get(a, 0)) for a, k in gn.items() if gd.get(a, 0) > 0}
    if common:
        num = _poly_div_mono(num, common)
        den = _poly_div_mono(den, common)
    # exact division either way
    if den != _P_ONE_TEMPLATE:
        q = _poly_divexact(num, den)
        if q is not None:
            num, den = q, _p_one()
        elif len(num) > 0 and num != _P_ONE_TEMPLATE:
            q = _poly_divexact(den, num)
            if q is not None:
                num, den = _p_one(), q
    # make denominator monic under the monomial order
    lc = den[_leading(den)]
    if not lc.is_one():
        inv = QI_ONE / lc
        num = _poly_scale(num, inv)
        den = _poly_scale(den, inv)
    return NF(num, den)


def _nf_add(a, b):
    if a.den == b.den:
        return _nf_canonical(_poly_add(a.num, b.num), dict(a.den))
    return _nf_canonical(
        _poly_add(_poly_mul(a.num, b.den), _poly_mul(b.num, a.den)),
        _poly_mul(a.den, b.den),
    )


def _nf_mul(a, b):
    return _nf_canonical(_poly_mul(a.num, b.num), _poly_mul(a.den, b.den))


def _nf_div(a, b):
    if b.is_zero():
        raise PoleError("division by symbolic zero")
    return _nf_canonical(_poly_mul(a.num, b.den), _poly_mul(a.den, b.num))


def _nf_pow(a, n):
    if n == 0:
        return NF(_p_one(), _p_one())
    if n < 0:
        if a.is_zero():
            raise PoleError("zero to a negative power")
        a = NF(a.den, a.num)
        n = -n
    num, den = _p_one(), _p_one()
    for _ in range(n):
        num = _poly_mul(num, a.num)
        den = _poly_mul(den, a.den)
    return _nf_canonical(num, den)


def _nf_atom(atom):
    return NF({((atom, 1),): QI_ONE}, _p_one())


def _nf(e):
    if e._nf is not None:
        return e._nf
    nf = _nf_compute(e)
    object.__setattr__(e, "_nf", nf)
    return nf


def _nf_compute(e):
    if isinstance(e, Const):
        return NF(_poly_const(e.value), _p_one())
    if isinstance(e, PiConst):
        return _nf_atom(("pi",))
    if isinstance(e, Var):
        return _nf_atom(("c", e.name))
    if isinstance(e, ConjVar):
        return _nf_atom(("cj", e.name))
    if isinstance(e, Param):
        return _nf_atom(("p", e.name))
    if isinstance(e, Add):
        out = NF({}, _p_one())
        for a in e.args:
            out = _nf_add(out, _nf(a))
        return out
    if isinstance(e, Mul):
        out = NF(_p_one(), _p_one())
        for a in e.args:
            out = _nf_mul(out, _nf(a))
        return out
    if isinstance(e, Pow):
        return _nf_pow(_nf(e.base), e.exp)
    if isinstance(e, Div):
        return _nf_div(_nf(e.num), _nf(e.den))
    if isinstance(e, Conj):
        a = _nf(e.arg)
        return _nf_canonical(_poly_conj(a.num), _poly_conj(a.den))
    if isinstance(e, _Func):
        arg = normalize(e.arg)
        if isinstance(arg, Const):
            folded = _fold_const_func(e.kind, arg.value)
            if folded is not None:
                return _nf(folded)
        return _nf_atom(("f", e.kind, arg))
    raise ExprError(f"unknown node {e!r}")


def _fold_const_func(kind, v):
    if kind == "log" and v.is_one():
        return ZERO
    if kind == "exp" and v.is_zero():
        return ONE
    if kind == "sin" and v.is_zero():
        return ZERO
    if kind == "cos" and v.is_zero():
        return ONE
    if kind == "bump" and v.is_real() and v.re <= 0:
        return ZERO
    return None


_FUNC_CLASSES = {"log": Log, "exp": Exp, "sin": Sin, "cos": Cos, "bump": Bump}


def _atom_to_expr(atom):
    tag = atom[0]
    if tag == "c":
        return Var(atom[1])
    if tag == "cj":
        return ConjVar(atom[1])
    if tag == "p":
        return Param(atom[1])
    if tag == "pi":
        return PI
    return _FUNC_CLASSES[atom[1]](atom[2], _trusted=True)


def _poly_to_expr(p):
    if not p:
        return ZERO
    terms = []
    for m in sorted(p, key=_mono_key, reverse=True):
        c = p[m]
        factors = []
        for atom, k in m:
            base = _atom_to_expr(atom)
            factors.append(base if k == 1 else Pow(base, k))
        if not factors:
            terms.append(Const(c))
        elif c.is_one():
            terms.append(factors[0] if len(factors) == 1 else Mul(tuple(factors)))
        else:
            terms.append(Mul(tuple([Const(c)] + factors)))
    return terms[0] if len(terms) == 1 else Add(tuple(terms))


def normalize(e):
    """Canonical form: conj at leaves, folded constants, collected terms,
    cancelled quotient. Idempotent."""
    e = as_expr(e)
    nf = _nf(e)
    num = _poly_to_expr(nf.num)
    if nf.den == _P_ONE_TEMPLATE:
        out = num
    else:
        out = Div(num, _poly_to_expr(nf.den))
    object.__setattr__(out, "_nf", nf)
    return out


def is_syntactic_zero(e):
    return _nf(as_expr(e)).is_zero()


def conj(e):
    """Complex conjugate (pushed to leaves on normalization)."""
    return Conj(as_expr(e))


# ---------------------------------------------------------------------------
# Differentiation


def _diff(e, tag, name):
    if isinstance(e, (Const, PiConst)):
        return ZERO
    if isinstance(e, Var):
        return ONE if (tag == "c" and e.name == name) else ZERO
    if isinstance(e, ConjVar):
        return ONE if (tag == "cj" and e.name == name) else ZERO
    if isinstance(e, Param):
        return ONE if (tag == "p" and e.name == name) else ZERO
    if isinstance(e, Add):
        return Add(tuple(_diff(a, tag, name) for a in e.args))
    if isinstance(e, Mul):
        terms = []
        for i in range(len(e.args)):
            da = _diff(e.args[i], tag, name)
            if isinstance(da, Const) and da.value.is_zero():
                continue
            terms.append(Mul(e.args[:i] + (da,) + e.args[i + 1:]))
        return Add(tuple(terms)) if terms else ZERO
    if isinstance(e, Pow):
        if e.exp == 0:
            return ZERO
        return Mul((Const(e.exp), Pow(e.base, e.exp - 1), _diff(e.base, tag, name)))
    if isinstance(e, Div):
        return Div(
            Add((
                Mul((_diff(e.num, tag, name), e.den)),
                Mul((MINUS_ONE, e.num, _diff(e.den, tag, name))),
            )),
            Pow(e.den, 2),
        )
    if isinstance(e, Conj):
        flip = {"c": "cj", "cj": "c", "p": "p"}[tag]
        return Conj(_diff(e.arg, flip, name))
    if isinstance(e, Log):
        return Div(_diff(e.arg, tag, name), e.arg)
    if isinstance(e, Exp):
        return Mul((e, _diff(e.arg, tag, name)))
    if isinstance(e, Sin):
        return Mul((Cos(e.arg, _trusted=True), _diff(e.arg, tag, name)))
    if isinstance(e, Cos):
        return Mul((MINUS_ONE, Sin(e.arg, _trusted=True), _diff(e.arg, tag, name)))
    if isinstance(e, Bump):
        # d/dx exp(-1/x) = bump(x)/x^2; vanishes identically for x<0
        return Mul((e, Pow(e.arg, -2), _diff(e.arg, tag, name)))
    raise ExprError(f"cannot differentiate {e!r}")


def wirtinger_d(e, v, anti=False):
    """Exact Wirtinger derivative d e / d z_v (anti=False) or d e / d z̄_v."""
    return normalize(_diff(as_expr(e), "cj" if anti else "c", v))


def param_d(e, name):
    """Exact derivative with respect to a real parameter."""
    return normalize(_diff(as_expr(e), "p", name))


# ---------------------------------------------------------------------------
# Substitution


def subst(e, coord_map=None, param_map=None):
    """Substitute coordinates/parameters by expressions.

    Conjugate coordinates are replaced by the conjugates of the coordinate
    images, keeping the conj-at-leaves discipline consistent.
    """
    coord_map = coord_map or {}
    param_map = param_map or {}
    return normalize(_subst(as_expr(e), coord_map, param_map))


def _subst(e, cm, pm):
    if isinstance(e, Var):
        return cm.get(e.name, e)
    if isinstance(e, ConjVar):
        if e.name in cm:
            return Conj(cm[e.name])
        return e
    if isinstance(e, Param):
        return pm.get(e.name, e)
    if isinstance(e, (Const, PiConst)):
        return e
    if isinstance(e, Add):
        return Add(tuple(_subst(a, cm, pm) for a in e.args))
    if isinstance(e, Mul):
        return Mul(tuple(_subst(a, cm, pm) for a in e.args))
    if isinstance(e, Pow):
        return Pow(_subst(e.base, cm, pm), e.exp)
    if isinstance(e, Div):
        return Div(_subst(e.num, cm, pm), _subst(e.den, cm, pm))
    if isinstance(e, Conj):
        return Conj(_subst(e.arg, cm, pm))
    if isinstance(e, _Func):
        return type(e)(_subst(e.arg, cm, pm))
    raise ExprError(f"cannot substitute into {e!r}")


# ---------------------------------------------------------------------------
# Evaluation


def eval_expr(e, assignment):
    """IEEE-double complex value of e under an Assignment."""
    return _ev(as_expr(e), assignment)


def _ev(e, a):
    if isinstance(e, Const):
        return e.value.to_complex()
    if isinstance(e, PiConst):
        return complex(math.pi)
    if isinstance(e, Var):
        try:
            return complex(a.coords[e.name])
        except KeyError:
            raise UnboundVariableError(f"unbound coordinate {e.name!r}")
    if isinstance(e, ConjVar):
        try:
            return complex(a.coords[e.name]).conjugate()
        except KeyError:
            raise UnboundVariableError(f"unbound coordinate {e.name!r}")
    if isinstance(e, Param):
        try:
            return complex(a.params[e.name])
        except KeyError:
            raise UnboundVariableError(f"unbound parameter {e.name!r}")
    if isinstance(e, Add):
        return sum(_ev(x, a) for x in e.args)
    if isinstance(e, Mul):
        v = complex(1)
        for x in e.args:
            v *= _ev(x, a)
        return v
    if isinstance(e, Pow):
        b = _ev(e.base, a)
        if e.exp < 0 and b == 0:
            raise PoleError("zero base with negative power", e)
        return b ** e.exp
    if isinstance(e, Div):
        d = _ev(e.den, a)
        if d == 0:
            raise PoleError("division by zero", e.den)
        return _ev(e.num, a) / d
    if isinstance(e, Conj):
        return _ev(e.arg, a).conjugate()
    if isinstance(e, Log):
        v = _ev(e.arg, a)
        if abs(v.imag) > 1e-9 * (1.0 + abs(v.real)) or v.real <= 0:
            raise PoleError(f"log of non-positive value {v}", e)
        return complex(math.log(v.real))
    if isinstance(e, Exp):
        return cmath.exp(_ev(e.arg, a))
    if isinstance(e, Sin):
        return cmath.sin(_ev(e.arg, a))
    if isinstance(e, Cos):
        return cmath.cos(_ev(e.arg, a))
    if isinstance(e, Bump):
        v = _ev(e.arg, a)
        if abs(v.imag) > 1e-9 * (1.0 + abs(v.real)):
            raise ExprError(f"bump of non-real value {v}")
        x = v.real
        if x <= 0:
            return complex(0.0)
        t = -1.0 / x
        return complex(0.0) if t < -_MAX_EXP_ARG else complex(math.exp(t))
    raise ExprError(f"cannot evaluate {e!r}")


def eval_grid(e, coords, params):
    """Vectorized evaluation over numpy arrays (quadrature hot path).

    coords maps names to complex arrays, params to real arrays; all arrays
    broadcast together. Pole hits surface as non-finite entries and raise.
    """
    v = _evg(as_expr(e), coords, params)
    if not np.all(np.isfinite(v)):
        raise PoleError("grid evaluation hit a pole")
    return v


def _evg(e, C, P):
    if isinstance(e, Const):
        return e.value.to_complex()
    if isinstance(e, PiConst):
        return complex(math.pi)
    if isinstance(e, Var):
        return C[e.name]
    if isinstance(e, ConjVar):
        return np.conj(C[e.name])
    if isinstance(e, Param):
        return P[e.name].astype(complex) if hasattr(P[e.name], "astype") else complex(P[e.name])
    if isinstance(e, Add):
        v = _evg(e.args[0], C, P)
        for x in e.args[1:]:
            v = v + _evg(x, C, P)
        return v
    if isinstance(e, Mul):
        v = _evg(e.args[0], C, P)
        for x in e.args[1:]:
            v = v * _evg(x, C, P)
        return v
    if isinstance(e, Pow):
        return _evg(e.base, C, P) ** e.exp
    if isinstance(e, Div):
        return _evg(e.num, C, P) / _evg(e.den, C, P)
    if isinstance(e, Conj):
        return np.conj(_evg(e.arg, C, P))
    if isinstance(e, Log):
        return np.log(_evg(e.arg, C, P))
    if isinstance(e, Exp):
        return np.exp(_evg(e.arg, C, P))
    if isinstance(e, Sin):
        return np.sin(_evg(e.arg, C, P))
    if isinstance(e, Cos):
        return np.cos(_evg(e.arg, C, P))
    if isinstance(e, Bump):
        x = np.real(np.asarray(_evg(e.arg, C, P), dtype=complex))
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out.astype(complex)
    raise ExprError(f"cannot grid-evaluate {e!r}")


# ---------------------------------------------------------------------------
# Prefix-term serialization


def to_prefix(e):
    e = as_expr(e)
    if isinstance(e, Const):
        return _const_str(e.value)
    if isinstance(e, PiConst):
        return "pi"
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, ConjVar):
        return f"(conj {e.name})"
    if isinstance(e, Add):
        return "(+ " + " ".join(to_prefix(a) for a in e.args) + ")"
    if isinstance(e, Mul):
        return "(* " + " ".join(to_prefix(a) for a in e.args) + ")"
    if isinstance(e, Pow):
        return f"(pow {to_prefix(e.base)} {e.exp})"
    if isinstance(e, Div):
        return f"(/ {to_prefix(e.num)} {to_prefix(e.den)})"
    if isinstance(e, Conj):
        return f"(conj {to_prefix(e.arg)})"
    if isinstance(e, _Func):
        return f"({e.kind} {to_prefix(e.arg)})"
    raise ExprError(f"cannot print {e!r}")


def _frac_str(f):
    return str(f.numerator) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def _const_str(v):
    if v.im == 0:
        return _frac_str(v.re)
    if v.re == 0:
        if v.im == 1:
            return "i"
        return f"(* {_frac_str(v.im)} i)"
    return f"(+ {_frac_str(v.re)} (* {_frac_str(v.im)} i))"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")
_NUM = re.compile(r"^-?\d+(/\d+)?$")


def parse_prefix(text, coords=(), params=()):
    """Parse the prefix serialization. coords/params disambiguate names."""
    toks = _TOKEN.findall(text)
    pos = [0]
    coords = set(coords)
    params = set(params)

    def rd():
        if pos[0] >= len(toks):
            raise ExprError("unexpected end of input")
        t = toks[pos[0]]
        pos[0] += 1
        if t == "(":
            head = toks[pos[0]]
            pos[0] += 1
            args = []
            while toks[pos[0]] != ")":
                args.append(rd())
            pos[0] += 1
            return _mk(head, args)
        if t == ")":
            raise ExprError("unexpected ')'")
        return _leaf(t)

    def _leaf(t):
        if _NUM.match(t):
            return Const(Fraction(t))
        if t == "i":
            return I
        if t == "pi":
            return PI
        if t in params:
            return Param(t)
        if t in coords:
            return Var(t)
        # default: treat unknown bare names as coordinates
        return Var(t)

    def _mk(head, args):
        if head == "+":
            return Add(tuple(args))
        if head == "*":
            return Mul(tuple(args))
        if head == "-":
            if len(args) == 1:
                return Mul((MINUS_ONE, args[0]))
            if len(args) == 2:
                return args[0] - args[1]
            raise ExprError("'-' takes 1 or 2 arguments")
        if head == "/":
            if len(args) != 2:
                raise ExprError("'/' takes 2 arguments")
            return Div(args[0], args[1])
        if head == "pow":
            if len(args) != 2 or not isinstance(args[1], Const) or args[1].value.im != 0:
                raise ExprError("pow takes a base and an integer")
            n = args[1].value.re
            if n.denominator != 1:
                raise ExprError("pow exponent must be an integer")
            return Pow(args[0], int(n))
        if head == "conj":
            (a,) = args
            if isinstance(a, Var):
                return ConjVar(a.name)
            return Conj(a)
        if head in _FUNC_CLASSES:
            (a,) = args
            return _FUNC_CLASSES[head](a)
        raise ExprError(f"unknown operator {head!r}")

    out = rd()
    if pos[0] != len(toks):
        raise ExprError("trailing input")
    return out
