"""Graded (p,q)-forms on named charts, exterior calculus, and pullbacks.

A Form is a finite map from (I, J) index pairs (strictly ascending tuples
into the chart's coordinate list) to scalar coefficients; the canonical
index order absorbs all wedge antisymmetry signs. Forms may mix degrees,
so heterogeneous carriers (full characteristic forms, (p+1,q)+(p,q+1)
slots) are single values.

Charts are complex by default. Pulling a form back along a real
parameterization lands on a ``real`` chart whose "coordinates" are the
parameters; such forms only carry I-indices and feed quadrature.
"""

from __future__ import annotations

import warnings

from . import expr as ex
from .expr import Expression, ExprError, as_expr, conj, normalize, param_d, subst, wirtinger_d
from .sampling import Sampler, ZeroVerdict, zero_verdict


class ChartMismatchError(ExprError):
    pass


class DegreeWarning(UserWarning):
    pass


class Chart:
    """Named coordinate chart. ``avoid`` lists expressions that must stay
    nonzero on the declared domain (used by assignment samplers)."""

    def __init__(self, name, coords, avoid=(), real=False, param_ranges=None):
        self.name = name
        self.coords = tuple(coords)
        if len(set(self.coords)) != len(self.coords):
            raise ExprError("coordinate names must be unique")
        if not self.coords:
            raise ExprError("chart needs at least one coordinate")
        self.avoid = tuple(avoid)
        self.real = real
        self.param_ranges = dict(param_ranges or {})

    def index(self, name):
        return self.coords.index(name)

    def var(self, name):
        if name not in self.coords:
            raise ExprError(f"{name!r} is not a coordinate of chart {self.name!r}")
        return ex.Param(name) if self.real else ex.Var(name)

    def sampler(self):
        if self.real:
            return Sampler((), self.coords, self.avoid, self.param_ranges)
        return Sampler(self.coords, (), self.avoid, self.param_ranges)

    def __repr__(self):
        kind = "real" if self.real else "complex"
        return f"Chart({self.name!r}, {self.coords}, {kind})"


def _merge_sign(a, b):
    """Sign of sorting the concatenation of two ascending index tuples.

    Returns (sorted tuple, sign) or (None, 0) on a repeated index.
    """
    out = list(a)
    sign = 1
    for x in b:
        pos = len(out)
        while pos > 0 and out[pos - 1] > x:
            pos -= 1
        if pos > 0 and out[pos - 1] == x:
            return None, 0
        sign *= (-1) ** (len(out) - pos)
        out.insert(pos, x)
    return tuple(out), sign


class Form:
    """Finite sum of coefficient * dz_I ∧ dz̄_J terms on one chart."""

    __slots__ = ("chart", "terms")

    def __init__(self, chart, terms=None):
        self.chart = chart
        clean = {}
        for (I, J), c in (terms or {}).items():
            if chart.real and J:
                raise ExprError("real charts carry no conjugate differentials")
            c = normalize(as_expr(c))
            if not ex.is_syntactic_zero(c):
                clean[(tuple(I), tuple(J))] = c
        self.terms = clean

    # constructors ---------------------------------------------------------
    @classmethod
    def zero(cls, chart):
        return cls(chart, {})

    @classmethod
    def scalar(cls, chart, coeff):
        return cls(chart, {((), ()): coeff})

    @classmethod
    def dz(cls, chart, name, coeff=1):
        return cls(chart, {((chart.index(name),), ()): coeff})

    @classmethod
    def dzbar(cls, chart, name, coeff=1):
        return cls(chart, {((), (chart.index(name),)): coeff})

    # structure ------------------------------------------------------------
    def is_zero_syntactic(self):
        return not self.terms

    def degrees(self):
        return sorted({(len(I), len(J)) for I, J in self.terms})

    def is_pure(self, p, q):
        return all(len(I) == p and len(J) == q for I, J in self.terms)

    def coefficient(self, I, J=()):
        return self.terms.get((tuple(I), tuple(J)), ex.ZERO)

    def __repr__(self):
        if not self.terms:
            return f"Form<{self.chart.name}|0>"
        bits = []
        for (I, J), c in sorted(self.terms.items()):
            dz = "".join(f"dz{self.chart.coords[i]}" for i in I)
            dzb = "".join(f"dz̄{self.chart.coords[j]}" for j in J)
            bits.append(f"({c!r})·{dz}{dzb}" if (dz or dzb) else f"({c!r})")
        return f"Form<{self.chart.name}| " + " + ".join(bits) + " >"

    # algebra ----------------------------------------------------------------
    def _check(self, other):
        if self.chart is not other.chart and self.chart.name != other.chart.name:
            raise ChartMismatchError(
                f"forms live on different charts: {self.chart.name} vs {other.chart.name}"
            )

    def __add__(self, other):
        self._check(other)
        t = dict(self.terms)
        for k, c in other.terms.items():
            t[k] = t.get(k, ex.ZERO) + c
        return Form(self.chart, t)

    def __sub__(self, other):
        return self + other.scale(-1)

    def __neg__(self):
        return self.scale(-1)

    def scale(self, c):
        c = as_expr(c)
        return Form(self.chart, {k: ex.Mul((c, v)) for k, v in self.terms.items()})

    def wedge(self, other):
        self._check(other)
        out = {}
        for (I1, J1), c1 in self.terms.items():
            for (I2, J2), c2 in other.terms.items():
                s = (-1) ** (len(J1) * len(I2))
                I, si = _merge_sign(I1, I2)
                if I is None:
                    continue
                J, sj = _merge_sign(J1, J2)
                if J is None:
                    continue
                coeff = ex.Mul((ex.Const(s * si * sj), c1, c2))
                key = (I, J)
                out[key] = out.get(key, ex.ZERO) + coeff
        return Form(self.chart, out)

    # differentials ----------------------------------------------------------
    def _d_parts(self, holo, anti):
        ch = self.chart
        out = {}
        for (I, J), c in self.terms.items():
            if ch.real:
                for j, name in enumerate(ch.coords):
                    dc = param_d(c, name)
                    if ex.is_syntactic_zero(dc):
                        continue
                    I2, s = _merge_sign((j,), I)
                    if I2 is None:
                        continue
                    key = (I2, J)
                    out[key] = out.get(key, ex.ZERO) + ex.Mul((ex.Const(s), dc))
                continue
            for j, name in enumerate(ch.coords):
                if holo:
                    dc = wirtinger_d(c, name, anti=False)
                    if not ex.is_syntactic_zero(dc):
                        I2, s = _merge_sign((j,), I)
                        if I2 is not None:
                            key = (I2, J)
                            out[key] = out.get(key, ex.ZERO) + ex.Mul((ex.Const(s), dc))
                if anti:
                    dc = wirtinger_d(c, name, anti=True)
                    if not ex.is_syntactic_zero(dc):
                        J2, s = _merge_sign((j,), J)
                        if J2 is not None:
                            s *= (-1) ** len(I)
                            key = (I, J2)
                            out[key] = out.get(key, ex.ZERO) + ex.Mul((ex.Const(s), dc))
        return Form(self.chart, out)

    def del_(self):
        if self.chart.real:
            raise ExprError("∂ is not defined on real parameter charts")
        return self._d_parts(True, False)

    def delbar(self):
        if self.chart.real:
            raise ExprError("∂̄ is not defined on real parameter charts")
        return self._d_parts(False, True)

    def d(self):
        return self._d_parts(True, True)

    def type_component(self, p, q):
        return Form(
            self.chart,
            {k: c for k, c in self.terms.items() if len(k[0]) == p and len(k[1]) == q},
        )

    def subst_coeffs(self, coord_map=None, param_map=None):
        """Substitute inside coefficients only (indices untouched)."""
        return Form(
            self.chart,
            {k: subst(c, coord_map, param_map) for k, c in self.terms.items()},
        )


def wedge(a, b):
    return a.wedge(b)


def exterior_d(a):
    return a.d()


def del_(a):
    return a.del_()


def delbar(a):
    return a.delbar()


def type_component(a, p, q):
    return a.type_component(p, q)


def dbar_del(a):
    """The composite ∂̄∂ (in this order)."""
    return a.del_().delbar()


class VectorField:
    """(1,0) vector field: one coefficient per ∂/∂z_j of the chart."""

    def __init__(self, chart, coeffs):
        if chart.real:
            raise ExprError("vector fields live on complex charts")
        coeffs = tuple(normalize(as_expr(c)) for c in coeffs)
        if len(coeffs) != len(chart.coords):
            raise ExprError("coefficient count must equal the chart dimension")
        self.chart = chart
        self.coeffs = coeffs

    def __repr__(self):
        bits = [f"({c!r})∂{n}" for c, n in zip(self.coeffs, self.chart.coords)]
        return "VF<" + " + ".join(bits) + ">"

    def apply_to(self, f):
        """Directional derivative of a scalar along the field."""
        out = ex.ZERO
        for c, name in zip(self.coeffs, self.chart.coords):
            out = out + c * wirtinger_d(f, name)
        return normalize(out)


def lie_bracket(u, v):
    if u.chart is not v.chart and u.chart.name != v.chart.name:
        raise ChartMismatchError("bracket of fields on different charts")
    ch = u.chart
    coeffs = []
    for j, _ in enumerate(ch.coords):
        t = ex.ZERO
        for k, name_k in enumerate(ch.coords):
            t = t + u.coeffs[k] * wirtinger_d(v.coeffs[j], name_k)
            t = t - v.coeffs[k] * wirtinger_d(u.coeffs[j], name_k)
        coeffs.append(t)
    return VectorField(ch, coeffs)


def contract(a, u):
    """Interior product with a (1,0) field (pairs ∂/∂z_j with dz_j only)."""
    if a.chart is not u.chart and a.chart.name != u.chart.name:
        raise ChartMismatchError("contraction across charts")
    out = {}
    for (I, J), c in a.terms.items():
        for m, idx in enumerate(I):
            uc = u.coeffs[idx]
            if ex.is_syntactic_zero(uc):
                continue
            key = (I[:m] + I[m + 1:], J)
            coeff = ex.Mul((ex.Const((-1) ** m), uc, c))
            out[key] = out.get(key, ex.ZERO) + coeff
    return Form(a.chart, out)


class ChartMap:
    """Smooth map source → target, given by target coordinates as
    expressions in source coordinates. Forms pull back target → source."""

    def __init__(self, source, target, exprs):
        self.source = source
        self.target = target
        if len(exprs) != len(target.coords):
            raise ExprError("need one expression per target coordinate")
        self.exprs = tuple(normalize(as_expr(e)) for e in exprs)
        cm = {}
        for name, e in zip(target.coords, self.exprs):
            cm[name] = e
        self._coord_map = cm
        if source.real:
            for e in self.exprs:
                cs, js, _ = ex.free_vars(e)
                if cs or js:
                    raise ExprError("maps from real charts use only parameters")

    def push_scalar(self, f):
        """Pull a scalar on the target back to the source."""
        return subst(f, self._coord_map)

    def _differential(self, j):
        """Pullback of dz_j (and dz̄_j) as source forms."""
        e = self.exprs[j]
        ch = self.source
        dz = Form.zero(ch)
        dzb = Form.zero(ch)
        if ch.real:
            ebar = normalize(conj(e))
            for iname in ch.coords:
                dz = dz + Form.dz(ch, iname, param_d(e, iname))
                dzb = dzb + Form.dz(ch, iname, param_d(ebar, iname))
        else:
            ebar = normalize(conj(e))
            for iname in ch.coords:
                dz = dz + Form.dz(ch, iname, wirtinger_d(e, iname))
                dz = dz + Form.dzbar(ch, iname, wirtinger_d(e, iname, anti=True))
                dzb = dzb + Form.dz(ch, iname, wirtinger_d(ebar, iname))
                dzb = dzb + Form.dzbar(ch, iname, wirtinger_d(ebar, iname, anti=True))
        return dz, dzb

    def pullback(self, a):
        if a.chart is not self.target and a.chart.name != self.target.name:
            raise ChartMismatchError(
                f"form lives on {a.chart.name!r}, map targets {self.target.name!r}"
            )
        diffs = [self._differential(j) for j in range(len(self.target.coords))]
        out = Form.zero(self.source)
        n_src = len(self.source.coords)
        for (I, J), c in a.terms.items():
            if len(I) + len(J) > (n_src if self.source.real else 2 * n_src):
                warnings.warn(
                    "form degree exceeds parameter count; term pulled back to zero",
                    DegreeWarning,
                )
                continue
            term = Form.scalar(self.source, self.push_scalar(c))
            for i in I:
                term = term.wedge(diffs[i][0])
            for j in J:
                term = term.wedge(diffs[j][1])
            out = out + term
        return out


class ParamMap(ChartMap):
    """Real parameterization of a piece of a chart, with orientation.

    ``periodic`` flags parameters that run over a full circle/torus cycle
    (their quadrature uses the trapezoid rule).
    """

    def __init__(self, params, target, exprs, orientation=1, periodic=None):
        source = Chart("params(" + ",".join(params) + ")", params, real=True)
        super().__init__(source, target, exprs)
        if orientation not in (1, -1):
            raise ExprError("orientation must be +1 or -1")
        self.params = tuple(params)
        self.orientation = orientation
        self.periodic = tuple(periodic or (False,) * len(self.params))
        if len(self.periodic) != len(self.params):
            raise ExprError("periodic flags must match parameter count")


def pullback(a, m):
    return m.pullback(a)


def transform_vector_field(v, fwd, inverse):
    """Express a field in new coordinates.

    fwd maps the field's chart to the new chart (new coords in old ones);
    inverse maps back. The new coefficients are v(new_coord) rewritten in
    the new coordinates.
    """
    new_chart = fwd.target if fwd.source.name == v.chart.name else fwd.source
    if fwd.source.name != v.chart.name:
        raise ExprError("fwd must start at the field's chart")
    coeffs = []
    for e in fwd.exprs:  # new coordinates as expressions in old ones
        coeffs.append(inverse.push_scalar(v.apply_to(e)))
    return VectorField(fwd.target, coeffs)


def form_zero_verdict(a, sampler=None, trials=64, eps=1e-9, seed=0):
    """Worst per-coefficient zero verdict for a form."""
    smp = sampler or a.chart.sampler()
    worst = ZeroVerdict(True, "symbolic")
    for _, c in sorted(a.terms.items()):
        v = zero_verdict(c, smp, trials, eps, seed)
        if not v.passed:
            return v
        if v.tier == "sampled":
            worst = v
    return worst


def form_is_zero(a, sampler=None, trials=64, eps=1e-9, seed=0):
    return form_zero_verdict(a, sampler, trials, eps, seed).passed


def forms_equal(a, b, sampler=None, trials=64, eps=1e-9, seed=0):
    return form_is_zero(a - b, sampler, trials, eps, seed)
