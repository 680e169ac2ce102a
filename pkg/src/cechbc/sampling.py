"""Assignments, domain samplers, and the two-tier zero test.

A zero verdict is "symbolic" when the normal form is literally 0 and
"sampled" otherwise; sampled verdicts carry (seed, trials, eps) so reports
can state exactly how strong the evidence is.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from . import expr as ex
from .expr import ExprError, PoleError, eval_expr, free_vars, is_syntactic_zero, normalize


class InconclusiveError(ExprError):
    """The sampler could not produce enough pole-free assignments."""


@dataclass(frozen=True)
class Assignment:
    """Bindings for evaluation; conjugates are implied by the coordinates."""

    coords: dict
    params: dict = field(default_factory=dict)


class Sampler:
    """Draws assignments for a set of coordinates and parameters.

    Coordinates are sampled from an annulus 0.35 <= |z| <= 1.25 (avoiding
    the origin keeps generic rational expressions off their poles);
    parameter ranges default to [-1, 1] and may be declared per name.
    ``avoid`` lists expressions that must stay well away from zero, used
    for declared chart domains such as "y != 0".
    """

    def __init__(self, coords=(), params=(), avoid=(), param_ranges=None,
                 rmin=0.35, rmax=1.25):
        self.coords = tuple(coords)
        self.params = tuple(params)
        self.avoid = tuple(avoid)
        self.param_ranges = dict(param_ranges or {})
        self.rmin = rmin
        self.rmax = rmax

    def extended(self, coords=(), params=()):
        cs = list(self.coords) + [c for c in coords if c not in self.coords]
        ps = list(self.params) + [p for p in params if p not in self.params]
        return Sampler(cs, ps, self.avoid, self.param_ranges, self.rmin, self.rmax)

    def sample(self, rng):
        c = {}
        for name in self.coords:
            r = rng.uniform(self.rmin, self.rmax)
            t = rng.uniform(0.0, 2.0 * math.pi)
            c[name] = complex(r * math.cos(t), r * math.sin(t))
        p = {}
        for name in self.params:
            lo, hi = self.param_ranges.get(name, (-1.0, 1.0))
            p[name] = rng.uniform(lo, hi)
        return Assignment(c, p)

    def sample_admissible(self, rng, extra_avoid=(), max_tries=200):
        for _ in range(max_tries):
            a = self.sample(rng)
            ok = True
            for g in tuple(self.avoid) + tuple(extra_avoid):
                try:
                    if abs(eval_expr(g, a)) < 1e-3:
                        ok = False
                        break
                except (PoleError, ExprError):
                    ok = False
                    break
            if ok:
                return a
        raise InconclusiveError("sampler exhausted: could not find admissible point")


def sampler_for(e, extra=None):
    """Sampler covering all free variables of e (merged into ``extra``)."""
    cs, js, ps = free_vars(e)
    names = sorted(cs | js)
    params = sorted(ps)
    if extra is not None:
        return extra.extended(names, params)
    return Sampler(names, params)


@dataclass(frozen=True)
class ZeroVerdict:
    passed: bool
    tier: str  # "symbolic" | "sampled"
    seed: int | None = None
    trials: int = 0
    eps: float = 0.0
    witness: Assignment | None = None
    magnitude: float = 0.0

    def label(self):
        if self.tier == "symbolic":
            return "symbolic"
        return f"sampled (seed={self.seed}, trials={self.trials}, eps={self.eps:g})"


def _scaled_value(e, a):
    """Value and cancellation scale of the normal-form numerator at a.

    The scale is the sum of term magnitudes, so the threshold adapts to
    how much cancellation the evaluation went through (values pre-scaled
    to O(1) in the spec's terms).
    """
    nf = ex._nf(e)
    num_v = 0j
    scale = 0.0
    for mono, c in nf.num.items():
        t = c.to_complex()
        for atom, k in mono:
            t *= eval_expr(ex._atom_to_expr(atom), a) ** k
        num_v += t
        scale += abs(t)
    den_v = 0j
    den_scale = 0.0
    for mono, c in nf.den.items():
        t = c.to_complex()
        for atom, k in mono:
            t *= eval_expr(ex._atom_to_expr(atom), a) ** k
        den_v += t
        den_scale += abs(t)
    if abs(den_v) < 1e-9 * max(1.0, den_scale):
        raise PoleError("sample point too close to a pole")
    return num_v, max(1.0, scale)


def zero_verdict(e, sampler=None, trials=64, eps=1e-9, seed=0):
    """Two-tier zero test with a labeled verdict.

    Symbolic tier: the canonical form is literally zero. Sampled tier:
    |value| < eps (relative to the term-magnitude scale) at ``trials``
    admissible random assignments. Sampler exhaustion raises
    InconclusiveError, which is distinct from a False verdict.
    """
    e = normalize(e)
    if is_syntactic_zero(e):
        return ZeroVerdict(True, "symbolic")
    smp = sampler_for(e, sampler)
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(trials):
        got = False
        for _attempt in range(50):
            a = smp.sample_admissible(rng)
            try:
                v, scale = _scaled_value(e, a)
            except (PoleError, ExprError):
                continue
            got = True
            break
        if not got:
            raise InconclusiveError("could not evaluate expression away from poles")
        mag = abs(v) / scale
        worst = max(worst, mag)
        if mag > eps:
            return ZeroVerdict(False, "sampled", seed, trials, eps, a, mag)
    return ZeroVerdict(True, "sampled", seed, trials, eps, None, worst)


def is_zero(e, sampler=None, trials=64, eps=1e-9, seed=0):
    """Boolean form of zero_verdict (raises InconclusiveError on exhaustion)."""
    return zero_verdict(e, sampler, trials, eps, seed).passed


def exprs_equal(a, b, sampler=None, trials=64, eps=1e-9, seed=0):
    return is_zero(a - b, sampler, trials, eps, seed)
