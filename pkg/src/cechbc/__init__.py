"""Cochain-level verification engine for Bott-Chern/Aeppli calculus,
Chern-Weil transgression forms, and Hermitian residues on two-chart
coverings, with symbolic identity checking plus numerical quadrature."""

from .expr import (
    Add,
    Bump,
    Conj,
    ConjVar,
    Const,
    Cos,
    Div,
    Exp,
    Expression,
    ExprError,
    CertificateError,
    I,
    Log,
    Mul,
    PI,
    Param,
    PoleError,
    Pow,
    Sin,
    UnboundVariableError,
    Var,
    conj,
    eval_expr,
    normalize,
    parse_prefix,
    qi,
    subst,
    to_prefix,
    wirtinger_d,
    param_d,
)
from .sampling import (
    Assignment,
    InconclusiveError,
    Sampler,
    ZeroVerdict,
    is_zero,
    zero_verdict,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
