"""
Expression grammar for systems defined inside an experiment config.

Accepted input is a polynomial/trigonometric expression over the declared
coordinate names, their velocities (`<name>dot`), the control names and
numeric parameters. Powers may be written with `^` or `**`. The available
functions are listed in FUNCTIONS; any other name is rejected.
"""

from typing import Dict, Iterable, Mapping, Optional, Sequence
import logging

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from src.errors import ConfigError
from src.models.systems import LagrangianSystem

logger = logging.getLogger(__name__)

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "tanh": sp.tanh,
    "pi": sp.pi,
}

_GLOBALS = {
    "Integer": sp.Integer,
    "Float": sp.Float,
    "Rational": sp.Rational,
    "Symbol": sp.Symbol,
    **FUNCTIONS,
}

_TRANSFORMS = standard_transformations + (convert_xor,)


def velocity_name(coordinate: str) -> str:
    return f"{coordinate}dot"


def parse_expression(text: str, symbols: Mapping[str, sp.Symbol], parameters: Optional[Mapping[str, float]] = None) -> sp.Expr:
    """Parse `text` against the given symbols; parameters are substituted as numbers."""
    local = dict(symbols)
    for key, value in (parameters or {}).items():
        local[key] = sp.Float(value)
    try:
        expr = parse_expr(str(text), local_dict=local, global_dict=dict(_GLOBALS), transformations=_TRANSFORMS)
    except Exception as e:
        raise ConfigError(f"cannot parse expression {text!r}: {e}") from e

    expr = sp.sympify(expr)
    unknown = {s.name for s in expr.free_symbols} - set(symbols)
    if unknown:
        raise ConfigError(f"expression {text!r} uses undeclared names: {sorted(unknown)}")
    return expr


def build_system(
    name: str,
    coordinates: Sequence[str],
    controls: Sequence[str],
    lagrangian: str,
    forces: Sequence[str],
    parameters: Optional[Dict[str, float]] = None,
    separable: bool = False,
    equilibrium: Optional[Dict[str, Iterable[float]]] = None,
    cyclic: Sequence[str] = (),
) -> LagrangianSystem:
    """Build a LagrangianSystem from config strings."""
    if len(set(coordinates)) != len(coordinates) or len(set(controls)) != len(controls):
        raise ConfigError("coordinate and control names must be unique")

    q = tuple(sp.Symbol(c, real=True) for c in coordinates)
    qdot = tuple(sp.Symbol(velocity_name(c), real=True) for c in coordinates)
    u = tuple(sp.Symbol(c, real=True) for c in controls)
    symbols = {s.name: s for s in (*q, *qdot, *u)}
    if len(symbols) != len(q) + len(qdot) + len(u):
        raise ConfigError("coordinate, velocity and control names collide")

    L = parse_expression(lagrangian, symbols, parameters)
    if any(s in L.free_symbols for s in u):
        raise ConfigError("the lagrangian may not depend on controls")
    if len(forces) != len(coordinates):
        raise ConfigError(f"{len(forces)} force entries given for {len(coordinates)} coordinates")
    f = tuple(parse_expression(text, symbols, parameters) for text in forces)

    eq = None
    if equilibrium is not None:
        eq = (
            np.asarray(equilibrium.get("q", np.zeros(len(q))), dtype=float),
            np.asarray(equilibrium.get("qdot", np.zeros(len(q))), dtype=float),
            np.asarray(equilibrium.get("u", np.zeros(len(u))), dtype=float),
        )

    missing = [c for c in cyclic if c not in coordinates]
    if missing:
        raise ConfigError(f"cyclic coordinates not declared: {missing}")

    logger.info("Built custom system %s with n_q=%d n_u=%d", name, len(q), len(u))
    return LagrangianSystem(
        name=name,
        q=q,
        qdot=qdot,
        u=u,
        lagrangian_expr=L,
        force_expr=f,
        separable=separable,
        equilibrium=eq,
        cyclic=tuple(coordinates.index(c) for c in cyclic),
        parameters=dict(parameters or {}),
    )
