"""proleg-forge: synthetic legal-case datasets, a lookup-table case parser,
and an exception-aware Horn reasoner with explainable proof trees."""

__version__ = "0.1.0"

from .lang import (
    Atom,
    Constant,
    ExceptionExpr,
    Program,
    Rule,
    Variable,
    parse_atom,
    parse_program,
    render_atom,
    render_program,
)
from .oracle import brute_force_entails, brute_force_model
from .reasoner import (
    ProofNode,
    all_solutions,
    check_stratified,
    proof_is_sound,
    solve,
    unify,
)

__all__ = [
    "__version__",
    "Atom",
    "Constant",
    "ExceptionExpr",
    "Program",
    "ProofNode",
    "Rule",
    "Variable",
    "all_solutions",
    "brute_force_entails",
    "brute_force_model",
    "check_stratified",
    "parse_atom",
    "parse_program",
    "proof_is_sound",
    "render_atom",
    "render_program",
    "solve",
    "unify",
]
