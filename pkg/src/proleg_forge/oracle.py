"""Bottom-up reference model for clause programs.

Grounds every clause over the finite constant universe and computes the set
of true atoms stratum by stratum: Horn closure within a stratum, with
conclusions suppressed whenever some ground exception condition already
holds in the strata below.  Function-free terms keep the whole computation
finite.

This module deliberately shares no inference machinery with
:mod:`proleg_forge.reasoner` (only the syntax types and ``unify`` may be
common ground); the two implementations check each other in the test suite.
"""

from __future__ import annotations

import itertools

from .lang import Atom, Constant, Program, Variable
from .reasoner import UnstratifiableError


def _relaxation_strata(program: Program) -> dict[str, int]:
    preds = program.predicates()
    strata = {p: 0 for p in preds}
    last_changed: list[str] = []
    for _ in range(len(preds) + 1):
        last_changed = []
        for rule in program.rules:
            head = rule.head.predicate
            for b in rule.body:
                if strata[head] < strata[b.predicate]:
                    strata[head] = strata[b.predicate]
                    last_changed.append(head)
        for exc in program.exceptions:
            blocked = exc.blocked.predicate
            wanted = strata[exc.condition.predicate] + 1
            if strata[blocked] < wanted:
                strata[blocked] = wanted
                last_changed.append(blocked)
        if not last_changed:
            return strata
    raise UnstratifiableError(sorted(set(last_changed)))


def _assignments(variables: list[str], universe: tuple[Constant, ...]):
    if not variables:
        yield {}
        return
    for combo in itertools.product(universe, repeat=len(variables)):
        yield dict(zip(variables, combo))


def _instantiate(atom: Atom, assignment: dict[str, Constant]) -> Atom:
    args = tuple(
        assignment[t.name] if isinstance(t, Variable) else t for t in atom.args
    )
    return Atom(atom.predicate, args)


def brute_force_model(program: Program, facts: list[Atom] | tuple[Atom, ...],
                      extra_constants: tuple[Constant, ...] = ()) -> frozenset[Atom]:
    """The full set of true ground atoms for ``program`` plus ``facts``."""
    facts = tuple(facts)
    strata = _relaxation_strata(program)
    consts = set(program.constants()) | set(extra_constants)
    for f in facts:
        consts |= f.constants()
    universe = tuple(sorted(consts, key=lambda c: c.text))

    ground_rules: list[tuple[Atom, tuple[Atom, ...]]] = []
    for rule in program.rules:
        variables: list[str] = []
        for atom in rule.atoms():
            for v in atom.variables():
                if v not in variables:
                    variables.append(v)
        for assignment in _assignments(variables, universe):
            head = _instantiate(rule.head, assignment)
            body = tuple(_instantiate(b, assignment) for b in rule.body)
            ground_rules.append((head, body))

    ground_exceptions: list[tuple[Atom, Atom]] = []
    for exc in program.exceptions:
        variables = list(exc.blocked.variables())
        for v in exc.condition.variables():
            if v not in variables:
                variables.append(v)
        for assignment in _assignments(variables, universe):
            ground_exceptions.append(
                (_instantiate(exc.blocked, assignment), _instantiate(exc.condition, assignment))
            )

    def stratum_of(atom: Atom) -> int:
        return strata.get(atom.predicate, 0)

    max_stratum = max(strata.values(), default=0)
    true: set[Atom] = set()
    for level in range(max_stratum + 1):
        defeated = {
            blocked
            for blocked, condition in ground_exceptions
            if stratum_of(blocked) == level and condition in true
        }
        layer: list[tuple[Atom, tuple[Atom, ...]]] = [
            (head, body) for head, body in ground_rules if stratum_of(head) == level
        ]
        layer.extend((f, ()) for f in facts if stratum_of(f) == level)
        changed = True
        while changed:
            changed = False
            for head, body in layer:
                if head in true or head in defeated:
                    continue
                if all(b in true for b in body):
                    true.add(head)
                    changed = True
    return frozenset(true)


def brute_force_entails(program: Program, facts: list[Atom] | tuple[Atom, ...],
                        goal: Atom) -> bool:
    """Truth of a single ground goal, computed bottom-up."""
    if not goal.is_ground():
        raise ValueError("the reference model decides ground goals only")
    return goal in brute_force_model(program, facts, tuple(goal.constants()))
