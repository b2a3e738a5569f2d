"""Goal solving over clause programs.

Semantics: a ground goal holds when some ground instance of a rule (or a
fact) with a matching head has a fully provable body AND no exception
declaration whose blocked atom matches the goal has a provable condition.
Condition variables not bound by the blocked atom are read existentially
over the active constant universe (the constants of the program, the fact
set and the goal).  Exceptions defeat the conclusion itself, so a firing
condition defeats every rule for that goal instance at once.

Programs must be stratified: no dependency cycle may pass through an
exception edge.  Within a stratum, positive recursion is fine; the solver
blocks goals that reoccur on the current derivation path, which computes
the least fixpoint on function-free programs.

Every query returns a full :class:`ProofNode` tree.  Exploration order is
fixed (fact set first, then rules in source order, bodies left to right,
body instantiations and exception checks in lexicographic constant order),
so identical inputs yield identical trees.
"""

from __future__ import annotations

import itertools
import sys
from dataclasses import dataclass, field

from .lang import Atom, Constant, ExceptionExpr, Program, Rule, Variable

Bindings = dict[str, Constant]


class ReasonerError(Exception):
    """Base class for solver errors."""


class UnstratifiableError(ReasonerError):
    """A dependency cycle passes through an exception edge."""

    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__(f"unstratifiable program: cycle through exception [{', '.join(self.cycle)}]")


class DepthLimitExceeded(ReasonerError):
    def __init__(self, limit: int):
        self.limit = limit
        super().__init__(f"proof search exceeded the depth limit of {limit} nested goals")


# ---------------------------------------------------------------------------
# Unification (ground right-hand side only)
# ---------------------------------------------------------------------------


def unify(a: Atom, b: Atom, bindings: Bindings | None = None) -> Bindings | None:
    """Extend ``bindings`` so that ``a`` instantiates to the ground atom ``b``.

    Returns the extended bindings, or ``None`` when they cannot be unified.
    """
    if not b.is_ground():
        raise ValueError("unify matches against ground atoms only")
    if a.predicate != b.predicate or a.arity != b.arity:
        return None
    out: Bindings = dict(bindings) if bindings else {}
    for ta, tb in zip(a.args, b.args):
        assert isinstance(tb, Constant)
        if isinstance(ta, Constant):
            if ta != tb:
                return None
        else:
            bound = out.get(ta.name)
            if bound is None:
                out[ta.name] = tb
            elif bound != tb:
                return None
    return out


def apply_bindings(atom: Atom, bindings: Bindings) -> Atom:
    args = tuple(
        bindings.get(t.name, t) if isinstance(t, Variable) else t for t in atom.args
    )
    return Atom(atom.predicate, args)


# ---------------------------------------------------------------------------
# Stratification
# ---------------------------------------------------------------------------

Strata = dict[str, int]


def _dependency_graph(program: Program) -> tuple[set[str], set[tuple[str, str]], set[tuple[str, str]]]:
    """Predicates plus positive (body -> head) and exception (condition -> blocked) edges."""
    preds = program.predicates()
    positive: set[tuple[str, str]] = set()
    negative: set[tuple[str, str]] = set()
    for rule in program.rules:
        for b in rule.body:
            positive.add((b.predicate, rule.head.predicate))
    for exc in program.exceptions:
        negative.add((exc.condition.predicate, exc.blocked.predicate))
    return preds, positive, negative


def _strongly_connected(preds: set[str], edges: dict[str, list[str]]) -> dict[str, int]:
    """Iterative Tarjan; maps each predicate to a component id."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    comp: dict[str, int] = {}
    counter = itertools.count()
    comp_counter = itertools.count()

    for root in sorted(preds):
        if root in index:
            continue
        work: list[tuple[str, int]] = [(root, 0)]
        while work:
            node, ei = work[-1]
            if ei == 0:
                index[node] = low[node] = next(counter)
                stack.append(node)
                on_stack.add(node)
            advanced = False
            succs = edges.get(node, [])
            while ei < len(succs):
                succ = succs[ei]
                ei += 1
                if succ not in index:
                    work[-1] = (node, ei)
                    work.append((succ, 0))
                    advanced = True
                    break
                if succ in on_stack:
                    low[node] = min(low[node], index[succ])
            if advanced:
                continue
            work.pop()
            if low[node] == index[node]:
                cid = next(comp_counter)
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    comp[member] = cid
                    if member == node:
                        break
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
    return comp


def check_stratified(program: Program) -> Strata:
    """Assign each predicate a stratum, or raise :class:`UnstratifiableError`.

    Rule heads sit at or above their body predicates; a blocked predicate
    sits strictly above its exception condition.
    """
    preds, positive, negative = _dependency_graph(program)
    if not preds:
        return {}
    adjacency: dict[str, list[str]] = {p: [] for p in preds}
    for u, v in sorted(positive | negative):
        adjacency[u].append(v)
    comp = _strongly_connected(preds, adjacency)
    for cond, blocked in sorted(negative):
        if comp[cond] == comp[blocked]:
            members = sorted(p for p in preds if comp[p] == comp[cond])
            raise UnstratifiableError(members)
    strata: Strata = {p: 0 for p in preds}
    for _ in range(len(preds) + 1):
        changed = False
        for b, h in positive:
            if strata[h] < strata[b]:
                strata[h] = strata[b]
                changed = True
        for c, b in negative:
            if strata[b] < strata[c] + 1:
                strata[b] = strata[c] + 1
                changed = True
        if not changed:
            return strata
    raise UnstratifiableError(sorted(preds))  # unreachable once cycles are rejected


# ---------------------------------------------------------------------------
# Proof trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExceptionCheck:
    """One exception examined for a goal, with the proof of its condition."""

    exception: ExceptionExpr | None
    node: ProofNode


@dataclass(frozen=True)
class ProofNode:
    goal: Atom
    proved: bool
    rule_used: Rule | None = None
    body_children: tuple[ProofNode, ...] = ()
    exception_children: tuple[ExceptionCheck, ...] = ()

    def count_nodes(self, show_exceptions: bool = True) -> int:
        total = 1
        for child in self.body_children:
            total += child.count_nodes(show_exceptions)
        if show_exceptions:
            for check in self.exception_children:
                total += check.node.count_nodes(show_exceptions)
        return total


def proof_is_sound(node: ProofNode) -> bool:
    """Structural soundness of a proof tree, checked at every node.

    A proved node must name the rule it used, all its body children must be
    proved and all its exception checks failed.  A failed node either shows
    no attempt at all or contains a failing body child or a proved
    exception condition.
    """
    if node.proved:
        if node.rule_used is None:
            return False
        if not all(c.proved for c in node.body_children):
            return False
        if any(e.node.proved for e in node.exception_children):
            return False
    else:
        has_children = bool(node.body_children or node.exception_children)
        if has_children:
            failing_body = any(not c.proved for c in node.body_children)
            fired_exception = any(e.node.proved for e in node.exception_children)
            if not (failing_body or fired_exception):
                return False
    return all(proof_is_sound(c) for c in node.body_children) and all(
        proof_is_sound(e.node) for e in node.exception_children
    )


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


def _universe(program: Program, facts: tuple[Atom, ...], goal: Atom | None) -> tuple[Constant, ...]:
    consts = set(program.constants())
    for f in facts:
        consts |= f.constants()
    if goal is not None:
        consts |= goal.constants()
    return tuple(sorted(consts, key=lambda c: c.text))


class _Solver:
    def __init__(self, program: Program, facts: tuple[Atom, ...], universe: tuple[Constant, ...],
                 depth_limit: int):
        self.program = program
        self.fact_set = frozenset(facts)
        self.universe = universe
        self.depth_limit = depth_limit
        self.memo: dict[Atom, ProofNode] = {}
        self.in_progress: set[Atom] = set()

    def prove_root(self, goal: Atom) -> ProofNode:
        node, _ = self._prove(goal, 1)
        return node

    def _prove(self, goal: Atom, depth: int) -> tuple[ProofNode, set[Atom]]:
        if depth > self.depth_limit:
            raise DepthLimitExceeded(self.depth_limit)
        cached = self.memo.get(goal)
        if cached is not None:
            return cached, set()
        if goal in self.in_progress:
            # Reoccurrence on the current path: this branch cannot supply a
            # new derivation, so it fails here.  The result depends on the
            # ancestor still being open, hence the block is reported upward.
            return ProofNode(goal, False), {goal}
        self.in_progress.add(goal)
        try:
            node, blocks = self._prove_open(goal, depth)
        finally:
            self.in_progress.discard(goal)
        blocks.discard(goal)
        if not blocks:
            # Only results that never touched a still-open ancestor are
            # context-free and safe to reuse.
            self.memo[goal] = node
        return node, blocks

    def _prove_open(self, goal: Atom, depth: int) -> tuple[ProofNode, set[Atom]]:
        blocks: set[Atom] = set()
        winner_rule: Rule | None = None
        winner_body: tuple[ProofNode, ...] | None = None
        failure_children: list[ProofNode] = []

        for rule, theta in self._candidates(goal):
            first_attempt: list[ProofNode] | None = None
            for body in self._body_instances(rule, theta):
                children: list[ProofNode] = []
                ok = True
                for atom in body:
                    child, b = self._prove(atom, depth + 1)
                    blocks |= b
                    children.append(child)
                    if not child.proved:
                        ok = False
                        break
                if first_attempt is None:
                    first_attempt = children
                if ok:
                    winner_rule = Rule(goal, body)
                    winner_body = tuple(children)
                    break
            if winner_body is not None:
                break
            if first_attempt:
                failure_children.extend(first_attempt)

        if winner_body is None:
            return ProofNode(goal, False, None, tuple(failure_children), ()), blocks

        checks: list[ExceptionCheck] = []
        fired = False
        for exc in self.program.exceptions:
            theta = unify(exc.blocked, goal)
            if theta is None:
                continue
            first_child: ProofNode | None = None
            fired_child: ProofNode | None = None
            for cond in self._condition_instances(exc.condition, theta):
                child, b = self._prove(cond, depth + 1)
                blocks |= b
                if first_child is None:
                    first_child = child
                if child.proved:
                    fired_child = child
                    break
            if fired_child is not None:
                checks.append(ExceptionCheck(exc, fired_child))
                fired = True
                break
            if first_child is not None:
                checks.append(ExceptionCheck(exc, first_child))

        node = ProofNode(goal, not fired, winner_rule, winner_body, tuple(checks))
        return node, blocks

    def _candidates(self, goal: Atom):
        if goal in self.fact_set:
            yield Rule(goal, ()), {}
        for rule in self.program.rules:
            theta = unify(rule.head, goal)
            if theta is not None:
                yield rule, theta

    def _free_assignments(self, free: list[str]):
        if not free:
            yield {}
            return
        for combo in itertools.product(self.universe, repeat=len(free)):
            yield dict(zip(free, combo))

    def _body_instances(self, rule: Rule, theta: Bindings):
        free: list[str] = []
        for atom in rule.body:
            for v in atom.variables():
                if v not in theta and v not in free:
                    free.append(v)
        for extra in self._free_assignments(free):
            full = {**theta, **extra}
            yield tuple(apply_bindings(b, full) for b in rule.body)

    def _condition_instances(self, condition: Atom, theta: Bindings):
        free = [v for v in condition.variables() if v not in theta]
        for extra in self._free_assignments(free):
            yield apply_bindings(condition, {**theta, **extra})


def _require_ground_inputs(facts: tuple[Atom, ...]):
    for f in facts:
        if not f.is_ground():
            raise ValueError(f"facts must be ground, got {f}")


def _raise_recursion_limit(depth_limit: int):
    wanted = depth_limit * 6 + 1000
    if sys.getrecursionlimit() < wanted:
        sys.setrecursionlimit(wanted)


def solve(program: Program, facts: list[Atom] | tuple[Atom, ...], goal: Atom, *,
          depth_limit: int = 10_000) -> ProofNode:
    """Decide a ground goal against a program plus a fact set.

    Returns the root of the proof tree; ``root.proved`` is the verdict.
    """
    if not goal.is_ground():
        raise ValueError("solve requires a ground goal; use all_solutions for open goals")
    facts = tuple(facts)
    _require_ground_inputs(facts)
    check_stratified(program)
    _raise_recursion_limit(depth_limit)
    universe = _universe(program, facts, goal)
    return _Solver(program, facts, universe, depth_limit).prove_root(goal)


def all_solutions(program: Program, facts: list[Atom] | tuple[Atom, ...], goal: Atom, *,
                  depth_limit: int = 10_000) -> list[Bindings]:
    """Ground bindings of the goal's variables under which the goal holds.

    Solutions come out in lexicographic order of the bound constants,
    variables ordered by first occurrence in the goal.
    """
    facts = tuple(facts)
    _require_ground_inputs(facts)
    check_stratified(program)
    _raise_recursion_limit(depth_limit)
    universe = _universe(program, facts, goal)
    solver = _Solver(program, facts, universe, depth_limit)
    variables = goal.variables()
    out: list[Bindings] = []
    if not variables:
        if solver.prove_root(goal).proved:
            out.append({})
        return out
    for combo in itertools.product(universe, repeat=len(variables)):
        bindings = dict(zip(variables, combo))
        instance = apply_bindings(goal, bindings)
        if solver.prove_root(instance).proved:
            out.append(bindings)
    return out
