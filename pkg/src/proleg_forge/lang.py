"""Clause language for contract rule sets.

A program is a sequence of period-terminated clauses: ground facts, rules
written with ``<=``, and exception declarations::

    ownership(C, O) <= original_ownership(P, O), transfer(P, C, O).
    return_object(C, O) <= ownership(C, O), occupancy(D, O).
    exception(return_object(C, O), rightful_occupancy(O)).
    original_ownership("sarah", "the house").

Terms are function-free: an argument is either a constant or a variable.
Identifiers beginning with an uppercase letter or underscore are variables;
lowercase identifiers in argument position are shorthand constants; quoted
strings are constants that may contain any character ("garage A").  ``%``
starts a comment running to end of line.  The word ``exception`` is reserved
for exception clauses and cannot be used as a predicate.

The textual syntax is specific to this tool; it exists so rule sets,
fact files and traces have a stable, diffable form.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

_PREDICATE_RE = re.compile(r"[a-z][a-z0-9_]*\Z")
_VARIABLE_RE = re.compile(r"[A-Z_][a-zA-Z0-9_]*\Z")
_BARE_IDENT_RE = re.compile(r"[a-z][a-zA-Z0-9_]*\Z")

RESERVED_PREDICATE = "exception"


class LangError(Exception):
    """Base class for clause-language errors."""


class ProlegSyntaxError(LangError):
    """Lexical or grammatical error, located by line and column."""

    def __init__(self, message: str, line: int, col: int, expected: str | None = None):
        self.line = line
        self.col = col
        self.expected = expected
        detail = f"{message} at line {line}, column {col}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)


class RangeRestrictionError(LangError):
    """A head variable does not occur in the rule body."""

    def __init__(self, rule_index: int, variables: list[str], line: int | None = None):
        self.rule_index = rule_index
        self.variables = variables
        where = f" (line {line})" if line is not None else ""
        super().__init__(
            f"rule {rule_index}{where}: head variable(s) {', '.join(variables)} "
            "do not occur in the body"
        )


class NonGroundFactError(LangError):
    """A bodyless clause contains variables."""

    def __init__(self, rule_index: int, line: int | None = None):
        self.rule_index = rule_index
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"fact {rule_index}{where} is not ground")


# ---------------------------------------------------------------------------
# Abstract syntax
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("constants must be non-empty")


@dataclass(frozen=True)
class Variable:
    name: str

    def __post_init__(self):
        if not _VARIABLE_RE.match(self.name):
            raise ValueError(f"invalid variable name {self.name!r}")


Term = Constant | Variable


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[Term, ...] = ()

    def __post_init__(self):
        if not _PREDICATE_RE.match(self.predicate):
            raise ValueError(f"invalid predicate name {self.predicate!r}")
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    @property
    def arity(self) -> int:
        return len(self.args)

    def is_ground(self) -> bool:
        return all(isinstance(a, Constant) for a in self.args)

    def variables(self) -> list[str]:
        """Variable names in first-occurrence order, without duplicates."""
        seen: list[str] = []
        for a in self.args:
            if isinstance(a, Variable) and a.name not in seen:
                seen.append(a.name)
        return seen

    def constants(self) -> set[Constant]:
        return {a for a in self.args if isinstance(a, Constant)}


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple[Atom, ...] = ()

    def __post_init__(self):
        if not isinstance(self.body, tuple):
            object.__setattr__(self, "body", tuple(self.body))

    @property
    def is_fact(self) -> bool:
        return not self.body

    def atoms(self) -> list[Atom]:
        return [self.head, *self.body]


@dataclass(frozen=True)
class ExceptionExpr:
    blocked: Atom
    condition: Atom


@dataclass(frozen=True)
class Program:
    rules: tuple[Rule, ...] = ()
    exceptions: tuple[ExceptionExpr, ...] = ()
    goal_template: Atom | None = None

    def __post_init__(self):
        if not isinstance(self.rules, tuple):
            object.__setattr__(self, "rules", tuple(self.rules))
        if not isinstance(self.exceptions, tuple):
            object.__setattr__(self, "exceptions", tuple(self.exceptions))

    def atoms(self) -> list[Atom]:
        out: list[Atom] = []
        for r in self.rules:
            out.extend(r.atoms())
        for e in self.exceptions:
            out.append(e.blocked)
            out.append(e.condition)
        return out

    def predicates(self) -> set[str]:
        return {a.predicate for a in self.atoms()}

    def constants(self) -> set[Constant]:
        out: set[Constant] = set()
        for a in self.atoms():
            out |= a.constants()
        return out


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}


@dataclass(frozen=True)
class _Token:
    kind: str  # ident var string ( ) , . <= eof
    value: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def advance(k: int = 1):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance()
            continue
        if ch == "%":
            while i < n and source[i] != "\n":
                advance()
            continue
        start_line, start_col = line, col
        if ch in "(),.":
            tokens.append(_Token(ch, ch, start_line, start_col))
            advance()
            continue
        if ch == "<":
            if i + 1 < n and source[i + 1] == "=":
                tokens.append(_Token("<=", "<=", start_line, start_col))
                advance(2)
                continue
            raise ProlegSyntaxError("stray '<'", start_line, start_col, expected="'<='")
        if ch == '"':
            advance()
            buf: list[str] = []
            while True:
                if i >= n or source[i] == "\n":
                    raise ProlegSyntaxError(
                        "unterminated string", start_line, start_col, expected='closing \'"\''
                    )
                c = source[i]
                if c == '"':
                    advance()
                    break
                if c == "\\":
                    advance()
                    if i >= n:
                        raise ProlegSyntaxError(
                            "unterminated escape", line, col, expected="escape character"
                        )
                    esc = source[i]
                    if esc not in _ESCAPES:
                        raise ProlegSyntaxError(f"unknown escape '\\{esc}'", line, col)
                    buf.append(_ESCAPES[esc])
                    advance()
                    continue
                buf.append(c)
                advance()
            tokens.append(_Token("string", "".join(buf), start_line, start_col))
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            kind = "var" if word[0] == "_" or word[0].isupper() else "ident"
            tokens.append(_Token(kind, word, start_line, start_col))
            advance(j - i)
            continue
        raise ProlegSyntaxError(f"unexpected character {ch!r}", start_line, start_col)
    tokens.append(_Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def take(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def expect(self, kind: str, expected: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ProlegSyntaxError(
                f"unexpected {self._show(tok)}", tok.line, tok.col, expected=expected
            )
        return self.take()

    @staticmethod
    def _show(tok: _Token) -> str:
        return "end of input" if tok.kind == "eof" else repr(tok.value)

    def atom(self, allow_reserved: bool = False) -> Atom:
        tok = self.expect("ident", "predicate name")
        if not _PREDICATE_RE.match(tok.value):
            raise ProlegSyntaxError(
                f"invalid predicate name {tok.value!r}", tok.line, tok.col,
                expected="lowercase identifier",
            )
        if tok.value == RESERVED_PREDICATE and not allow_reserved:
            raise ProlegSyntaxError(
                f"'{RESERVED_PREDICATE}' is reserved for exception clauses",
                tok.line, tok.col,
            )
        args: list[Term] = []
        if self.peek().kind == "(":
            self.take()
            while True:
                args.append(self.term())
                if self.peek().kind == ",":
                    self.take()
                    continue
                self.expect(")", "',' or ')'")
                break
        return Atom(tok.value, tuple(args))

    def term(self) -> Term:
        tok = self.peek()
        if tok.kind == "string":
            self.take()
            if not tok.value:
                raise ProlegSyntaxError("empty constant", tok.line, tok.col)
            return Constant(tok.value)
        if tok.kind == "var":
            self.take()
            return Variable(tok.value)
        if tok.kind == "ident":
            self.take()
            return Constant(tok.value)
        raise ProlegSyntaxError(
            f"unexpected {self._show(tok)}", tok.line, tok.col,
            expected="constant, string or variable",
        )


def _canonical_rule_key(rule: Rule) -> tuple:
    """Rule identity up to variable renaming."""
    names: dict[str, int] = {}

    def canon(atom: Atom) -> tuple:
        parts: list[object] = [atom.predicate]
        for a in atom.args:
            if isinstance(a, Constant):
                parts.append(("c", a.text))
            else:
                parts.append(("v", names.setdefault(a.name, len(names))))
        return tuple(parts)

    return (canon(rule.head), tuple(canon(b) for b in rule.body))


def _canonical_exception_key(exc: ExceptionExpr) -> tuple:
    return _canonical_rule_key(Rule(exc.blocked, (exc.condition,)))


def parse_program(source: str) -> Program:
    """Parse clause text into a :class:`Program`.

    Every distinct clause of the source appears exactly once in the result;
    clauses that are identical up to variable renaming are kept once.
    Raises :class:`ProlegSyntaxError`, :class:`RangeRestrictionError` or
    :class:`NonGroundFactError`.
    """
    parser = _Parser(_tokenize(source))
    rules: list[Rule] = []
    exceptions: list[ExceptionExpr] = []
    rule_keys: set[tuple] = set()
    exc_keys: set[tuple] = set()

    while parser.peek().kind != "eof":
        tok = parser.peek()
        if tok.kind != "ident":
            raise ProlegSyntaxError(
                f"unexpected {_Parser._show(tok)}", tok.line, tok.col, expected="a clause"
            )
        if tok.value == RESERVED_PREDICATE:
            if parser.peek(1).kind != "(":
                raise ProlegSyntaxError(
                    f"'{RESERVED_PREDICATE}' is reserved for exception clauses",
                    tok.line, tok.col, expected=f"{RESERVED_PREDICATE}(Blocked, Condition)",
                )
            parser.take()
            parser.take()
            blocked = parser.atom()
            parser.expect(",", "','")
            condition = parser.atom()
            parser.expect(")", "')'")
            parser.expect(".", "'.'")
            exc = ExceptionExpr(blocked, condition)
            key = _canonical_exception_key(exc)
            if key not in exc_keys:
                exc_keys.add(key)
                exceptions.append(exc)
            continue
        head = parser.atom()
        nxt = parser.peek()
        if nxt.kind == ".":
            parser.take()
            if not head.is_ground():
                raise NonGroundFactError(len(rules), line=tok.line)
            rule = Rule(head, ())
        elif nxt.kind == "<=":
            parser.take()
            body: list[Atom] = [parser.atom()]
            while parser.peek().kind == ",":
                parser.take()
                body.append(parser.atom())
            parser.expect(".", "'.'")
            body_vars = {v for b in body for v in b.variables()}
            unbound = [v for v in head.variables() if v not in body_vars]
            if unbound:
                raise RangeRestrictionError(len(rules), unbound, line=tok.line)
            rule = Rule(head, tuple(body))
        else:
            raise ProlegSyntaxError(
                f"unexpected {_Parser._show(nxt)}", nxt.line, nxt.col, expected="'.' or '<='"
            )
        key = _canonical_rule_key(rule)
        if key not in rule_keys:
            rule_keys.add(key)
            rules.append(rule)
    return Program(tuple(rules), tuple(exceptions))


def parse_atom(source: str) -> Atom:
    """Parse a single atom, with an optional trailing period."""
    parser = _Parser(_tokenize(source))
    atom = parser.atom()
    if parser.peek().kind == ".":
        parser.take()
    tok = parser.peek()
    if tok.kind != "eof":
        raise ProlegSyntaxError(
            f"unexpected {_Parser._show(tok)}", tok.line, tok.col, expected="end of input"
        )
    return atom


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_RENDER_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r"}


def render_term(term: Term) -> str:
    if isinstance(term, Variable):
        return term.name
    escaped = "".join(_RENDER_ESCAPES.get(c, c) for c in term.text)
    return f'"{escaped}"'


def render_atom(atom: Atom) -> str:
    if not atom.args:
        return atom.predicate
    return f"{atom.predicate}({','.join(render_term(a) for a in atom.args)})"


def render_rule(rule: Rule) -> str:
    if rule.is_fact:
        return f"{render_atom(rule.head)}."
    body = ", ".join(render_atom(b) for b in rule.body)
    return f"{render_atom(rule.head)} <= {body}."


def render_exception(exc: ExceptionExpr) -> str:
    return f"exception({render_atom(exc.blocked)}, {render_atom(exc.condition)})."


def render_program(program: Program) -> str:
    lines = [render_rule(r) for r in program.rules]
    lines.extend(render_exception(e) for e in program.exceptions)
    return "".join(line + "\n" for line in lines)
