"""Render proof trees as indented text, DOT graphs, or canonical JSON.

All three formats walk the tree in the same order, so node counts agree
across formats for identical options.  JSON output is canonical (sorted
keys, no insignificant whitespace, UTF-8) and reparses into an equal tree
shape via :func:`parse_trace`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .lang import Rule, parse_atom, parse_program, render_atom, render_rule
from .reasoner import ExceptionCheck, ProofNode

_FORMATS = ("text", "dot", "json")


@dataclass(frozen=True)
class RenderOptions:
    format: str = "text"
    max_depth: int | None = None
    show_exceptions: bool = True

    def __post_init__(self):
        if self.format not in _FORMATS:
            raise ValueError(f"format must be one of {_FORMATS}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be at least 1 when set")


def _children(node: ProofNode, options: RenderOptions) -> list[tuple[ProofNode, bool]]:
    pairs: list[tuple[ProofNode, bool]] = [(c, False) for c in node.body_children]
    if options.show_exceptions:
        pairs.extend((check.node, True) for check in node.exception_children)
    return pairs


def _truncated(depth: int, options: RenderOptions) -> bool:
    return options.max_depth is not None and depth >= options.max_depth


def render_text(proof: ProofNode, options: RenderOptions = RenderOptions()) -> str:
    lines: list[str] = []

    def walk(node: ProofNode, depth: int, via_exception: bool):
        mark = "[+]" if node.proved else "[-]"
        prefix = "exception: " if via_exception else ""
        line = "  " * (depth - 1) + prefix + mark + " " + render_atom(node.goal)
        if node.rule_used is not None and node.rule_used.is_fact:
            line += "  (fact)"
        lines.append(line)
        kids = _children(node, options)
        if not kids:
            return
        if _truncated(depth, options):
            lines.append("  " * depth + "...")
            return
        for child, exc in kids:
            walk(child, depth + 1, exc)

    walk(proof, 1, False)
    return "\n".join(lines) + "\n"


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def render_dot(proof: ProofNode, options: RenderOptions = RenderOptions()) -> str:
    node_lines: list[str] = []
    edge_lines: list[str] = []
    counter = iter(range(10**9))

    def walk(node: ProofNode, depth: int) -> int:
        nid = next(counter)
        verdict = "PROVED" if node.proved else "FAILED"
        style = "solid" if node.proved else "dashed"
        label = _dot_escape(render_atom(node.goal)) + "\\n" + verdict
        node_lines.append(f'  n{nid} [label="{label}", style={style}];')
        if _truncated(depth, options):
            return nid
        for child, exc in _children(node, options):
            cid = walk(child, depth + 1)
            if exc:
                edge_lines.append(f'  n{nid} -> n{cid} [style=dashed, label="exception"];')
            else:
                edge_lines.append(f"  n{nid} -> n{cid} [style=solid];")
        return nid

    walk(proof, 1)
    return "digraph proof {\n" + "\n".join(node_lines + edge_lines) + "\n}\n"


def _to_document(node: ProofNode, depth: int, options: RenderOptions) -> dict:
    doc = {
        "goal": render_atom(node.goal),
        "result": "proved" if node.proved else "failed",
        "rule": render_rule(node.rule_used) if node.rule_used is not None else None,
        "body": [],
        "exceptions": [],
    }
    if not _truncated(depth, options):
        for child, exc in _children(node, options):
            key = "exceptions" if exc else "body"
            doc[key].append(_to_document(child, depth + 1, options))
    return doc


def render_json(proof: ProofNode, options: RenderOptions = RenderOptions()) -> str:
    doc = _to_document(proof, 1, options)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def parse_trace(text: str) -> ProofNode:
    """Rebuild a proof tree from :func:`render_json` output.

    The exception annotations are not part of the JSON document, so the
    rebuilt checks carry ``exception=None``.
    """

    def build(doc: dict) -> ProofNode:
        rule: Rule | None = None
        if doc.get("rule") is not None:
            parsed = parse_program(doc["rule"])
            rule = parsed.rules[0]
        return ProofNode(
            goal=parse_atom(doc["goal"]),
            proved=doc["result"] == "proved",
            rule_used=rule,
            body_children=tuple(build(b) for b in doc.get("body", [])),
            exception_children=tuple(
                ExceptionCheck(None, build(e)) for e in doc.get("exceptions", [])
            ),
        )

    return build(json.loads(text))


def render(proof: ProofNode, options: RenderOptions = RenderOptions()) -> str:
    if options.format == "text":
        return render_text(proof, options)
    if options.format == "dot":
        return render_dot(proof, options)
    return render_json(proof, options)
