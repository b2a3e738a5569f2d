"""Case text to ground facts, via a gazetteer and a fact-schema lookup table.

Training walks an annotated dataset once: every entity surface feeds the
gazetteer (surface -> contract/role, with frequencies), and every sample's
facts are abstracted over its entity surfaces to recover the fact templates
for that contract and role set.  Parsing then runs dictionary extraction
(longest match wins, leftmost first, non-overlapping), infers the contract,
and instantiates the looked-up templates with the recognized surfaces.

A trained model is immutable and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

from .augment import (
    Dataset,
    EntitySpan,
    SlotSchema,
    Template,
    instantiate_atom,
    normalize_surface,
)
from .lang import Atom, Constant, parse_atom, render_atom
from .reasoner import solve


class SemParserError(Exception):
    pass


class ConflictError(SemParserError):
    def __init__(self, contract_id: str, roles: frozenset[str]):
        self.contract_id = contract_id
        self.roles = roles
        super().__init__(
            f"contract {contract_id} maps role set {{{', '.join(sorted(roles))}}} "
            "to contradictory fact-template sets"
        )


class NoContractError(SemParserError):
    pass


class EmptyExtractionError(SemParserError):
    pass


class ModelFormatError(SemParserError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    code: str  # ambiguous_contract | ambiguous_role | partial_schema | unmatched_surface
    message: str


@dataclass(frozen=True)
class ExtractedSpan:
    surface: str
    start: int
    end: int
    candidates: tuple[tuple[str, str], ...]  # (contract_id, role), sorted


class Gazetteer:
    """Normalized surface text -> {(contract, role): training count}."""

    def __init__(self):
        self.entries: dict[str, dict[tuple[str, str], int]] = {}

    def add(self, surface: str, contract_id: str, role: str, count: int = 1):
        norm = normalize_surface(surface)
        if not norm:
            raise ValueError("cannot index an empty surface")
        self.entries.setdefault(norm, {})
        key = (contract_id, role)
        self.entries[norm][key] = self.entries[norm].get(key, 0) + count

    def candidates(self, surface: str) -> dict[tuple[str, str], int]:
        return self.entries.get(normalize_surface(surface), {})

    def surfaces(self) -> list[str]:
        return sorted(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, Gazetteer) and self.entries == other.entries

    def __len__(self) -> int:
        return len(self.entries)


SchemaTable = dict[tuple[str, frozenset[str]], tuple[Atom, ...]]


@dataclass
class ParserModel:
    gazetteer: Gazetteer
    schema_table: SchemaTable
    goals: dict[str, Atom]
    schemas: dict[str, SlotSchema]
    provenance: dict
    _matcher: re.Pattern | None = field(default=None, repr=False, compare=False)

    def matcher(self) -> re.Pattern | None:
        if self._matcher is None and self.gazetteer.entries:
            surfaces = sorted(self.gazetteer.entries, key=lambda s: (-len(s), s))
            alternatives = [
                r"\s+".join(re.escape(tok) for tok in s.split()) for s in surfaces
            ]
            pattern = r"(?<!\w)(?:" + "|".join(alternatives) + r")(?!\w)"
            self._matcher = re.compile(pattern, re.IGNORECASE)
        return self._matcher

    def role_frequency(self, contract_id: str, role: str) -> int:
        total = 0
        for options in self.gazetteer.entries.values():
            total += options.get((contract_id, role), 0)
        return total


@dataclass
class ParseResult:
    contract_id: str
    extraction: tuple[EntitySpan, ...]
    facts: tuple[Atom, ...]
    diagnostics: list[Diagnostic] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _abstract_facts(sample) -> frozenset[str]:
    """Sample facts with every full-argument surface replaced by its role."""
    surface_to_role = {e.surface: e.role for e in sample.entities}
    abstracted = []
    for fact in sample.facts:
        args = []
        for arg in fact.args:
            if isinstance(arg, Constant) and arg.text in surface_to_role:
                args.append(Constant("{" + surface_to_role[arg.text] + "}"))
            else:
                args.append(arg)
        abstracted.append(render_atom(Atom(fact.predicate, tuple(args))))
    return frozenset(abstracted)


def _dataset_fingerprint(dataset: Dataset) -> str:
    digest = hashlib.sha256()
    for sample in dataset.samples:
        digest.update(sample.id.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(sample.case_text.encode("utf-8"))
        digest.update(b"\x01")
    return digest.hexdigest()[:16]


def train_model(train: Dataset) -> ParserModel:
    """Derive the gazetteer and the fact-schema lookup table from a dataset.

    Raises :class:`ConflictError` when two samples with the same contract
    and role set disagree on their abstracted fact templates; the lookup
    table could not reproduce both.
    """
    if not train.samples:
        raise ValueError("cannot train on an empty dataset")
    gazetteer = Gazetteer()
    table_sets: dict[tuple[str, frozenset[str]], frozenset[str]] = {}
    for sample in train.samples:
        roles = frozenset(e.role for e in sample.entities)
        for span in sample.entities:
            gazetteer.add(span.surface, sample.contract_id, span.role)
        abstracted = _abstract_facts(sample)
        key = (sample.contract_id, roles)
        existing = table_sets.get(key)
        if existing is None:
            table_sets[key] = abstracted
        elif existing != abstracted:
            raise ConflictError(sample.contract_id, roles)
    schema_table: SchemaTable = {
        key: tuple(parse_atom(f) for f in sorted(facts))
        for key, facts in table_sets.items()
    }
    goals = {cid: schema.goal_template for cid, schema in train.schemas.items()}
    return ParserModel(
        gazetteer=gazetteer,
        schema_table=schema_table,
        goals=goals,
        schemas=dict(train.schemas),
        provenance={
            "dataset_id": _dataset_fingerprint(train),
            "sample_count": len(train.samples),
        },
    )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def extract_entities(model: ParserModel, text: str) -> list[ExtractedSpan]:
    """Dictionary scan: longest match wins at each position, leftmost first,
    non-overlapping.  Matching ignores case and whitespace runs; spans index
    the original text."""
    matcher = model.matcher()
    if matcher is None:
        return []
    spans: list[ExtractedSpan] = []
    for match in matcher.finditer(text):
        surface = match.group(0)
        options = model.gazetteer.candidates(surface)
        if not options:
            continue
        spans.append(
            ExtractedSpan(
                surface=surface,
                start=match.start(),
                end=match.end(),
                candidates=tuple(sorted(options)),
            )
        )
    return spans


def infer_contract(model: ParserModel, spans: list[ExtractedSpan]) -> tuple[str, list[Diagnostic]]:
    """The contract covering the most distinct roles, then the most distinct
    surfaces; ties resolve to the lexicographically first contract id."""
    if not spans:
        raise ValueError("cannot infer a contract from an empty extraction")
    roles_by_contract: dict[str, set[str]] = {}
    surfaces_by_contract: dict[str, set[str]] = {}
    for span in spans:
        for contract_id, role in span.candidates:
            roles_by_contract.setdefault(contract_id, set()).add(role)
            surfaces_by_contract.setdefault(contract_id, set()).add(
                normalize_surface(span.surface)
            )
    if not roles_by_contract:
        raise NoContractError("no extracted surface maps to any contract")
    ranked = sorted(
        roles_by_contract,
        key=lambda cid: (-len(roles_by_contract[cid]), -len(surfaces_by_contract[cid]), cid),
    )
    winner = ranked[0]
    diagnostics: list[Diagnostic] = []
    if len(ranked) > 1:
        runner_up = ranked[1]
        if (len(roles_by_contract[winner]), len(surfaces_by_contract[winner])) == (
            len(roles_by_contract[runner_up]), len(surfaces_by_contract[runner_up])
        ):
            diagnostics.append(
                Diagnostic(
                    "ambiguous_contract",
                    f"contracts {winner} and {runner_up} tie; chose {winner}",
                )
            )
    return winner, diagnostics


def _resolve_role(model: ParserModel, contract_id: str, span: ExtractedSpan,
                  roles: list[str], diagnostics: list[Diagnostic]) -> str:
    if len(roles) == 1:
        return roles[0]
    ranked = sorted(roles, key=lambda r: (-model.role_frequency(contract_id, r), r))
    diagnostics.append(
        Diagnostic(
            "ambiguous_role",
            f"surface {span.surface!r} could be {', '.join(sorted(roles))} in "
            f"{contract_id}; chose {ranked[0]} by training frequency",
        )
    )
    return ranked[0]


def parse_case(model: ParserModel, text: str) -> ParseResult:
    """Extract entities, infer the contract, and instantiate its fact templates.

    When the exact role set never occurred in training, the largest observed
    subset is used instead and a ``partial_schema`` diagnostic is attached.
    """
    spans = extract_entities(model, text)
    if not spans:
        raise EmptyExtractionError("no known surface found in the text")
    contract_id, diagnostics = infer_contract(model, spans)
    extraction: list[EntitySpan] = []
    for span in spans:
        roles = [role for cid, role in span.candidates if cid == contract_id]
        if not roles:
            diagnostics.append(
                Diagnostic(
                    "unmatched_surface",
                    f"surface {span.surface!r} belongs to a different contract; ignored",
                )
            )
            continue
        role = _resolve_role(model, contract_id, span, roles, diagnostics)
        extraction.append(EntitySpan(role, span.surface, span.start, span.end))
    if not extraction:
        raise EmptyExtractionError(
            f"no surface of contract {contract_id} found in the text"
        )
    surfaces: dict[str, str] = {}
    for span in extraction:
        surfaces.setdefault(span.role, span.surface)
    present = frozenset(surfaces)
    key = (contract_id, present)
    templates = model.schema_table.get(key)
    if templates is None:
        subsets = [
            (roles, facts)
            for (cid, roles), facts in model.schema_table.items()
            if cid == contract_id and roles <= present
        ]
        if subsets:
            subsets.sort(key=lambda item: (-len(item[0]), tuple(sorted(item[0]))))
            fallback_roles, templates = subsets[0]
            diagnostics.append(
                Diagnostic(
                    "partial_schema",
                    f"role set {{{', '.join(sorted(present))}}} unseen in training; "
                    f"fell back to {{{', '.join(sorted(fallback_roles))}}}",
                )
            )
        else:
            templates = ()
            diagnostics.append(
                Diagnostic(
                    "partial_schema",
                    f"no fact templates recorded for any subset of "
                    f"{{{', '.join(sorted(present))}}}",
                )
            )
    facts = tuple(instantiate_atom(t, surfaces) for t in templates)
    return ParseResult(
        contract_id=contract_id,
        extraction=tuple(extraction),
        facts=facts,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class SampleEval:
    sample_id: str
    contract_id: str
    template_id: str
    exact_match: bool
    predicted_facts: tuple[str, ...]
    gold_facts: tuple[str, ...]
    gold_verdict: str | None = None
    predicted_verdict: str | None = None
    error: str | None = None

    @property
    def verdicts_agree(self) -> bool | None:
        if self.gold_verdict is None or self.predicted_verdict is None:
            return None
        return self.gold_verdict == self.predicted_verdict


@dataclass
class EvalResult:
    fact_exact_match_accuracy: float
    entity_precision: float
    entity_recall: float
    entity_f1: float
    entailment_accuracy: float | None
    sample_count: int
    entailment_evaluated: int
    entailment_errors: int
    per_sample: list[SampleEval]

    def metrics_dict(self) -> dict:
        return {
            "fact_exact_match_accuracy": self.fact_exact_match_accuracy,
            "entity_precision": self.entity_precision,
            "entity_recall": self.entity_recall,
            "entity_f1": self.entity_f1,
            "entailment_accuracy": self.entailment_accuracy,
            "sample_count": self.sample_count,
            "entailment_evaluated": self.entailment_evaluated,
            "entailment_errors": self.entailment_errors,
        }


def _goal_for_sample(model: ParserModel, sample) -> Atom:
    goal_template = model.goals.get(sample.contract_id)
    if goal_template is None:
        raise SemParserError(f"no goal template for contract {sample.contract_id}")
    surfaces: dict[str, str] = {}
    for span in sample.entities:
        surfaces.setdefault(span.role, span.surface)
    return instantiate_atom(goal_template, surfaces)


def evaluate_model(model: ParserModel, test: Dataset,
                   program_registry: dict | None = None) -> EvalResult:
    """Fact exact-match accuracy, span precision/recall/F1 and, when programs
    are supplied, agreement of the goal verdict between predicted and gold
    facts (the goal is instantiated from the gold entities)."""
    if not test.samples:
        raise ValueError("cannot evaluate on an empty dataset")
    exact = 0
    tp = fp = fn = 0
    agree = evaluated = errors = 0
    per_sample: list[SampleEval] = []
    for sample in test.samples:
        error: str | None = None
        try:
            result = parse_case(model, sample.case_text)
            predicted_facts = result.facts
            predicted_spans = {(e.role, e.start, e.end) for e in result.extraction}
        except SemParserError as exc:
            error = str(exc)
            predicted_facts = ()
            predicted_spans = set()
        gold_spans = {(e.role, e.start, e.end) for e in sample.entities}
        tp += len(predicted_spans & gold_spans)
        fp += len(predicted_spans - gold_spans)
        fn += len(gold_spans - predicted_spans)
        predicted_set = {render_atom(f) for f in predicted_facts}
        gold_set = {render_atom(f) for f in sample.facts}
        is_exact = predicted_set == gold_set
        exact += is_exact
        record = SampleEval(
            sample_id=sample.id,
            contract_id=sample.contract_id,
            template_id=sample.template_id,
            exact_match=is_exact,
            predicted_facts=tuple(sorted(predicted_set)),
            gold_facts=tuple(sorted(gold_set)),
            error=error,
        )
        if program_registry is not None:
            program = program_registry.get(sample.contract_id)
            if program is None:
                errors += 1
                record.error = record.error or (
                    f"no program for contract {sample.contract_id}"
                )
            else:
                try:
                    goal = _goal_for_sample(model, sample)
                    gold_verdict = solve(program, list(sample.facts), goal)
                    predicted_verdict = solve(program, list(predicted_facts), goal)
                    record.gold_verdict = "proved" if gold_verdict.proved else "failed"
                    record.predicted_verdict = (
                        "proved" if predicted_verdict.proved else "failed"
                    )
                    evaluated += 1
                    agree += record.gold_verdict == record.predicted_verdict
                except Exception as exc:  # per-sample failure, not a crash
                    errors += 1
                    record.error = record.error or str(exc)
        per_sample.append(record)
    n = len(test.samples)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalResult(
        fact_exact_match_accuracy=exact / n,
        entity_precision=precision,
        entity_recall=recall,
        entity_f1=f1,
        entailment_accuracy=(agree / evaluated) if evaluated else None,
        sample_count=n,
        entailment_evaluated=evaluated,
        entailment_errors=errors,
        per_sample=per_sample,
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

MODEL_VERSION = 1


def save_model(model: ParserModel, path) -> None:
    """Write the model as a single inspectable JSON document."""
    gazetteer_rows = []
    for surface in sorted(model.gazetteer.entries):
        for (contract_id, role), count in sorted(model.gazetteer.entries[surface].items()):
            gazetteer_rows.append(
                {"surface": surface, "contract": contract_id, "role": role, "count": count}
            )
    table_rows = [
        {
            "contract": contract_id,
            "roles": sorted(roles),
            "fact_templates": [render_atom(a) for a in facts],
        }
        for (contract_id, roles), facts in sorted(
            model.schema_table.items(), key=lambda kv: (kv[0][0], sorted(kv[0][1]))
        )
    ]
    doc = {
        "version": MODEL_VERSION,
        "gazetteer": gazetteer_rows,
        "schema_table": table_rows,
        "goals": {cid: render_atom(goal) for cid, goal in sorted(model.goals.items())},
        "schemas": {
            cid: {"roles": list(schema.roles)}
            for cid, schema in sorted(model.schemas.items())
        },
        "provenance": model.provenance,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        fh.write("\n")


def load_model(path) -> ParserModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"invalid model file: {exc}") from exc
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    try:
        gazetteer = Gazetteer()
        for row in doc["gazetteer"]:
            gazetteer.add(row["surface"], row["contract"], row["role"], int(row["count"]))
        schema_table: SchemaTable = {}
        for row in doc["schema_table"]:
            key = (row["contract"], frozenset(row["roles"]))
            schema_table[key] = tuple(parse_atom(f) for f in row["fact_templates"])
        goals = {cid: parse_atom(g) for cid, g in doc["goals"].items()}
        schemas = {
            cid: SlotSchema(
                contract_id=cid,
                roles=tuple(info["roles"]),
                goal_template=goals.get(cid, Atom("goal")),
            )
            for cid, info in doc.get("schemas", {}).items()
        }
        provenance = dict(doc.get("provenance", {}))
    except ModelFormatError:
        raise
    except Exception as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    return ParserModel(
        gazetteer=gazetteer,
        schema_table=schema_table,
        goals=goals,
        schemas=schemas,
        provenance=provenance,
    )
