"""Templates, slot holders, and dataset assembly.

A legal case decomposes into a template (surface text with ``{Role}``
placeholders plus clause templates for the implied facts) and a slot-holder
set (one surface form per role).  Expanding a template with a slot set
yields one annotated sample: the case text, character-exact entity spans,
and the ground facts.  Literal braces in template text are written ``{{``
and ``}}``.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .lang import Atom, Constant, parse_atom, render_atom


class AugmentError(Exception):
    """Base class for dataset-side errors."""


class MissingRoleError(AugmentError):
    def __init__(self, role: str, where: str = "slot-holder set"):
        self.role = role
        super().__init__(f"{where} is missing role {role}")


class UnknownRoleError(AugmentError):
    def __init__(self, role: str):
        self.role = role
        super().__init__(f"role {role} is not part of the schema")


class OverlappingSurfaceError(AugmentError):
    def __init__(self, surface: str, roles: list[str]):
        self.surface = surface
        self.roles = roles
        super().__init__(
            f"surface {surface!r} is shared by roles {', '.join(roles)}; "
            "span recovery would be ambiguous"
        )


class EmptyInputError(AugmentError):
    pass


class TooFewTemplatesError(AugmentError):
    def __init__(self, contract_id: str, count: int):
        self.contract_id = contract_id
        super().__init__(
            f"contract {contract_id} has {count} template(s); at least 2 are needed to split"
        )


class RecordFormatError(AugmentError):
    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {reason}")


class BundleFormatError(AugmentError):
    pass


def normalize_surface(surface: str) -> str:
    """Case-fold and collapse internal whitespace."""
    return " ".join(surface.casefold().split())


# ---------------------------------------------------------------------------
# Placeholder scanning
# ---------------------------------------------------------------------------

def _role_name_ok(name: str) -> bool:
    return bool(name) and (name[0].isalpha() or name[0] == "_") and all(
        c.isalnum() or c == "_" for c in name
    )


def scan_template_text(text: str) -> tuple[list[tuple[str, str]], list[str]]:
    """Split template text into ``("lit", chunk)`` and ``("slot", role)`` segments.

    Returns the segments plus a list of problems (unbalanced braces, bad
    role names); problems leave the offending characters out of the
    segment list.
    """
    segments: list[tuple[str, str]] = []
    problems: list[str] = []
    buf: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "{":
            if i + 1 < n and text[i + 1] == "{":
                buf.append("{")
                i += 2
                continue
            end = text.find("}", i + 1)
            if end == -1:
                problems.append("unbalanced '{' in template text")
                i += 1
                continue
            role = text[i + 1 : end]
            if not _role_name_ok(role):
                problems.append(f"invalid placeholder name {role!r}")
                i = end + 1
                continue
            if buf:
                segments.append(("lit", "".join(buf)))
                buf = []
            segments.append(("slot", role))
            i = end + 1
            continue
        if ch == "}":
            if i + 1 < n and text[i + 1] == "}":
                buf.append("}")
                i += 2
                continue
            problems.append("unbalanced '}' in template text")
            i += 1
            continue
        buf.append(ch)
        i += 1
    if buf:
        segments.append(("lit", "".join(buf)))
    return segments, problems


def text_roles(text: str) -> list[str]:
    """Distinct placeholder roles in first-occurrence order."""
    segments, _ = scan_template_text(text)
    roles: list[str] = []
    for kind, value in segments:
        if kind == "slot" and value not in roles:
            roles.append(value)
    return roles


def _is_placeholder_const(term) -> bool:
    return (
        isinstance(term, Constant)
        and term.text.startswith("{")
        and term.text.endswith("}")
        and _role_name_ok(term.text[1:-1])
    )


def atom_roles(atom: Atom) -> list[str]:
    """Roles referenced as ``"{Role}"`` arguments of a template atom."""
    roles: list[str] = []
    for t in atom.args:
        if _is_placeholder_const(t):
            role = t.text[1:-1]
            if role not in roles:
                roles.append(role)
    return roles


def instantiate_atom(atom: Atom, surfaces: dict[str, str]) -> Atom:
    """Replace ``"{Role}"`` arguments with the role's surface form."""
    args = []
    for t in atom.args:
        if _is_placeholder_const(t):
            role = t.text[1:-1]
            if role not in surfaces:
                raise MissingRoleError(role)
            args.append(Constant(surfaces[role]))
        else:
            args.append(t)
    return Atom(atom.predicate, tuple(args))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlotSchema:
    contract_id: str
    roles: tuple[str, ...]
    goal_template: Atom

    def __post_init__(self):
        if not self.roles:
            raise ValueError("a schema needs at least one role")
        if len(set(self.roles)) != len(self.roles):
            raise ValueError("schema roles must be unique")
        for role in atom_roles(self.goal_template):
            if role not in self.roles:
                raise UnknownRoleError(role)


@dataclass(frozen=True)
class Template:
    id: str
    contract_id: str
    text: str
    fact_templates: tuple[Atom, ...]

    def __post_init__(self):
        if not isinstance(self.fact_templates, tuple):
            object.__setattr__(self, "fact_templates", tuple(self.fact_templates))


SlotHolderSet = dict[str, str]


@dataclass(frozen=True)
class EntitySpan:
    role: str
    surface: str
    start: int
    end: int


@dataclass(frozen=True)
class AugmentedSample:
    id: str
    contract_id: str
    template_id: str
    case_text: str
    entities: tuple[EntitySpan, ...]
    facts: tuple[Atom, ...]


@dataclass
class Dataset:
    schemas: dict[str, SlotSchema] = field(default_factory=dict)
    templates: list[Template] = field(default_factory=list)
    samples: list[AugmentedSample] = field(default_factory=list)

    def template_by_id(self, contract_id: str, template_id: str) -> Template | None:
        for t in self.templates:
            if t.contract_id == contract_id and t.id == template_id:
                return t
        return None


# ---------------------------------------------------------------------------
# Validation and expansion
# ---------------------------------------------------------------------------


def validate_template(template: Template, schema: SlotSchema) -> list[str]:
    """Violations of the template against its schema; empty list means valid."""
    if template.contract_id != schema.contract_id:
        return [f"template contract {template.contract_id} does not match schema "
                f"{schema.contract_id}"]
    violations: list[str] = []
    segments, problems = scan_template_text(template.text)
    violations.extend(problems)
    in_text = {value for kind, value in segments if kind == "slot"}
    for role in sorted(in_text):
        if role not in schema.roles:
            violations.append(f"placeholder {{{role}}} not in schema")
    fact_roles: list[str] = []
    for atom in template.fact_templates:
        for role in atom_roles(atom):
            if role not in schema.roles:
                violations.append(f"fact template role {role} not in schema")
            elif role not in fact_roles:
                fact_roles.append(role)
    for role in fact_roles:
        if role not in in_text:
            violations.append(f"role {role} unreferenced in text")
    return violations


def check_slot_set(slot_set: SlotHolderSet, schema: SlotSchema):
    """Raise unless the slot set covers the schema exactly with unambiguous surfaces."""
    for role in schema.roles:
        if role not in slot_set or not str(slot_set[role]):
            raise MissingRoleError(role)
    for role in slot_set:
        if role not in schema.roles:
            raise UnknownRoleError(role)
    by_norm: dict[str, list[str]] = {}
    for role in schema.roles:
        by_norm.setdefault(normalize_surface(slot_set[role]), []).append(role)
    for norm, roles in by_norm.items():
        if len(roles) > 1:
            raise OverlappingSurfaceError(norm, roles)


def expand(template: Template, slot_set: SlotHolderSet, schema: SlotSchema,
           sample_id: str) -> AugmentedSample:
    """Produce one annotated sample from a template and a slot-holder set.

    Every placeholder occurrence yields one entity span; substitution is
    literal, offsets count Unicode scalar values.
    """
    violations = validate_template(template, schema)
    if violations:
        raise AugmentError(f"invalid template {template.id}: {'; '.join(violations)}")
    check_slot_set(slot_set, schema)
    segments, _ = scan_template_text(template.text)
    parts: list[str] = []
    entities: list[EntitySpan] = []
    offset = 0
    for kind, value in segments:
        if kind == "lit":
            parts.append(value)
            offset += len(value)
        else:
            surface = slot_set[value]
            entities.append(EntitySpan(value, surface, offset, offset + len(surface)))
            parts.append(surface)
            offset += len(surface)
    surfaces = {role: slot_set[role] for role in schema.roles}
    facts = tuple(instantiate_atom(a, surfaces) for a in template.fact_templates)
    return AugmentedSample(
        id=sample_id,
        contract_id=template.contract_id,
        template_id=template.id,
        case_text="".join(parts),
        entities=tuple(entities),
        facts=facts,
    )


# ---------------------------------------------------------------------------
# Dataset construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossProduct:
    pass


@dataclass(frozen=True)
class Sampled:
    n: int
    seed: int


def build_dataset(templates: list[Template], slot_sets: dict[str, list[SlotHolderSet]],
                  schemas: dict[str, SlotSchema],
                  policy: CrossProduct | Sampled = CrossProduct()) -> Dataset:
    """Expand templates against slot sets into a dataset.

    ``CrossProduct`` takes every (template, slot set) pair per contract.
    ``Sampled(n, seed)`` draws n pairs uniformly over the full product,
    without replacement when possible, with replacement once n exceeds the
    product size.  Samples are emitted sorted by id components, so equal
    inputs and seeds give byte-equal exports.
    """
    by_contract: dict[str, list[Template]] = {}
    for t in sorted(templates, key=lambda t: (t.contract_id, t.id)):
        if t.contract_id not in schemas:
            raise EmptyInputError(f"no schema registered for contract {t.contract_id}")
        by_contract.setdefault(t.contract_id, []).append(t)
    combos: list[tuple[Template, SlotHolderSet]] = []
    for cid in sorted(by_contract):
        sets = slot_sets.get(cid, [])
        if not sets:
            raise EmptyInputError(f"no slot-holder sets for contract {cid}")
        schema = schemas[cid]
        for template in by_contract[cid]:
            violations = validate_template(template, schema)
            if violations:
                raise AugmentError(
                    f"invalid template {template.id}: {'; '.join(violations)}"
                )
            for slot_set in sets:
                combos.append((template, slot_set))
    if not combos:
        raise EmptyInputError("nothing to expand: no (template, slot set) pairs")

    if isinstance(policy, CrossProduct):
        chosen = list(range(len(combos)))
    else:
        if policy.n <= 0:
            raise EmptyInputError("sample count must be positive")
        rng = random.Random(policy.seed)
        if policy.n <= len(combos):
            chosen = sorted(rng.sample(range(len(combos)), policy.n))
        else:
            chosen = sorted(rng.choices(range(len(combos)), k=policy.n))

    samples: list[AugmentedSample] = []
    counters: Counter[tuple[str, str]] = Counter()
    for idx in chosen:
        template, slot_set = combos[idx]
        key = (template.contract_id, template.id)
        k = counters[key]
        counters[key] += 1
        sample_id = f"{template.contract_id}-{template.id}-{k}"
        samples.append(expand(template, slot_set, schemas[template.contract_id], sample_id))
    samples.sort(key=lambda s: (s.contract_id, s.template_id, int(s.id.rsplit("-", 1)[1])))

    dataset_templates = [t for cid in sorted(by_contract) for t in by_contract[cid]]
    return Dataset(schemas=dict(schemas), templates=dataset_templates, samples=samples)


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Partition templates (not samples) per contract into train and test.

    Every sample follows its template, so no template text is shared across
    the split.  The test side gets ``round(n * fraction)`` templates,
    clamped to leave at least one template on each side.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be inside (0, 1)")
    rng = random.Random(f"split:{seed}")
    by_contract: dict[str, list[str]] = {}
    for t in dataset.templates:
        by_contract.setdefault(t.contract_id, []).append(t.id)
    test_ids: set[tuple[str, str]] = set()
    for cid in sorted(by_contract):
        tids = sorted(by_contract[cid])
        if len(tids) < 2:
            raise TooFewTemplatesError(cid, len(tids))
        n_test = int(len(tids) * test_fraction + 0.5)
        n_test = max(1, min(len(tids) - 1, n_test))
        shuffled = rng.sample(tids, len(tids))
        test_ids.update((cid, tid) for tid in shuffled[:n_test])

    def subset(side_test: bool) -> Dataset:
        keep = lambda cid, tid: ((cid, tid) in test_ids) == side_test
        return Dataset(
            schemas=dict(dataset.schemas),
            templates=[t for t in dataset.templates if keep(t.contract_id, t.id)],
            samples=[s for s in dataset.samples if keep(s.contract_id, s.template_id)],
        )

    return subset(False), subset(True)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoleStat:
    contract_id: str
    role: str
    count: int
    surfaces: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class DatasetStats:
    sample_count: int
    per_contract: tuple[tuple[str, int], ...]
    role_counts: tuple[RoleStat, ...]
    surface_counts: tuple[tuple[str, int], ...]

    @property
    def total_entities(self) -> int:
        return sum(r.count for r in self.role_counts)


def _desc(counter: Counter) -> list[tuple]:
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))


def dataset_stats(dataset: Dataset) -> DatasetStats:
    """Span counts per role and surface, plus per-contract sample counts.

    Everything is sorted descending by count (ties broken by name) so the
    output doubles as the slot-holder distribution table.
    """
    contracts: Counter[str] = Counter()
    role_surface: dict[tuple[str, str], Counter] = {}
    surfaces: Counter[str] = Counter()
    for sample in dataset.samples:
        contracts[sample.contract_id] += 1
        for span in sample.entities:
            key = (sample.contract_id, span.role)
            role_surface.setdefault(key, Counter())[span.surface] += 1
            surfaces[span.surface] += 1
    role_counts = [
        RoleStat(cid, role, sum(c.values()), tuple(_desc(c)))
        for (cid, role), c in role_surface.items()
    ]
    role_counts.sort(key=lambda r: (-r.count, r.contract_id, r.role))
    return DatasetStats(
        sample_count=len(dataset.samples),
        per_contract=tuple(_desc(contracts)),
        role_counts=tuple(role_counts),
        surface_counts=tuple(_desc(surfaces)),
    )


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------


def sample_to_record(sample: AugmentedSample) -> dict:
    return {
        "id": sample.id,
        "contract_id": sample.contract_id,
        "template_id": sample.template_id,
        "case_text": sample.case_text,
        "entities": [
            {"role": e.role, "surface": e.surface, "start": e.start, "end": e.end}
            for e in sample.entities
        ],
        "facts": [render_atom(f) for f in sample.facts],
    }


def export_jsonl(dataset: Dataset, path: str | Path):
    """One sample per line; empty datasets give an empty, header-less file."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in dataset.samples:
            fh.write(json.dumps(sample_to_record(sample), sort_keys=True,
                                separators=(",", ":"), ensure_ascii=False))
            fh.write("\n")


def _sample_from_record(doc: dict, line_number: int) -> AugmentedSample:
    try:
        entities = tuple(
            EntitySpan(e["role"], e["surface"], int(e["start"]), int(e["end"]))
            for e in doc["entities"]
        )
        facts = tuple(parse_atom(f) for f in doc["facts"])
        sample = AugmentedSample(
            id=doc["id"],
            contract_id=doc["contract_id"],
            template_id=doc["template_id"],
            case_text=doc["case_text"],
            entities=entities,
            facts=facts,
        )
    except RecordFormatError:
        raise
    except Exception as exc:
        raise RecordFormatError(line_number, str(exc)) from exc
    for span in sample.entities:
        if sample.case_text[span.start:span.end] != span.surface:
            raise RecordFormatError(
                line_number,
                f"span {span.start}..{span.end} does not slice to {span.surface!r}",
            )
    for fact in sample.facts:
        if not fact.is_ground():
            raise RecordFormatError(line_number, f"fact {render_atom(fact)} is not ground")
    return sample


def import_jsonl(path: str | Path, schemas: dict[str, SlotSchema] | None = None,
                 templates: list[Template] | None = None) -> Dataset:
    """Read a JSONL dataset back.

    The line format carries samples only; pass ``schemas``/``templates`` to
    reattach the registries when round-tripping a full dataset.
    """
    samples: list[AugmentedSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordFormatError(line_number, f"invalid JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise RecordFormatError(line_number, "record is not an object")
            samples.append(_sample_from_record(doc, line_number))
    return Dataset(
        schemas=dict(schemas) if schemas else {},
        templates=list(templates) if templates else [],
        samples=samples,
    )


# ---------------------------------------------------------------------------
# Contract bundles
# ---------------------------------------------------------------------------


def load_bundle(doc: dict) -> tuple[SlotSchema, list[Template], list[SlotHolderSet], dict | None]:
    """Decode a per-contract bundle document.

    Expected keys: ``schema`` (contract_id, roles, goal_template),
    ``templates`` (id, text, fact_templates) and ``slot_sets``; an optional
    ``offline_bank`` section is passed through untouched for the generator.
    """
    try:
        schema_doc = doc["schema"]
        schema = SlotSchema(
            contract_id=schema_doc["contract_id"],
            roles=tuple(schema_doc["roles"]),
            goal_template=parse_atom(schema_doc["goal_template"]),
        )
        templates = [
            Template(
                id=t["id"],
                contract_id=schema.contract_id,
                text=t["text"],
                fact_templates=tuple(parse_atom(f) for f in t["fact_templates"]),
            )
            for t in doc["templates"]
        ]
        slot_sets = [dict(s) for s in doc["slot_sets"]]
    except BundleFormatError:
        raise
    except Exception as exc:
        raise BundleFormatError(f"malformed contract bundle: {exc}") from exc
    for template in templates:
        violations = validate_template(template, schema)
        if violations:
            raise BundleFormatError(
                f"template {template.id}: {'; '.join(violations)}"
            )
    for slot_set in slot_sets:
        check_slot_set(slot_set, schema)
    return schema, templates, slot_sets, doc.get("offline_bank")


def read_bundle(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        return load_bundle(json.load(fh))
