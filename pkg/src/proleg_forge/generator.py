"""Template and slot-set generation from seed examples.

Two interchangeable backends produce new assets for a contract schema:

* an LLM backend speaking the OpenAI-compatible ``/v1/chat/completions``
  JSON protocol, prompted few-shot with the seed templates and slot sets;
* a deterministic offline backend that recombines a per-contract bank of
  sentence fragments and surface values, so full pipeline runs are
  reproducible without any network access.

Whatever the backend returns is validated before it leaves this module;
invalid items are dropped and reported, never silently patched up.
"""

from __future__ import annotations

import json
import os
import random
import time
from dataclasses import dataclass, field

import requests

from .augment import (
    SlotHolderSet,
    SlotSchema,
    Template,
    check_slot_set,
    normalize_surface,
    text_roles,
    validate_template,
)
from .lang import Atom

DEFAULT_API_KEY_ENV = "PROLEG_LLM_API_KEY"


class GeneratorError(Exception):
    pass


class AuthError(GeneratorError):
    pass


class TransportError(GeneratorError):
    pass


class MalformedResponseError(GeneratorError):
    pass


class NoJsonFoundError(GeneratorError):
    pass


class InsufficientBankError(GeneratorError):
    pass


# ---------------------------------------------------------------------------
# Requests and backend configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationRequest:
    schema: SlotSchema
    seed_templates: tuple[Template, ...]
    seed_slot_sets: tuple[SlotHolderSet, ...]
    want_templates: int = 0
    want_slot_sets: int = 0

    def __post_init__(self):
        if not self.seed_templates:
            raise ValueError("at least one seed template is required")
        if not self.seed_slot_sets:
            raise ValueError("at least one seed slot set is required")
        if self.want_templates < 0 or self.want_slot_sets < 0:
            raise ValueError("requested counts must be non-negative")

    def canonical_fact_templates(self) -> tuple[Atom, ...]:
        first = self.seed_templates[0].fact_templates
        for t in self.seed_templates[1:]:
            if set(t.fact_templates) != set(first):
                raise ValueError(
                    "seed templates of one contract must share a single fact-template set"
                )
        return first


@dataclass(frozen=True)
class LlmBackendConfig:
    base_url: str
    model_name: str
    api_key_env_var_name: str = DEFAULT_API_KEY_ENV
    temperature: float = 0.8
    max_retries: int = 2
    timeout: float = 30.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class Fragment:
    text: str
    roles: frozenset[str]

    @classmethod
    def from_text(cls, text: str) -> "Fragment":
        return cls(text, frozenset(text_roles(text)))


@dataclass
class ContractBank:
    """Raw material for offline generation of one contract."""

    fragments: list[Fragment]
    values: dict[str, list[str]]
    connectors: list[str]
    question: str

    @classmethod
    def from_dict(cls, doc: dict) -> "ContractBank":
        return cls(
            fragments=[Fragment.from_text(t) for t in doc["fragments"]],
            values={role: list(vals) for role, vals in doc["values"].items()},
            connectors=list(doc.get("connectors", [])),
            question=doc["question"],
        )

    def validate(self, schema: SlotSchema):
        if len(self.fragments) < 4:
            raise InsufficientBankError("need at least 4 fragments to compose templates")
        covered = set()
        for fragment in self.fragments:
            covered |= fragment.roles
        for role in schema.roles:
            if role not in covered:
                raise InsufficientBankError(f"no fragment mentions role {role}")
            if len(self.values.get(role, [])) < 2:
                raise InsufficientBankError(f"role {role} needs at least 2 bank values")
        for role in text_roles(self.question):
            if role not in schema.roles:
                raise InsufficientBankError(f"question references unknown role {role}")


@dataclass
class OfflineBackendConfig:
    seed: int
    banks: dict[str, ContractBank]


@dataclass(frozen=True)
class Reject:
    kind: str  # "template" | "slot_set"
    reason: str
    payload: str


@dataclass
class GenerationResult:
    templates: list[Template] = field(default_factory=list)
    slot_sets: list[SlotHolderSet] = field(default_factory=list)
    rejects: list[Reject] = field(default_factory=list)
    shortfall: dict[str, int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Prompt construction and output parsing
# ---------------------------------------------------------------------------

_SYSTEM_PROMPT = (
    "You expand annotated training data for contract case handling. "
    "Follow the format instructions exactly and reply with JSON only."
)


def _slot_set_json(slot_set: SlotHolderSet, schema: SlotSchema) -> str:
    ordered = {role: slot_set[role] for role in schema.roles}
    return json.dumps(ordered, separators=(",", ":"), ensure_ascii=False)


def build_prompt(request: GenerationRequest, kind: str) -> list[dict]:
    """Deterministic chat messages asking for new templates or slot sets."""
    if kind not in ("templates", "slot_sets"):
        raise ValueError("kind must be 'templates' or 'slot_sets'")
    schema = request.schema
    lines = [
        f"Contract: {schema.contract_id}",
        f"Roles: {', '.join(schema.roles)}",
        "",
    ]
    if kind == "templates":
        lines.append("Example case templates:")
        lines.append(json.dumps([t.text for t in request.seed_templates],
                                ensure_ascii=False, indent=2))
        lines.append("")
        lines.append(
            f"Write {request.want_templates} new case templates for this contract. "
            "Each template is one paragraph of 3 to 6 sentences ending with a question. "
            "Mark every role with curly-brace placeholders such as "
            f"{{{schema.roles[0]}}}, and mention every role at least once. "
            "Reply with a JSON array of template strings only."
        )
    else:
        lines.append("Example slot holder sets:")
        for slot_set in request.seed_slot_sets:
            lines.append(_slot_set_json(slot_set, schema))
        lines.append("")
        lines.append(
            f"Produce {request.want_slot_sets} new slot holder sets with exactly "
            "the same keys. Values are short lowercase surface forms, all distinct "
            "within a set. Reply with a JSON array of objects only."
        )
    return [
        {"role": "system", "content": _SYSTEM_PROMPT},
        {"role": "user", "content": "\n".join(lines)},
    ]


def _first_json_array(raw: str) -> list:
    decoder = json.JSONDecoder()
    idx = raw.find("[")
    while idx != -1:
        try:
            value, _ = decoder.raw_decode(raw, idx)
        except json.JSONDecodeError:
            idx = raw.find("[", idx + 1)
            continue
        if isinstance(value, list):
            return value
        idx = raw.find("[", idx + 1)
    raise NoJsonFoundError("no JSON array found in model output")


def parse_generation_output(raw: str, kind: str, schema: SlotSchema, *,
                            fact_templates: tuple[Atom, ...] = (),
                            id_prefix: str = "gen",
                            id_offset: int = 0) -> tuple[list, list[Reject]]:
    """Extract and validate generated assets from raw model output.

    Tolerates prose and code fences around the first JSON array.  Items that
    fail validation are returned as rejects with a reason; valid templates
    are numbered ``{id_prefix}{n}`` starting after ``id_offset``.
    """
    items = _first_json_array(raw)
    valid: list = []
    rejects: list[Reject] = []
    if kind == "templates":
        seen_texts: set[str] = set()
        counter = id_offset
        for item in items:
            if isinstance(item, dict) and isinstance(item.get("text"), str):
                text = item["text"]
            elif isinstance(item, str):
                text = item
            else:
                rejects.append(Reject("template", "not a template string", repr(item)[:200]))
                continue
            if text in seen_texts:
                rejects.append(Reject("template", "duplicate template text", text[:200]))
                continue
            counter += 1
            template = Template(
                id=f"{id_prefix}{counter}",
                contract_id=schema.contract_id,
                text=text,
                fact_templates=fact_templates,
            )
            violations = validate_template(template, schema)
            if violations:
                counter -= 1
                rejects.append(Reject("template", "; ".join(violations), text[:200]))
                continue
            seen_texts.add(text)
            valid.append(template)
        return valid, rejects
    if kind != "slot_sets":
        raise ValueError("kind must be 'templates' or 'slot_sets'")
    for item in items:
        if not isinstance(item, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in item.items()
        ):
            rejects.append(Reject("slot_set", "not an object of strings", repr(item)[:200]))
            continue
        missing = [r for r in schema.roles if not item.get(r)]
        if missing:
            rejects.append(Reject("slot_set", f"missing role {missing[0]}",
                                  json.dumps(item, ensure_ascii=False)[:200]))
            continue
        unknown = [k for k in item if k not in schema.roles]
        if unknown:
            rejects.append(Reject("slot_set", f"unknown role {unknown[0]}",
                                  json.dumps(item, ensure_ascii=False)[:200]))
            continue
        norms = [normalize_surface(item[r]) for r in schema.roles]
        if len(set(norms)) != len(norms):
            rejects.append(Reject("slot_set", "duplicate surface within set",
                                  json.dumps(item, ensure_ascii=False)[:200]))
            continue
        valid.append({role: item[role] for role in schema.roles})
    return valid, rejects


# ---------------------------------------------------------------------------
# LLM transport
# ---------------------------------------------------------------------------

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}
_BACKOFF_BASE = 0.2  # seconds; doubles per retry


def llm_complete(config: LlmBackendConfig, messages: list[dict]) -> str:
    """One chat completion; returns the assistant message content.

    Transport failures and 429/5xx responses are retried with exponential
    backoff up to ``max_retries`` times.  The API key is read from the
    configured environment variable and never touches the network if absent.
    """
    api_key = os.environ.get(config.api_key_env_var_name, "")
    if not api_key:
        raise AuthError(
            f"environment variable {config.api_key_env_var_name} is not set"
        )
    url = config.base_url.rstrip("/") + "/v1/chat/completions"
    body = {
        "model": config.model_name,
        "messages": messages,
        "temperature": config.temperature,
    }
    headers = {"Authorization": f"Bearer {api_key}"}
    last_error: str = "no attempt made"
    for attempt in range(config.max_retries + 1):
        if attempt:
            time.sleep(_BACKOFF_BASE * (2 ** (attempt - 1)))
        try:
            response = requests.post(url, json=body, headers=headers, timeout=config.timeout)
        except requests.RequestException as exc:
            last_error = f"transport failure: {exc}"
            continue
        if response.status_code in (401, 403):
            raise AuthError(f"endpoint rejected the API key (HTTP {response.status_code})")
        if response.status_code in _RETRYABLE_STATUS:
            last_error = f"HTTP {response.status_code}"
            continue
        if response.status_code != 200:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            payload = response.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected response shape: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponseError("message content is not a string")
        return content
    raise TransportError(f"giving up after {config.max_retries + 1} attempts ({last_error})")


# ---------------------------------------------------------------------------
# Offline generation
# ---------------------------------------------------------------------------


def _offline_rng(config: OfflineBackendConfig, contract_id: str, stream: str) -> random.Random:
    return random.Random(f"{config.seed}:{contract_id}:{stream}")


def _compose_template_text(bank: ContractBank, roles: tuple[str, ...],
                           rng: random.Random) -> str:
    """4 to 7 fragments covering every role, then the closing question."""
    order = rng.sample(bank.fragments, len(bank.fragments))
    chosen: list[Fragment] = []
    covered: set[str] = set()
    for fragment in order:
        if fragment.roles - covered:
            chosen.append(fragment)
            covered |= fragment.roles
        if covered.issuperset(roles) and len(chosen) >= 4:
            break
    if not covered.issuperset(roles):
        missing = sorted(set(roles) - covered)
        raise InsufficientBankError(f"fragments cannot cover roles {', '.join(missing)}")
    spare = [f for f in order if f not in chosen]
    target = rng.randint(max(4, len(chosen)), min(7, len(chosen) + len(spare)))
    while len(chosen) < target and spare:
        chosen.append(spare.pop(0))
    rng.shuffle(chosen)
    parts: list[str] = []
    for i, fragment in enumerate(chosen):
        if i and bank.connectors and rng.random() < 0.4:
            parts.append(rng.choice(bank.connectors))
        parts.append(fragment.text)
    parts.append(bank.question)
    return " ".join(parts)


def _generate_offline(config: OfflineBackendConfig, request: GenerationRequest) -> GenerationResult:
    schema = request.schema
    bank = config.banks.get(schema.contract_id)
    if bank is None:
        raise InsufficientBankError(f"no offline bank for contract {schema.contract_id}")
    bank.validate(schema)
    result = GenerationResult()
    fact_templates = request.canonical_fact_templates()

    rng = _offline_rng(config, schema.contract_id, "templates")
    seen_texts = {t.text for t in request.seed_templates}
    for i in range(request.want_templates):
        text = None
        for _ in range(50):
            candidate = _compose_template_text(bank, schema.roles, rng)
            if candidate not in seen_texts:
                text = candidate
                break
        if text is None:
            raise InsufficientBankError(
                f"could not compose a fresh template for {schema.contract_id}"
            )
        seen_texts.add(text)
        template = Template(
            id=f"gen{i + 1}",
            contract_id=schema.contract_id,
            text=text,
            fact_templates=fact_templates,
        )
        violations = validate_template(template, schema)
        if violations:  # bank misconfiguration; surface loudly rather than skip
            raise InsufficientBankError(
                f"offline template invalid: {'; '.join(violations)}"
            )
        result.templates.append(template)

    rng = _offline_rng(config, schema.contract_id, "slot_sets")
    seen_sets = {tuple(normalize_surface(s[r]) for r in schema.roles)
                 for s in request.seed_slot_sets}
    for _ in range(request.want_slot_sets):
        slot_set: SlotHolderSet | None = None
        for _ in range(50):
            candidate: SlotHolderSet = {}
            used: set[str] = set()
            for role in schema.roles:
                pool = [v for v in bank.values.get(role, []) if normalize_surface(v) not in used]
                if not pool:
                    raise InsufficientBankError(
                        f"value bank exhausted for role {role} of {schema.contract_id}"
                    )
                value = rng.choice(pool)
                candidate[role] = value
                used.add(normalize_surface(value))
            key = tuple(normalize_surface(candidate[r]) for r in schema.roles)
            if key not in seen_sets:
                slot_set = candidate
                seen_sets.add(key)
                break
        if slot_set is None:
            slot_set = candidate  # variety exhausted; a repeat is still valid
        check_slot_set(slot_set, schema)
        result.slot_sets.append(slot_set)
    return result


# ---------------------------------------------------------------------------
# LLM-backed generation
# ---------------------------------------------------------------------------


def _generate_llm(config: LlmBackendConfig, request: GenerationRequest) -> GenerationResult:
    result = GenerationResult()
    fact_templates = request.canonical_fact_templates()

    def run(kind: str, want: int):
        if want <= 0:
            return []
        collected: list = []
        rejects_here: list[Reject] = []
        remaining = want
        for round_no in range(2):  # one retry for the shortfall, then report
            req = GenerationRequest(
                schema=request.schema,
                seed_templates=request.seed_templates,
                seed_slot_sets=request.seed_slot_sets,
                want_templates=remaining if kind == "templates" else 0,
                want_slot_sets=remaining if kind == "slot_sets" else 0,
            )
            raw = llm_complete(config, build_prompt(req, kind))
            valid, rejects = parse_generation_output(
                raw, kind, request.schema,
                fact_templates=fact_templates,
                id_offset=len(collected) if kind == "templates" else 0,
            )
            rejects_here.extend(rejects)
            collected.extend(valid[:remaining])
            remaining = want - len(collected)
            if remaining <= 0:
                break
        result.rejects.extend(rejects_here)
        if remaining > 0:
            result.shortfall[kind] = remaining
        return collected

    result.templates = run("templates", request.want_templates)
    result.slot_sets = run("slot_sets", request.want_slot_sets)
    return result


def generate_assets(backend: OfflineBackendConfig | LlmBackendConfig,
                    request: GenerationRequest) -> GenerationResult:
    """Produce validated templates and slot sets with the chosen backend.

    The offline backend returns exactly the requested counts and is a pure
    function of (seed, banks, request).  The LLM backend validates, retries
    once for any shortfall, and reports what could not be obtained.
    """
    if isinstance(backend, OfflineBackendConfig):
        return _generate_offline(backend, request)
    if isinstance(backend, LlmBackendConfig):
        return _generate_llm(backend, request)
    raise TypeError(f"unsupported backend {type(backend).__name__}")
