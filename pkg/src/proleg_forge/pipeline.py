"""End-to-end pipeline: generate assets, build and split a dataset, train the
parser, evaluate fact extraction and goal verdicts, and write every artifact
(JSONL dataset, model JSON, report JSON/CSV, figures) to an output directory.

With the offline generator backend the whole run is a pure function of the
configuration and its seeds: rerunning a config byte-reproduces the dataset,
model and report files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import augment, generator, reports, semparser
from .augment import Dataset, Sampled, SlotSchema, Template, dataset_stats
from .generator import (
    ContractBank,
    GenerationRequest,
    LlmBackendConfig,
    OfflineBackendConfig,
)
from .lang import Program, parse_program
from .semparser import ParserModel, SampleEval, train_model

BUILTIN_CONTRACTS = (
    "return_object",
    "lease_termination",
    "loan_repayment",
    "sale_delivery",
)


class ConfigError(Exception):
    """Bad or missing configuration input; exits with code 2 at the CLI."""

    def __init__(self, message: str, stage: str = "load-config"):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class StageError(Exception):
    """A pipeline stage failed at runtime; exits with code 3 at the CLI."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    contracts: list[tuple[Path, Path]] | str = "builtin"  # (bundle, program) pairs
    backend: str = "offline"
    generator_seed: int = 7
    templates_per_contract: int = 8
    slot_sets_per_contract: int = 8
    llm: LlmBackendConfig | None = None
    dataset_size: int = 5000
    dataset_seed: int = 42
    test_fraction: float = 0.2
    split_seed: int = 13
    output_dir: Path = Path("artifacts")
    figures: bool = True

    def validate(self):
        if self.backend not in ("offline", "llm"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "llm" and self.llm is None:
            raise ConfigError("llm backend selected but no llm section given")
        if self.dataset_size <= 0:
            raise ConfigError("dataset size must be positive")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test fraction must be inside (0, 1)")
        if self.templates_per_contract < 0 or self.slot_sets_per_contract < 0:
            raise ConfigError("generation counts must be non-negative")
        if isinstance(self.contracts, list):
            for bundle, program in self.contracts:
                if not Path(bundle).is_file():
                    raise ConfigError(f"missing schema bundle {bundle}")
                if not Path(program).is_file():
                    raise ConfigError(f"missing program file {program}")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path = Path(".")) -> "PipelineConfig":
        try:
            cfg = cls()
            contracts = doc.get("contracts", "builtin")
            if contracts != "builtin":
                cfg.contracts = [
                    (base_dir / entry["bundle"], base_dir / entry["program"])
                    for entry in contracts
                ]
            gen = doc.get("generator", {})
            cfg.backend = gen.get("backend", cfg.backend)
            cfg.generator_seed = int(gen.get("seed", cfg.generator_seed))
            cfg.templates_per_contract = int(
                gen.get("templates_per_contract", cfg.templates_per_contract)
            )
            cfg.slot_sets_per_contract = int(
                gen.get("slot_sets_per_contract", cfg.slot_sets_per_contract)
            )
            if "llm" in gen:
                llm = gen["llm"]
                cfg.llm = LlmBackendConfig(
                    base_url=llm["base_url"],
                    model_name=llm["model_name"],
                    api_key_env_var_name=llm.get(
                        "api_key_env_var_name", generator.DEFAULT_API_KEY_ENV
                    ),
                    temperature=float(llm.get("temperature", 0.8)),
                    max_retries=int(llm.get("max_retries", 2)),
                    timeout=float(llm.get("timeout", 30.0)),
                )
            data = doc.get("dataset", {})
            cfg.dataset_size = int(data.get("size", cfg.dataset_size))
            cfg.dataset_seed = int(data.get("seed", cfg.dataset_seed))
            split = doc.get("split", {})
            cfg.test_fraction = float(split.get("test_fraction", cfg.test_fraction))
            cfg.split_seed = int(split.get("seed", cfg.split_seed))
            cfg.output_dir = base_dir / doc.get("output_dir", "artifacts")
            cfg.figures = bool(doc.get("figures", True))
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"malformed pipeline config: {exc}") from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Contract fixtures
# ---------------------------------------------------------------------------


@dataclass
class LoadedContract:
    schema: SlotSchema
    seed_templates: list[Template]
    seed_slot_sets: list[dict]
    bank: ContractBank | None
    program: Program


def _load_contract(bundle_doc: dict, program_text: str) -> LoadedContract:
    schema, templates, slot_sets, bank_doc = augment.load_bundle(bundle_doc)
    bank = ContractBank.from_dict(bank_doc) if bank_doc else None
    return LoadedContract(
        schema=schema,
        seed_templates=templates,
        seed_slot_sets=slot_sets,
        bank=bank,
        program=parse_program(program_text),
    )


def load_builtin_contracts(names: tuple[str, ...] = BUILTIN_CONTRACTS) -> list[LoadedContract]:
    root = resources.files("proleg_forge") / "contracts"
    loaded = []
    for name in names:
        bundle_doc = json.loads((root / f"{name}.json").read_text(encoding="utf-8"))
        program_text = (root / f"{name}.proleg").read_text(encoding="utf-8")
        loaded.append(_load_contract(bundle_doc, program_text))
    return loaded


def load_contracts(config: PipelineConfig) -> list[LoadedContract]:
    if config.contracts == "builtin":
        return load_builtin_contracts()
    loaded = []
    for bundle_path, program_path in config.contracts:
        try:
            bundle_doc = json.loads(Path(bundle_path).read_text(encoding="utf-8"))
            program_text = Path(program_path).read_text(encoding="utf-8")
            loaded.append(_load_contract(bundle_doc, program_text))
        except (OSError, json.JSONDecodeError, augment.AugmentError) as exc:
            raise ConfigError(f"cannot load contract {bundle_path}: {exc}") from exc
    return loaded


def program_registry(contracts: list[LoadedContract]) -> dict[str, Program]:
    return {c.schema.contract_id: c.program for c in contracts}


# ---------------------------------------------------------------------------
# Entailment evaluation
# ---------------------------------------------------------------------------


@dataclass
class EntailmentReport:
    records: list[SampleEval] = field(default_factory=list)
    agreement: float | None = None
    evaluated: int = 0
    errors: int = 0
    warnings: list[str] = field(default_factory=list)

    def recomputed_agreement(self) -> float | None:
        agree = total = 0
        for record in self.records:
            flag = record.verdicts_agree
            if flag is not None:
                total += 1
                agree += flag
        return agree / total if total else None


def entailment_evaluate(model: ParserModel, test: Dataset,
                        programs: dict[str, Program]) -> EntailmentReport:
    """Per-sample goal verdicts on predicted vs gold facts, plus agreement.

    A sample whose contract has no program becomes an error record; an
    empty test set yields an empty report with a warning.
    """
    report = EntailmentReport()
    if not test.samples:
        report.warnings.append("empty test set: nothing to evaluate")
        return report
    result = semparser.evaluate_model(model, test, program_registry=programs)
    report.records = result.per_sample
    report.agreement = result.entailment_accuracy
    report.evaluated = result.entailment_evaluated
    report.errors = result.entailment_errors
    return report


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class PipelineOutcome:
    report: dict
    output_dir: Path
    dataset_path: Path
    model_path: Path
    report_path: Path


def _generate_stage(config: PipelineConfig, contracts: list[LoadedContract]):
    templates: list[Template] = []
    slot_sets: dict[str, list[dict]] = {}
    rejects: list = []
    if config.backend == "offline":
        banks = {}
        for contract in contracts:
            if contract.bank is None:
                raise generator.InsufficientBankError(
                    f"contract {contract.schema.contract_id} has no offline bank"
                )
            banks[contract.schema.contract_id] = contract.bank
        backend: OfflineBackendConfig | LlmBackendConfig = OfflineBackendConfig(
            seed=config.generator_seed, banks=banks
        )
    else:
        backend = config.llm
    for contract in contracts:
        request = GenerationRequest(
            schema=contract.schema,
            seed_templates=tuple(contract.seed_templates),
            seed_slot_sets=tuple(contract.seed_slot_sets),
            want_templates=config.templates_per_contract,
            want_slot_sets=config.slot_sets_per_contract,
        )
        result = generator.generate_assets(backend, request)
        templates.extend(contract.seed_templates)
        templates.extend(result.templates)
        slot_sets[contract.schema.contract_id] = (
            list(contract.seed_slot_sets) + list(result.slot_sets)
        )
        rejects.extend(result.rejects)
    return templates, slot_sets, rejects


def run_pipeline(config: PipelineConfig) -> PipelineOutcome:
    """Execute generate -> build -> split -> train -> evaluate -> report."""
    config.validate()
    contracts = load_contracts(config)
    if not contracts:
        raise ConfigError("no contracts configured")
    schemas = {c.schema.contract_id: c.schema for c in contracts}
    programs = program_registry(contracts)

    try:
        templates, slot_sets, rejects = _generate_stage(config, contracts)
    except (generator.GeneratorError, ValueError) as exc:
        raise StageError("generate", exc) from exc

    try:
        dataset = augment.build_dataset(
            templates, slot_sets, schemas,
            Sampled(config.dataset_size, config.dataset_seed),
        )
    except augment.AugmentError as exc:
        raise StageError("build-dataset", exc) from exc

    try:
        train, test = augment.split_dataset(dataset, config.test_fraction, config.split_seed)
    except augment.AugmentError as exc:
        raise StageError("split", exc) from exc

    try:
        model = train_model(train)
    except (semparser.SemParserError, ValueError) as exc:
        raise StageError("train", exc) from exc

    try:
        heldout = semparser.evaluate_model(model, test, program_registry=programs)
        resubstitution = semparser.evaluate_model(model, train)
    except (semparser.SemParserError, ValueError) as exc:
        raise StageError("evaluate", exc) from exc

    stats = dataset_stats(dataset)
    report = {
        "config": {
            "backend": config.backend,
            "generator_seed": config.generator_seed,
            "templates_per_contract": config.templates_per_contract,
            "slot_sets_per_contract": config.slot_sets_per_contract,
            "dataset_size": config.dataset_size,
            "dataset_seed": config.dataset_seed,
            "test_fraction": config.test_fraction,
            "split_seed": config.split_seed,
            "contracts": sorted(schemas),
        },
        "dataset": {
            "samples": len(dataset.samples),
            "train_samples": len(train.samples),
            "test_samples": len(test.samples),
            "per_contract": {cid: count for cid, count in stats.per_contract},
            "distinct_surfaces": len(stats.surface_counts),
            "train_templates": sorted(f"{t.contract_id}/{t.id}" for t in train.templates),
            "test_templates": sorted(f"{t.contract_id}/{t.id}" for t in test.templates),
            "generation_rejects": len(rejects),
        },
        "metrics": {
            "heldout": heldout.metrics_dict(),
            "resubstitution": resubstitution.metrics_dict(),
        },
        "per_sample": [
            {
                "sample_id": r.sample_id,
                "contract_id": r.contract_id,
                "template_id": r.template_id,
                "exact_match": r.exact_match,
                "predicted_facts": list(r.predicted_facts),
                "gold_facts": list(r.gold_facts),
                "gold_verdict": r.gold_verdict,
                "predicted_verdict": r.predicted_verdict,
                "error": r.error,
            }
            for r in heldout.per_sample
        ],
    }

    try:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        dataset_path = out / "dataset.jsonl"
        augment.export_jsonl(dataset, dataset_path)
        augment.export_jsonl(train, out / "train.jsonl")
        augment.export_jsonl(test, out / "test.jsonl")
        model_path = out / "model.json"
        semparser.save_model(model, model_path)
        report_path = out / "report.json"
        report_path.write_text(
            json.dumps(report, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
            + "\n",
            encoding="utf-8",
        )
        reports.write_report_csv(heldout.per_sample, out / "report.csv")
        reports.write_stats_csv(stats, out / "stats.csv")
        if config.figures:
            figures_dir = out / "figures"
            figures_dir.mkdir(exist_ok=True)
            reports.save_slot_distribution_figure(stats, figures_dir / "slot_distribution.png")
            reports.save_metrics_figure(
                {
                    "heldout_exact_match": heldout.fact_exact_match_accuracy,
                    "resubstitution_exact_match": resubstitution.fact_exact_match_accuracy,
                    "entity_f1": heldout.entity_f1,
                    "entailment_agreement": heldout.entailment_accuracy,
                },
                figures_dir / "metrics.png",
            )
    except OSError as exc:
        raise StageError("write-artifacts", exc) from exc

    return PipelineOutcome(
        report=report,
        output_dir=out,
        dataset_path=dataset_path,
        model_path=model_path,
        report_path=report_path,
    )
