"""Command-line interface.

Exit codes are a stable contract for scripting: 0 success, 1 usage error,
2 bad input or configuration, 3 runtime stage failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__, augment, explain, reasoner, reports, semparser
from .generator import GeneratorError
from .lang import LangError, parse_atom, parse_program, render_atom, render_term
from .pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    entailment_evaluate,
    load_builtin_contracts,
    load_contracts,
    program_registry,
    run_pipeline,
)

_INPUT_ERRORS = (
    ConfigError,
    LangError,
    augment.AugmentError,
    semparser.ModelFormatError,
    FileNotFoundError,
    IsADirectoryError,
    json.JSONDecodeError,
)


@click.group()
@click.version_option(version=__version__, prog_name="proleg-forge")
def cli():
    """Synthesize legal-case datasets, train the case parser, and check
    extracted facts against contract rule sets."""


def _load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_file(path)


@cli.command(name="augment")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Pipeline config JSON; defaults to the builtin contracts.")
@click.option("--backend", type=click.Choice(["offline", "llm"]), default=None)
@click.option("--count", type=int, default=1000, show_default=True,
              help="Number of samples to draw.")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Output dataset JSONL.")
def augment_cmd(config_path, backend, count, seed, out_path):
    """Generate assets and build an annotated dataset."""
    from .pipeline import _generate_stage

    config = _load_config(config_path)
    if backend:
        config.backend = backend
    config.dataset_size = count
    config.dataset_seed = seed
    config.validate()
    contracts = load_contracts(config)
    schemas = {c.schema.contract_id: c.schema for c in contracts}
    try:
        templates, slot_sets, rejects = _generate_stage(config, contracts)
        dataset = augment.build_dataset(
            templates, slot_sets, schemas, augment.Sampled(count, seed)
        )
    except (GeneratorError, augment.AugmentError) as exc:
        raise StageError("generate", exc) from exc
    augment.export_jsonl(dataset, out_path)
    click.echo(f"wrote {len(dataset.samples)} samples to {out_path}")
    if rejects:
        click.echo(f"generation rejected {len(rejects)} item(s)", err=True)


@cli.command()
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Pipeline config naming the contract bundles (default: builtin).")
def train(data_path, out_path, config_path):
    """Train the lookup-table parser from a JSONL dataset."""
    config = _load_config(config_path)
    contracts = load_contracts(config)
    schemas = {c.schema.contract_id: c.schema for c in contracts}
    dataset = augment.import_jsonl(data_path, schemas=schemas)
    try:
        model = semparser.train_model(dataset)
    except (semparser.SemParserError, ValueError) as exc:
        raise StageError("train", exc) from exc
    semparser.save_model(model, out_path)
    click.echo(
        f"trained on {len(dataset.samples)} samples; "
        f"{len(model.gazetteer)} surfaces, {len(model.schema_table)} schema entries; "
        f"model written to {out_path}"
    )


@cli.command()
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--text", "text", default=None, help="Case text on the command line.")
@click.option("--in", "in_path", type=click.Path(), default=None,
              help="Read the case text from a file.")
@click.option("--format", "fmt", type=click.Choice(["plain", "json"]), default="plain",
              show_default=True)
def parse(model_path, text, in_path, fmt):
    """Parse a legal case into ground facts."""
    if (text is None) == (in_path is None):
        raise click.UsageError("provide exactly one of --text or --in")
    if in_path is not None:
        text = Path(in_path).read_text(encoding="utf-8")
    model = semparser.load_model(model_path)
    try:
        result = semparser.parse_case(model, text)
    except semparser.SemParserError as exc:
        raise StageError("parse", exc) from exc
    if fmt == "json":
        doc = {
            "contract_id": result.contract_id,
            "entities": [
                {"role": e.role, "surface": e.surface, "start": e.start, "end": e.end}
                for e in result.extraction
            ],
            "facts": [render_atom(f) for f in result.facts],
            "diagnostics": [
                {"code": d.code, "message": d.message} for d in result.diagnostics
            ],
        }
        click.echo(json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False))
        return
    click.echo(f"contract: {result.contract_id}")
    for fact in result.facts:
        click.echo(render_atom(fact))
    for diag in result.diagnostics:
        click.echo(f"note [{diag.code}]: {diag.message}", err=True)


@cli.command()
@click.option("--program", "program_path", type=click.Path(), required=True)
@click.option("--facts", "facts_path", type=click.Path(), default=None)
@click.option("--goal", "goal_text", required=True)
@click.option("--format", "fmt", type=click.Choice(["text", "dot", "json"]),
              default="text", show_default=True)
@click.option("--max-depth", type=int, default=None)
@click.option("--hide-exceptions", is_flag=True, default=False)
def reason(program_path, facts_path, goal_text, fmt, max_depth, hide_exceptions):
    """Prove a goal against a rule set plus a fact file and print the trace."""
    program = parse_program(Path(program_path).read_text(encoding="utf-8"))
    facts = []
    if facts_path is not None:
        fact_program = parse_program(Path(facts_path).read_text(encoding="utf-8"))
        has_rules = any(not r.is_fact for r in fact_program.rules)
        if has_rules or fact_program.exceptions:
            raise ConfigError(f"facts file {facts_path} must contain ground facts only",
                              stage="load-facts")
        facts = [r.head for r in fact_program.rules]
    goal = parse_atom(goal_text)
    options = explain.RenderOptions(
        format=fmt, max_depth=max_depth, show_exceptions=not hide_exceptions
    )
    try:
        if goal.is_ground():
            proof = reasoner.solve(program, facts, goal)
            click.echo(explain.render(proof, options), nl=False)
            click.echo(f"verdict: {'proved' if proof.proved else 'failed'}", err=True)
        else:
            if fmt != "text":
                raise click.UsageError("open goals list solutions; use --format text")
            solutions = reasoner.all_solutions(program, facts, goal)
            if not solutions:
                click.echo("no solutions")
            for bindings in solutions:
                rendered = ", ".join(
                    f"{name} = {render_term(const)}" for name, const in bindings.items()
                )
                click.echo(rendered)
    except reasoner.ReasonerError as exc:
        raise StageError("reason", exc) from exc


@cli.command()
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--programs", "programs_dir", type=click.Path(), default=None,
              help="Directory of <contract_id>.proleg rule sets; 'builtin' for the bundled ones.")
@click.option("--report", "report_path", type=click.Path(), required=True)
@click.option("--no-figures", is_flag=True, default=False)
def evaluate(model_path, data_path, programs_dir, report_path, no_figures):
    """Evaluate a model on a dataset; optionally check goal verdicts."""
    model = semparser.load_model(model_path)
    dataset = augment.import_jsonl(data_path)
    programs = None
    if programs_dir == "builtin":
        programs = program_registry(load_builtin_contracts())
    elif programs_dir is not None:
        programs = {}
        for path in sorted(Path(programs_dir).glob("*.proleg")):
            programs[path.stem] = parse_program(path.read_text(encoding="utf-8"))
    try:
        result = semparser.evaluate_model(model, dataset, program_registry=programs)
    except (semparser.SemParserError, ValueError) as exc:
        raise StageError("evaluate", exc) from exc
    report_file = Path(report_path)
    doc = {
        "metrics": result.metrics_dict(),
        "per_sample": [
            {
                "sample_id": r.sample_id,
                "contract_id": r.contract_id,
                "template_id": r.template_id,
                "exact_match": r.exact_match,
                "gold_verdict": r.gold_verdict,
                "predicted_verdict": r.predicted_verdict,
                "error": r.error,
            }
            for r in result.per_sample
        ],
    }
    report_file.parent.mkdir(parents=True, exist_ok=True)
    report_file.write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    reports.write_report_csv(result.per_sample, report_file.with_suffix(".csv"))
    if not no_figures:
        reports.save_metrics_figure(
            {
                "fact_exact_match": result.fact_exact_match_accuracy,
                "entity_f1": result.entity_f1,
                "entailment_agreement": result.entailment_accuracy,
            },
            report_file.with_suffix(".png"),
        )
    for name, value in result.metrics_dict().items():
        if value is not None:
            click.echo(f"{name}: {value}")


@cli.command()
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--figure", "figure_path", type=click.Path(), default=None)
@click.option("--top", type=int, default=20, show_default=True)
def stats(data_path, csv_path, figure_path, top):
    """Slot-holder distribution of a dataset."""
    dataset = augment.import_jsonl(data_path)
    result = augment.dataset_stats(dataset)
    click.echo(f"samples: {result.sample_count}")
    click.echo(f"entity spans: {result.total_entities}")
    for cid, count in result.per_contract:
        click.echo(f"contract {cid}: {count} samples")
    click.echo("contract\trole\tsurface\tcount")
    for role_stat in result.role_counts:
        for surface, count in role_stat.surfaces:
            click.echo(f"{role_stat.contract_id}\t{role_stat.role}\t{surface}\t{count}")
    if csv_path:
        reports.write_stats_csv(result, csv_path)
    if figure_path:
        reports.save_slot_distribution_figure(result, figure_path, top=top)


@cli.command(name="pipeline")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Pipeline config JSON; defaults to the builtin desk-scale run.")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Also copy the report JSON to this path.")
@click.option("--out-dir", "out_dir", type=click.Path(), default=None,
              help="Override the artifact directory.")
def pipeline_cmd(config_path, report_path, out_dir):
    """Run the full pipeline: generate, build, split, train, evaluate, report."""
    config = _load_config(config_path)
    if out_dir is not None:
        config.output_dir = Path(out_dir)
    outcome = run_pipeline(config)
    metrics = outcome.report["metrics"]
    click.echo(f"artifacts in {outcome.output_dir}")
    click.echo(
        "heldout exact match: "
        f"{metrics['heldout']['fact_exact_match_accuracy']:.4f}"
    )
    click.echo(
        "resubstitution exact match: "
        f"{metrics['resubstitution']['fact_exact_match_accuracy']:.4f}"
    )
    if metrics["heldout"]["entailment_accuracy"] is not None:
        click.echo(f"entailment agreement: {metrics['heldout']['entailment_accuracy']:.4f}")
    if report_path is not None:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_bytes(outcome.report_path.read_bytes())
        click.echo(f"report copied to {report_path}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="proleg-forge", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except StageError as exc:
        click.echo(f"error {exc}", err=True)
        return 3
    except _INPUT_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except GeneratorError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
