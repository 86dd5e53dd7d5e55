"""Command-line entry point: run, summarize, audit, replay and fog-serve."""

import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click
import yaml
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .config.logging import setup_logging
from .config.settings import settings
from .core.contracts import load_contracts
from .core.fog import FogRepository, HttpFogClient
from .core.harness import ExperimentResult, audit_full_chain, load_csv, replay, run_experiment, summarize, write_results
from .data.models import AuditReport, ExperimentConfig, TraceSummary
from .errors import ConfigError, EdgeMinerError, StallDetected

console = Console()
err_console = Console(stderr=True)

EXIT_AUDIT_FAILED = 1
EXIT_ERROR = 2


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """YAML or JSON experiment config as a dict (JSON parses as YAML)."""
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of ExperimentConfig keys")
    return data


def build_config(file_values: Dict[str, Any], flag_values: Dict[str, Any]) -> ExperimentConfig:
    """Config file beats flags, flags beat model defaults."""
    merged = {k: v for k, v in flag_values.items() if v is not None}
    merged.update(file_values)
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _summary_table(summary: TraceSummary, title: str = "Contract trace summary") -> Table:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", justify="right")

    def fmt(value: Optional[float]) -> str:
        return "-" if value is None else f"{value:.2f}"

    table.add_row("phase 1 mean (ms)", fmt(summary.phase1_mean))
    table.add_row("phase 2 mean (ms)", fmt(summary.phase2_mean))
    table.add_row("change point", str(summary.change_point or "-"))
    table.add_row("peaks", str(len(summary.peak_indices)))
    table.add_row("peak mean (ms)", fmt(summary.peak_mean))
    table.add_row("window maxima", ", ".join(map(str, summary.window_maxima)) or "-")
    table.add_row("consensus mean (ms)", fmt(summary.consensus_mean))
    for miner_id, count in sorted(summary.leadership_counts.items()):
        table.add_row(f"blocks led by {miner_id}", str(count))
    for miner_id, score in sorted(summary.reputation.items()):
        table.add_row(f"reputation of {miner_id}", str(score))
    table.add_row("alarms", str(summary.alarm_count))
    return table


def _print_audit(report: AuditReport) -> None:
    if report.skipped:
        console.print(f"[yellow]audit skipped[/]: {report.reason}")
    elif report.passed:
        console.print(
            f"[bold green]✓ audit passed[/]: {report.blocks_audited} blocks, "
            f"{report.entries_audited} entries, {report.segments_audited} segments"
        )
    else:
        console.print(f"[bold red]✗ audit failed[/] at {report.failed_data_hash}: {report.reason}")


def fog_client(fog_url: Optional[str] = None) -> Optional[HttpFogClient]:
    """HTTP fog client for real mode, or None to keep the in-process fog."""
    url = fog_url or settings.fog_url
    if not url:
        return None
    return HttpFogClient(url, timeout=settings.fog_timeout_s)


def _fail(exc: EdgeMinerError) -> None:
    err_console.print(f"[bold red]error:[/] {exc}")
    sys.exit(EXIT_ERROR)


@click.group()
@click.option("--log-level", default=None, help="Override EDGE_MINER_LOG_LEVEL")
@click.option("--logging-config", default=None, type=click.Path(), help="YAML logging config")
def main(log_level: Optional[str], logging_config: Optional[str]) -> None:
    """Software-defined blockchain components on simulated edge miners."""
    setup_logging(logging_config, log_level)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML/JSON ExperimentConfig")
@click.option("--contracts", "contracts_path", type=click.Path(exists=True, dir_okay=False), help="YAML contract list")
@click.option("--miners", type=int, default=None, help="Number of e-miners")
@click.option("--interval", "interval_ms", type=float, default=None, help="Sensor interval in ms")
@click.option("--txn-count", type=int, default=None)
@click.option("--block-size", type=int, default=None)
@click.option("--activation", "activation_threshold", type=int, default=None)
@click.option("--offload", "offload_threshold", type=int, default=None)
@click.option("--sensors", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Results directory")
@click.option("--workdir", type=click.Path(file_okay=False), default=None, help="Keep fog and block files here")
@click.option("--fog-url", default=None, help="HTTP fog repository (overrides EDGE_MINER_FOG_URL)")
def run(
    config_path: Optional[str],
    contracts_path: Optional[str],
    miners: Optional[int],
    out_dir: Optional[str],
    workdir: Optional[str],
    fog_url: Optional[str],
    **flags: Any,
) -> None:
    """Run one experiment and write CSV traces, summary and audit."""
    try:
        if miners is not None:
            flags["miners"] = [f"miner-{i}" for i in range(miners)]
        if contracts_path is not None:
            flags["contracts"] = [c.model_dump() for c in load_contracts(contracts_path)]
        cfg = build_config(load_config_file(config_path), flags)
        fog = fog_client(fog_url)
        try:
            result: ExperimentResult = run_experiment(cfg, workdir, fog=fog)
        finally:
            if fog is not None:
                fog.close()
    except StallDetected as exc:
        err_console.print(f"[bold red]stalled:[/] {exc}")
        sys.exit(EXIT_ERROR)
    except EdgeMinerError as exc:
        _fail(exc)
        return

    target = Path(out_dir or Path(settings.output_dir) / f"interval-{int(cfg.interval_ms)}-seed-{cfg.seed}")
    paths = write_results(result, target)
    console.print(_summary_table(result.summary))
    _print_audit(result.audit)
    console.print(f"Results written to [bold]{target}[/] ({', '.join(sorted(paths))})")
    if not result.audit.passed:
        sys.exit(EXIT_AUDIT_FAILED)


@main.command("summarize")
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Print the summary as JSON")
def summarize_command(csv_path: str, config_path: Optional[str], as_json: bool) -> None:
    """Summarize a contract-latency CSV trace."""
    try:
        cfg = build_config(load_config_file(config_path), {})
        summary = summarize(load_csv(csv_path, "contract"), cfg)
    except EdgeMinerError as exc:
        _fail(exc)
        return
    if as_json:
        click.echo(json.dumps(summary.model_dump(mode="json"), indent=2, sort_keys=True))
    else:
        console.print(_summary_table(summary))


@main.command()
@click.argument("fog_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
def audit(fog_dir: str, config_path: Optional[str]) -> None:
    """Re-verify every segment stored in a fog repository."""
    try:
        cfg = build_config(load_config_file(config_path), {})
        report = audit_full_chain(FogRepository(fog_dir), cfg)
    except EdgeMinerError as exc:
        _fail(exc)
        return
    _print_audit(report)
    if not report.passed:
        sys.exit(EXIT_AUDIT_FAILED)


@main.command("replay")
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False))
def replay_command(out_dir: str) -> None:
    """Re-run a saved experiment and compare outputs byte for byte."""
    try:
        differing = replay(out_dir)
    except EdgeMinerError as exc:
        _fail(exc)
        return
    if differing:
        console.print(f"[bold red]✗ replay differs[/]: {', '.join(differing)}")
        sys.exit(EXIT_AUDIT_FAILED)
    console.print("[bold green]✓ replay identical[/]")


@main.command("fog-serve")
@click.option("--root", default=None, type=click.Path(file_okay=False), help="Fog directory")
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
def fog_serve(root: Optional[str], host: Optional[str], port: Optional[int]) -> None:
    """Serve a fog repository over HTTP."""
    from .core.fog_server import serve

    serve(
        FogRepository(root or settings.fog_dir),
        host=host or settings.fog_server_host,
        port=port or settings.fog_server_port,
    )


if __name__ == "__main__":
    main()
