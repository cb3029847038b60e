#!/usr/bin/env python3
"""
xbarsim - memristive crossbar inference simulator.

This is the main entry point, providing the command-line interface for
device simulation, network conversion, parameter sweeps and plotting.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from . import __version__
from .commands import command_registry
from .config import LOG_LEVELS, config
from .crossbar import conductance_to_csv, scheme_to_dict
from .datasets import gen_synthetic_dataset, kfold_split
from .device import Sinusoid, get_preset, load_device_preset
from .errors import ConfigurationError, XbarSimError
from .harness import ExperimentConfig, benchmark_quantize, build_base_network, evaluate, run_sweep
from .network import build_mlp, patch_model, save_weights, tune_all
from .nonideality import apply_cycle_variability
from .plotting import plot_csv
from .trainer import TrainConfig, train_tiny

logger = logging.getLogger(__name__)

console = Console()

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_PARTIAL_FAILURE = 2
MAX_TRACE_STEPS = 10_000_000


def setup_argument_parser() -> argparse.ArgumentParser:
    """Set up command-line argument parser."""
    parser = argparse.ArgumentParser(
        prog="xbarsim",
        description="xbarsim - memristive crossbar inference simulator",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Environment Variables:
  XBARSIM_LOG_LEVEL   - Logging level (default: INFO)
  XBARSIM_LOG_FILE    - Also log to this file
  XBARSIM_SEED        - Master seed (default: 0)
  XBARSIM_THREADS     - Worker threads (default: CPU count)
  XBARSIM_OUT_DIR     - Output directory (default: results)
  XBARSIM_MAX_PULSES  - Pulse budget for pulsed programming (default: 1000)
        """,
    )
    parser.add_argument("--version", action="version", version=f"xbarsim v{__version__}")
    parser.add_argument("--log-level", choices=LOG_LEVELS, help="Set logging level")
    parser.add_argument("--seed", type=int, help="Master seed (overrides environment and config)")
    parser.add_argument("--out-dir", help="Directory for output files")
    parser.add_argument("--threads", type=int, help="Worker threads")

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for cmd in command_registry.unique_commands():
        sub = subparsers.add_parser(
            cmd.name,
            aliases=cmd.aliases,
            help=cmd.description,
            description=cmd.description,
            usage=cmd.usage,
            epilog="Examples:\n  " + "\n  ".join(cmd.examples),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        ARGUMENTS[cmd.name](sub)
        sub.set_defaults(handler=HANDLERS[cmd.name])
    return parser


def _device_sim_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--preset", default="linear_ion_drift", help="Device preset (default: %(default)s)")
    sub.add_argument("--device-json", help="Load the device template from a JSON file instead")
    sub.add_argument("--amplitude", type=float, default=1.0, help="Sinusoid amplitude in volts")
    sub.add_argument("--frequency", type=float, default=0.5, help="Sinusoid frequency in hertz")
    sub.add_argument("--cycles", type=int, default=1, help="Number of sinusoid periods")
    sub.add_argument("--dt", type=float, help="Override the device timestep")
    sub.add_argument("--c2c-sigma", type=float, default=0.0, help="Resample R_on/R_off after each cycle")
    sub.add_argument("--output", help="Trace CSV (default: OUT_DIR/trace.csv)")


def _train_demo_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--samples", type=int, default=2000)
    sub.add_argument("--features", type=int, default=64)
    sub.add_argument("--separation", type=float, default=4.0)
    sub.add_argument("--hidden", type=int, nargs="+", default=[32])
    sub.add_argument("--epochs", type=int, default=30)
    sub.add_argument("--learning-rate", type=float, default=0.1)
    sub.add_argument("--batch-size", type=int, default=64)
    sub.add_argument("--batch-norm", action="store_true")
    sub.add_argument("--output", help="Weight JSON (default: OUT_DIR/weights.json)")


def _convert_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="Experiment JSON")
    sub.add_argument("--save-crossbars", help="Write the crossbar state of every layer as JSON")
    sub.add_argument("--conductance-dir", help="Write one conductance CSV per crossbar")


def _sweep_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="Experiment JSON")
    sub.add_argument("--output", help="Results CSV (default: OUT_DIR/sweep.csv)")


def _plot_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("csv", help="Sweep CSV")
    sub.add_argument("--x", required=True, help="Column for the horizontal axis")
    sub.add_argument("--series", help="Column with one line per value")
    sub.add_argument("--value", default="value", help="Plotted column (default: %(default)s)")
    sub.add_argument("--output", help="SVG path (default: CSV path with .svg)")


def _bench_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--elements", type=int, default=1_000_000)
    sub.add_argument("--states", type=int, default=16)
    sub.add_argument("--thread-counts", default="1,2,4", help="Comma-separated thread counts")


def _out_path(args: argparse.Namespace, explicit: Optional[str], default_name: str) -> Path:
    if explicit:
        path = Path(explicit)
    else:
        path = Path(args.out_dir) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_device_sim(args: argparse.Namespace) -> int:
    template = load_device_preset(args.device_json) if args.device_json else get_preset(args.preset)
    if args.dt is not None:
        template = replace(template, params=replace(template.params, dt=args.dt))
    if args.cycles < 1 or args.frequency <= 0:
        raise ConfigurationError("device-sim needs --cycles >= 1 and --frequency > 0")
    steps = round(1.0 / (args.frequency * template.params.dt))
    if steps > MAX_TRACE_STEPS:
        raise ConfigurationError(
            f"One period at dt={template.params.dt} needs {steps} steps; pass a larger --dt"
        )
    rng = np.random.default_rng(args.seed)
    device = template.instantiate(rng)
    period = Sinusoid(args.amplitude, args.frequency, 1.0 / args.frequency)

    frames: List[pd.DataFrame] = []
    for cycle in range(args.cycles):
        frame = device.simulate(period).to_frame()
        frame["t"] += cycle / args.frequency
        frames.append(frame if cycle == 0 else frame.iloc[1:])
        if args.c2c_sigma:
            apply_cycle_variability(device, args.c2c_sigma, rng)
    trace = pd.concat(frames, ignore_index=True)
    output = _out_path(args, args.output, "trace.csv")
    trace.to_csv(output, index=False)

    table = Table(title=f"{template.kind} device simulation")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", style="yellow")
    table.add_row("Samples", str(len(trace)))
    table.add_row("Peak |i| (A)", f"{trace['i'].abs().max():.6g}")
    table.add_row("State range (m)", f"{trace['w'].min():.4g} .. {trace['w'].max():.4g}")
    table.add_row("Final resistance (ohm)", f"{device.resistance():.6g}")
    table.add_row("Trace", str(output))
    console.print(table)
    return EXIT_OK


def cmd_train_demo(args: argparse.Namespace) -> int:
    data = gen_synthetic_dataset(args.samples, args.features, args.separation, args.seed)
    train_idx, test_idx = kfold_split(len(data), 5, args.seed)[0]
    net = build_mlp([args.features, *args.hidden, 2], np.random.default_rng(args.seed), args.batch_norm)
    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    result = train_tiny(net, data.subset(train_idx), cfg, eval_dataset=data.subset(test_idx))
    output = _out_path(args, args.output, "weights.json")
    save_weights(result.network, output)

    table = Table(title="Training summary")
    table.add_column("Epoch", style="cyan", justify="right")
    table.add_column("Loss", style="yellow")
    table.add_column("Test accuracy", style="green")
    for epoch, (loss, acc) in enumerate(zip(result.losses, result.accuracies), start=1):
        if epoch == 1 or epoch == len(result.losses) or epoch % 10 == 0:
            table.add_row(str(epoch), f"{loss:.4f}", f"{acc:.4f}")
    console.print(table)
    console.print(f"[green]Weights written to {output}[/green]")
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    from .datasets import dataset_from_dict

    cfg = ExperimentConfig.load(args.config, seed=args.seed)
    assignments = [(axis.path, axis.values[0]) for axis in cfg.axes]
    settings = cfg.point_settings(cfg.point_document(assignments))
    data = dataset_from_dict(cfg.document["dataset"], cfg.seed)
    train_idx, test_idx = kfold_split(len(data), cfg.k_folds, cfg.seed)[0]
    test = data.subset(test_idx)
    base = build_base_network(cfg, data.subset(train_idx), 0)

    rng = np.random.default_rng(cfg.seed)
    patched = patch_model(
        base,
        settings.template,
        settings.mapping,
        settings.stack,
        rng,
        arrangement=settings.arrangement,
        scaling=settings.scaling,
        pulse_options=settings.pulse_options,
    )
    transforms = tune_all(patched, settings.tuning_rows, rng)

    table = Table(title="Tuned memristive layers")
    table.add_column("Layer", style="cyan")
    table.add_column("Crossbars", style="yellow")
    table.add_column("Slope", style="yellow")
    table.add_column("Intercept", style="yellow")
    table.add_column("R^2", style="green")
    for layer, transform in zip(patched.memristive_layers(), transforms):
        table.add_row(
            layer.name,
            f"{len(layer.crossbars())} x {layer.scheme.shape[0]}x{layer.scheme.shape[1]}",
            f"{np.mean(transform.slope):.6g}",
            f"{np.mean(transform.intercept):.6g}",
            "-" if transform.r_squared is None else f"{transform.r_squared:.6f}",
        )
    console.print(table)
    console.print(
        f"Legacy {cfg.metric}: [bold]{evaluate(base, test, cfg.metric):.4f}[/bold]  "
        f"Crossbar {cfg.metric}: [bold]{evaluate(patched, test, cfg.metric):.4f}[/bold]"
    )

    if args.save_crossbars:
        path = _out_path(args, args.save_crossbars, "crossbars.json")
        document = {
            "layers": [
                {"name": layer.name, "transform": layer.transform.to_dict(), **scheme_to_dict(layer.scheme)}
                for layer in patched.memristive_layers()
            ]
        }
        with open(path, "w") as f:
            json.dump(document, f)
        console.print(f"[green]Crossbar state written to {path}[/green]")
    if args.conductance_dir:
        directory = Path(args.conductance_dir)
        directory.mkdir(parents=True, exist_ok=True)
        for layer in patched.memristive_layers():
            for index, xbar in enumerate(layer.crossbars()):
                conductance_to_csv(xbar, directory / f"{layer.name}.{index}.csv")
        console.print(f"[green]Conductances written to {directory}[/green]")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config, seed=args.seed)
    output = _out_path(args, args.output, "sweep.csv")
    result = run_sweep(cfg, output, threads=args.threads)

    table = Table(title="Sweep summary")
    table.add_column("Setting", style="cyan")
    table.add_column("Value", style="yellow")
    table.add_row("Points", str(len(result.records)))
    table.add_row("Failed", str(len(result.failures)))
    values = [r.value for r in result.records if not r.error]
    if values:
        table.add_row(f"Mean {cfg.metric}", f"{np.mean(values):.4f}")
    table.add_row("CSV", str(output))
    console.print(table)
    if result.failures:
        console.print(f"[yellow]{len(result.failures)} sweep points failed; see the error column[/yellow]")
        return EXIT_PARTIAL_FAILURE
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    output = Path(args.output) if args.output else Path(args.csv).with_suffix(".svg")
    plotted = plot_csv(args.csv, args.x, args.series, output, value=args.value)
    console.print(f"[green]{len(plotted)} series plotted to {output}[/green]")
    return EXIT_OK


def cmd_quantize_bench(args: argparse.Namespace) -> int:
    try:
        thread_counts = [int(t) for t in args.thread_counts.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"Invalid --thread-counts: {args.thread_counts!r}")
    rows = benchmark_quantize(args.elements, args.states, thread_counts, seed=args.seed)

    table = Table(title=f"quantize: {args.elements} elements, {args.states} states")
    table.add_column("Threads", style="cyan", justify="right")
    table.add_column("Seconds", style="yellow")
    table.add_column("Elements/s", style="green")
    for row in rows:
        table.add_row(str(row.threads), f"{row.seconds:.4f}", f"{row.elements_per_second:.3g}")
    console.print(table)
    return EXIT_OK


ARGUMENTS = {
    "device-sim": _device_sim_arguments,
    "train-demo": _train_demo_arguments,
    "convert": _convert_arguments,
    "sweep": _sweep_arguments,
    "plot": _plot_arguments,
    "quantize-bench": _bench_arguments,
}

HANDLERS = {
    "device-sim": cmd_device_sim,
    "train-demo": cmd_train_demo,
    "convert": cmd_convert,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
    "quantize-bench": cmd_quantize_bench,
}


VALUE_OPTIONS = ("--log-level", "--seed", "--out-dir", "--threads")


def _suggest_command(argv: List[str]) -> Optional[str]:
    """Return a hint when the first positional argument is not a known command."""
    tokens = iter(argv)
    for token in tokens:
        if token in VALUE_OPTIONS:
            next(tokens, None)
            continue
        if token.startswith("-"):
            continue
        if command_registry.get_command(token) is None:
            similar = command_registry.find_similar_commands(token)
            hint = f" Did you mean: {', '.join(similar)}?" if similar else ""
            return f"Unknown command '{token}'.{hint}"
        return None
    return None


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the application."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = setup_argument_parser()

    try:
        hint = _suggest_command(argv)
        args = parser.parse_args(argv)
        config.setup_logging(args.log_level)
        if args.seed is None:
            args.seed = config.seed
        if args.out_dir is None:
            args.out_dir = config.out_dir
        if args.threads is None:
            args.threads = config.threads
        elif args.threads < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {args.threads}")
        logger.debug(f"Running {args.command} with seed {args.seed}")
        return args.handler(args)
    except SystemExit as e:
        if e.code not in (0, None) and hint:
            console.print(f"[red]{hint}[/red]")
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG_ERROR
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        console.print("\nInterrupted")
        return EXIT_CONFIG_ERROR
    except XbarSimError as e:
        logger.error(f"{args.command} failed: {e}")
        console.print(f"[red]Error: {e}[/red]")
        return EXIT_CONFIG_ERROR
    except OSError as e:
        logger.error(f"{args.command} failed on file I/O: {e}")
        console.print(f"[red]I/O error: {e}[/red]")
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
