"""
Command registry for the xbarsim CLI.

This module describes every subcommand (name, aliases, usage, examples)
so that argument parsing and help output share one source of truth.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


class CommandCategory(Enum):
    """Categories for organizing commands."""

    DEVICE = "Device"
    NETWORK = "Network"
    EXPERIMENT = "Experiment"


@dataclass
class Command:
    """Represents a CLI subcommand."""

    name: str
    description: str
    category: CommandCategory
    usage: str
    examples: List[str]
    aliases: List[str] = field(default_factory=list)


class CommandRegistry:
    """Registry for all available subcommands."""

    def __init__(self):
        self.commands: Dict[str, Command] = {}
        self._register_commands()

    def _register_commands(self):
        """Register all available commands."""
        commands = [
            Command(
                name="device-sim",
                description="Simulate one device under a sinusoid and write its I/V trace",
                category=CommandCategory.DEVICE,
                usage="xbarsim device-sim [--preset NAME] [--amplitude V] [--frequency HZ] [--cycles N]",
                examples=[
                    "xbarsim device-sim --preset linear_ion_drift",
                    "xbarsim device-sim --preset pt_hf_ti --dt 1e-3 --cycles 10 --c2c-sigma 20",
                ],
                aliases=["sim"],
            ),
            Command(
                name="train-demo",
                description="Train the demo MLP on synthetic data and save its weights",
                category=CommandCategory.NETWORK,
                usage="xbarsim train-demo [--samples N] [--features F] [--separation S] [--epochs E]",
                examples=["xbarsim train-demo", "xbarsim train-demo --separation 6 --epochs 50"],
                aliases=["train"],
            ),
            Command(
                name="convert",
                description="Patch a trained network onto crossbars, tune it and compare with legacy",
                category=CommandCategory.NETWORK,
                usage="xbarsim convert --config EXPERIMENT.json",
                examples=["xbarsim convert --config ideal.json --save-crossbars xbars.json"],
                aliases=["patch"],
            ),
            Command(
                name="sweep",
                description="Run a seeded parameter sweep and write the results CSV",
                category=CommandCategory.EXPERIMENT,
                usage="xbarsim sweep --config EXPERIMENT.json [--output CSV]",
                examples=["xbarsim sweep --config finite_states.json --threads 4"],
                aliases=["run"],
            ),
            Command(
                name="plot",
                description="Plot a sweep CSV as an SVG line chart",
                category=CommandCategory.EXPERIMENT,
                usage="xbarsim plot CSV --x COLUMN [--series COLUMN] [--output FILE]",
                examples=["xbarsim plot results/sweep.csv --x nonidealities.0.n"],
                aliases=["chart"],
            ),
            Command(
                name="quantize-bench",
                description="Measure quantization throughput across thread counts",
                category=CommandCategory.EXPERIMENT,
                usage="xbarsim quantize-bench [--elements N] [--states K] [--thread-counts 1,2,4]",
                examples=["xbarsim quantize-bench --elements 4000000 --thread-counts 1,2,4,8"],
                aliases=["bench"],
            ),
        ]

        for cmd in commands:
            self.commands[cmd.name] = cmd
            for alias in cmd.aliases:
                self.commands[alias] = cmd

    def get_command(self, name: str) -> Optional[Command]:
        """Get a command by name or alias."""
        return self.commands.get(name.lower())

    def unique_commands(self) -> List[Command]:
        """Commands in registration order, without alias duplicates."""
        seen = set()
        unique = []
        for cmd in self.commands.values():
            if cmd.name not in seen:
                seen.add(cmd.name)
                unique.append(cmd)
        return unique

    def get_commands_by_category(self) -> Dict[CommandCategory, List[Command]]:
        """Get all commands organized by category."""
        categorized: Dict[CommandCategory, List[Command]] = {}
        for cmd in self.unique_commands():
            categorized.setdefault(cmd.category, []).append(cmd)
        return categorized

    def find_similar_commands(self, name: str) -> List[str]:
        """Find similar command names for suggestions."""
        name_lower = name.lower()
        similar = [
            cmd_name
            for cmd_name in self.commands
            if name_lower in cmd_name or cmd_name.startswith(name_lower)
        ]
        return sorted(similar)[:5]


# Global command registry instance
command_registry = CommandRegistry()
