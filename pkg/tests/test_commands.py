"""
Unit tests for the commands module.
"""

import pytest

from xbarsim.commands import Command, CommandCategory, CommandRegistry, command_registry


class TestCommand:
    """Test the Command dataclass."""

    def test_command_creation(self):
        """Test creating a command."""
        cmd = Command(
            name="test",
            description="Test command",
            category=CommandCategory.DEVICE,
            usage="xbarsim test",
            examples=["xbarsim test --seed 1"],
        )

        assert cmd.name == "test"
        assert cmd.category == CommandCategory.DEVICE
        assert cmd.examples == ["xbarsim test --seed 1"]
        assert cmd.aliases == []  # Should be empty by default

    def test_command_with_aliases(self):
        """Test creating a command with aliases."""
        cmd = Command(
            name="test",
            description="Test command",
            category=CommandCategory.EXPERIMENT,
            usage="xbarsim test",
            examples=[],
            aliases=["t"],
        )

        assert cmd.aliases == ["t"]


class TestCommandRegistry:
    """Test the CommandRegistry class."""

    def test_registry_has_every_subcommand(self):
        """Test that all six subcommands are registered."""
        names = [cmd.name for cmd in CommandRegistry().unique_commands()]

        assert names == ["device-sim", "train-demo", "convert", "sweep", "plot", "quantize-bench"]

    def test_get_command_by_alias(self):
        """Test getting a command by alias."""
        cmd = CommandRegistry().get_command("bench")

        assert cmd is not None
        assert cmd.name == "quantize-bench"  # Should return the main command

    def test_get_nonexistent_command(self):
        """Test getting a command that doesn't exist."""
        assert CommandRegistry().get_command("nonexistent") is None

    def test_case_insensitive_lookup(self):
        """Test that command lookup is case insensitive."""
        registry = CommandRegistry()

        assert registry.get_command("SWEEP") is registry.get_command("sweep")

    def test_commands_by_category(self):
        """Test grouping commands by category."""
        categorized = CommandRegistry().get_commands_by_category()

        assert [c.name for c in categorized[CommandCategory.DEVICE]] == ["device-sim"]
        assert {c.name for c in categorized[CommandCategory.NETWORK]} == {"train-demo", "convert"}
        assert len(categorized[CommandCategory.EXPERIMENT]) == 3

    def test_find_similar_commands(self):
        """Test finding similar commands."""
        similar = CommandRegistry().find_similar_commands("swe")

        assert isinstance(similar, list)
        assert len(similar) <= 5  # Should return max 5
        assert "sweep" in similar

    def test_every_command_has_examples(self):
        """Test that help output has something to show for each command."""
        for cmd in CommandRegistry().unique_commands():
            assert cmd.examples
            assert cmd.usage.startswith("xbarsim ")


class TestGlobalInstances:
    """Test the global instances."""

    def test_global_registry_exists(self):
        """Test that global command registry exists."""
        assert isinstance(command_registry, CommandRegistry)


if __name__ == "__main__":
    pytest.main([__file__])
