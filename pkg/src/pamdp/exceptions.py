"""Error categories shared across the package.

The CLI maps each category to an exit status: configuration problems exit
with 2, infeasible episode budgets with 3 and file-system failures with 4.
"""


class ConfigError(ValueError):
    """Invalid configuration, dimension mismatch or malformed input."""


class BudgetError(ConfigError):
    """The episode budget cannot accommodate the requested schedule."""

    def __init__(self, message, min_episodes=None):
        super().__init__(message)
        self.min_episodes = min_episodes


class EmissionError(OSError):
    """Writing an output artifact failed."""
