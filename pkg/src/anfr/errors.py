"""Exception types shared across the package."""


class AnfrError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(AnfrError, ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " vs ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ConfigError(AnfrError, ValueError):
    """Invalid configuration value or combination."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class GraphError(AnfrError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar root, repeated backward)."""


class TrainingError(AnfrError, RuntimeError):
    """Training diverged or produced non-finite values."""


class PartitionError(AnfrError, ValueError):
    """A partitioning request cannot be satisfied."""


class CheckpointError(AnfrError, ValueError):
    """A checkpoint file is corrupt, truncated, or from an unknown version."""
