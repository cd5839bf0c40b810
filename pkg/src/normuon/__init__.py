"""Matrix-aware optimizers, a sharded-execution simulator, and a desk-scale
training harness for studying update geometry."""

__version__ = "0.1.0"
