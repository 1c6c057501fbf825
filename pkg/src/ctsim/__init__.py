"""Deterministic discrete-event simulator of concurrent-transmission
multi-robot speed coordination: a flooding-based networking unit loosely
coupled to a PID control unit over a four-phase serial line protocol."""

__version__ = "0.1.0"
