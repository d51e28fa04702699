"""Real-time audiovisual translation orchestration on a deterministic media clock."""

__version__ = "0.1.0"
