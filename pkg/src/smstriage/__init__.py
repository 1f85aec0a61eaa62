"""SMS symptom triage and nearest-facility routing with outbreak risk mapping."""

__version__ = "0.1.0"
