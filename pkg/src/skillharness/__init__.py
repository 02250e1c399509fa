"""Self-evolving LLM agent harness.

Online loop: three-stage skill matching, skill injection, ReAct execution,
asset-preserving context compression. Offline loop: post-session review,
profile/memory deltas, skill extraction with quality gating, and maturity
assessment.
"""

__version__ = "0.1.0"
