"""Learning-based model predictive control with safety and regret tooling."""

from __future__ import annotations

__version__ = "0.1.0"
