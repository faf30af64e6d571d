"""Monte Carlo pricing of American options through entropy-regularized
penalization of reflected BSDEs."""
from __future__ import annotations

__version__ = "0.1.0"
