"""Exception hierarchy shared by all fanolab modules."""
from __future__ import annotations


class FanolabError(Exception):
    """Base class for library errors."""


class ModelError(FanolabError, ValueError):
    """Invalid model parameters or an operation outside the model's scope."""


class KltError(ModelError):
    """Cone parameters violate the klt condition min(beta0, beta_inf) > 0."""


class AdmissibilityError(FanolabError, ValueError):
    """A potential is not discretely convex relative to the reference."""


class SolverError(FanolabError, RuntimeError):
    """A numerical method failed to converge or hit a guard."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ResourceError(FanolabError, RuntimeError):
    """A configured resource budget would be exceeded."""


class ConfigError(FanolabError, ValueError):
    """Run configuration failed schema validation."""
