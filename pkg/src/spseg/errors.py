class ValidationError(ValueError):
    """Input rejected before any computation ran."""


class ParseError(ValidationError):
    """A file could not be parsed; message names the offending line."""


class SceneSpecError(ValidationError):
    """A synthetic-scene spec cannot produce a usable cloud."""


class TrainingDiverged(RuntimeError):
    """A loss term became non-finite during optimization."""

    def __init__(self, term: str, epoch: int, step: int):
        self.term = term
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite loss term '{term}' at epoch {epoch}, step {step}")
