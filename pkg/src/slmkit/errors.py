"""Exception types shared across the toolkit."""


class SlmkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SlmkitError):
    """A configuration value violates its contract."""


class EmptyCorpusError(SlmkitError):
    """An operation received a corpus with no documents (or no windows)."""


class EmptyInputError(SlmkitError):
    """An operation received an empty token sequence."""


class UnsupportedClusterError(SlmkitError):
    """The generic corpus cannot represent a cluster the target requires."""

    def __init__(self, cluster: int, message: str | None = None):
        self.cluster = cluster
        super().__init__(message or f"cluster {cluster} has no support in the generic set")


class TrainingDivergedError(SlmkitError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, batch_hash: str):
        self.step = step
        self.batch_hash = batch_hash
        super().__init__(f"non-finite loss at step {step} (batch {batch_hash})")


class StageDependencyError(SlmkitError):
    """A pipeline stage was run before the stage it depends on."""

    def __init__(self, missing_stage: str, artifact: str):
        self.missing_stage = missing_stage
        self.artifact = artifact
        super().__init__(
            f"missing artifact {artifact!r}: run the {missing_stage!r} stage first"
        )
