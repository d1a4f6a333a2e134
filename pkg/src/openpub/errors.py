"""Exception hierarchy. Everything raised on purpose derives from OpenpubError."""

from __future__ import annotations


class OpenpubError(Exception):
    """Base class; the CLI maps these to exit status 1."""


class ManifestMissing(OpenpubError):
    pass


class ManifestInvalid(OpenpubError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class FileMissing(OpenpubError):
    def __init__(self, path: str):
        super().__init__(path)
        self.path = path


class BundleIoError(OpenpubError):
    pass


class EncodingError(OpenpubError):
    pass


class LLMGateError(OpenpubError):
    pass


class CassetteMiss(LLMGateError):
    def __init__(self, template_id: str, run_index: int):
        super().__init__(f"no cassette entry for template {template_id!r} run {run_index}")
        self.template_id = template_id
        self.run_index = run_index


class CassetteInvalid(LLMGateError):
    pass


class BackendTimeout(LLMGateError):
    pass


class BackendAuth(LLMGateError):
    pass


class BackendError(LLMGateError):
    pass


class ResponseUnparsable(OpenpubError):
    pass


class AllRunsFailed(OpenpubError):
    def __init__(self, kind: str, errors: list[str]):
        super().__init__(f"all {len(errors)} runs of the {kind} checker failed: " + "; ".join(errors))
        self.kind = kind
        self.errors = errors


class UnknownTarget(OpenpubError):
    pass


class AnnotationError(OpenpubError):
    pass


class MissingStageInput(OpenpubError):
    def __init__(self, path: str):
        super().__init__(f"missing stage input: {path}")
        self.path = path


class UnknownFixture(OpenpubError):
    pass
