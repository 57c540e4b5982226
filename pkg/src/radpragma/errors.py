"""Exception types shared across the toolkit."""


class InputError(ValueError):
    """Malformed or inconsistent input data (files, alignment, versions)."""


class DegenerateTableError(ValueError):
    """A contingency table with a zero marginal cannot be tested."""


class BackendError(RuntimeError):
    """A remote backend call failed (transport, HTTP status, or bad payload).

    Carries enough context to locate the failing unit of work.
    """

    def __init__(self, message, *, rule_id=None, sentence_index=None,
                 study_id=None, endpoint=None):
        super().__init__(message)
        self.rule_id = rule_id
        self.sentence_index = sentence_index
        self.study_id = study_id
        self.endpoint = endpoint
