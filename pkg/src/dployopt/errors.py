"""Exception hierarchy shared by every module.

Each error carries a short ``code`` (the class name) so the CLI can emit
``ERROR <code>: <detail>`` lines that are easy to grep.
"""


class DployoptError(Exception):
    """Base class for all library errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class InputError(DployoptError):
    """Malformed or invalid input data."""


class MissingField(InputError):
    def __init__(self, field: str, where: str = ""):
        self.field = field
        super().__init__(f"missing field '{field}'" + (f" in {where}" if where else ""))


class UnknownEngine(InputError):
    def __init__(self, value, field: str = "engines"):
        self.field = field
        self.value = value
        super().__init__(f"unknown engine {value!r} in field '{field}'")


class NonPositiveCores(InputError):
    def __init__(self, value, field: str = "n_cores"):
        self.field = field
        super().__init__(f"field '{field}' must be >= 1, got {value!r}")


class MalformedRow(InputError):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: malformed row" + (f" ({detail})" if detail else ""))


class NegativeLatency(InputError):
    def __init__(self, line_no: int, value: float):
        self.line_no = line_no
        super().__init__(f"line {line_no}: latency_ms must be > 0, got {value}")


class EmptySpace(DployoptError):
    """The design space is empty (no variants)."""


class EmptyRuns(DployoptError):
    """No measurement runs to aggregate."""


class MissingEntry(DployoptError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"no lookup-table entry for design key {key}")


class MissingNormalizer(DployoptError):
    pass


class MissingReference(DployoptError):
    pass


class NoFeasibleDesign(DployoptError):
    def __init__(self, report: dict, evaluated: int = 0):
        self.report = report
        self.evaluated = evaluated
        parts = ", ".join(f"{k}: {v}" for k, v in report.items()) or "no constraints"
        super().__init__(f"no feasible design among {evaluated} evaluated ({parts})")
