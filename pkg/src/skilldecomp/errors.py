"""Exception hierarchy shared across the package.

Every error carries a short machine code (used by the CLI error line) and the
name of the module that raised it.
"""


class SkillDecompError(Exception):
    code = "E_MODEL"
    module = "core"

    def __init__(self, message, *, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module


class InputFileError(SkillDecompError, FileNotFoundError):
    code = "E_INPUT"
    module = "score-data"


class DataValidationError(SkillDecompError, ValueError):
    code = "E_DATA"
    module = "score-data"

    def __init__(self, message, *, line_numbers=(), module=None):
        super().__init__(message, module=module)
        self.line_numbers = tuple(line_numbers)


class DuplicateKeyError(DataValidationError):
    pass


class MalformedRowError(DataValidationError):
    pass


class DegenerateSequenceError(SkillDecompError, ValueError):
    code = "E_DATA"


class UndefinedAutocorrelationError(SkillDecompError, ValueError):
    module = "spline-skill"


class CollinearityError(SkillDecompError, ValueError):
    module = "interaction-effects"

    def __init__(self, message, *, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConfigError(SkillDecompError, ValueError):
    code = "E_CONFIG"
    module = "cli"


class ReportError(SkillDecompError, KeyError):
    module = "cli"

    def __str__(self):
        return self.args[0]
