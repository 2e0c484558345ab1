"""
Exception types shared by the simulation modules and the experiment harness.
"""


class FedCPUError(Exception):
    """Base class for all simulator errors"""


class InvalidArgumentError(FedCPUError, ValueError):
    """Raised for dimension mismatches, empty inputs and malformed arrays"""


class DegenerateRoundError(FedCPUError):
    """
    Raised when the normalizing factor is undefined because every device
    with a non-zero coefficient reported a zero standard deviation.
    """


class ConfigError(FedCPUError):
    """
    Raised when an experiment config cannot be parsed or fails validation.

    Args:
        message: Human readable description of the problem
        line: 1-based line in the config file, when it can be located
        path: Config file path, when known
    """

    def __init__(self, message, line=None, path=None):
        self.message = message
        self.line = line
        self.path = path
        super().__init__(self.__str__())

    def __str__(self):
        location = ""
        if self.path:
            location = f"{self.path}"
            if self.line:
                location += f":{self.line}"
            location += ": "
        elif self.line:
            location = f"line {self.line}: "
        return f"{location}{self.message}"
