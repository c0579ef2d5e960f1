#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Exception hierarchy shared by every OMC-RL module."""


class OmcrlError(Exception):
    """Base class for all errors raised by the library."""


class DimensionError(OmcrlError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(OmcrlError):
    """An input lies outside the mathematical domain of an operation (e.g. log of a non-positive value)."""


class NumericError(OmcrlError):
    """A NaN or infinite value was produced or consumed."""


class ContractError(OmcrlError):
    """A caller violated a documented precondition."""


class ConfigError(OmcrlError):
    """The run configuration is invalid or inconsistent."""


class IntegrityError(OmcrlError):
    """A persisted artifact is truncated or corrupted."""


class VersionError(OmcrlError):
    """A persisted artifact was written by an incompatible format version."""


class PrerequisiteError(OmcrlError):
    """A pipeline stage was started before the stage it depends on produced its artifacts."""

    def __init__(self, message: str, required_command: str) -> None:
        super().__init__(f"{message} (run `omcrl {required_command}` first)")
        self.required_command = required_command
