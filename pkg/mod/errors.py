#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Exception classes raised by the graspmap toolkit. Each carries enough structure
(which operation, which dimension, which file and line) that a caller can report
the problem without parsing the message text.

This module is part of the graspmap toolkit. It is released under the GPL,
either version 3 or (at your option) any later version. See the file LICENSE
for a copy of this license.
"""


import typing


class GraspMapError(Exception):
    """Root of every exception the toolkit raises on purpose."""


class ShapeMismatchError(GraspMapError, ValueError):
    """Raised when a tensor's shape does not agree with what an operation expects.
    OP names the operation, DIMENSION names the offending axis (e.g. 'in_channels'
    or 'height'), EXPECTED and GOT are the conflicting extents.
    """
    def __init__(self, op: str,
                 dimension: str,
                 expected: typing.Any,
                 got: typing.Any) -> None:
        self.op, self.dimension, self.expected, self.got = op, dimension, expected, got
        GraspMapError.__init__(self, f"{op}: shape mismatch in {dimension}: expected {expected}, got {got}")


class ParameterRangeError(GraspMapError, ValueError):
    """Raised when a configuration value or call parameter lies outside its legal range."""
    def __init__(self, name: str,
                 value: typing.Any,
                 legal: str) -> None:
        self.name, self.value, self.legal = name, value, legal
        GraspMapError.__init__(self, f"parameter {name}={value!r} is outside its legal range {legal}")


class EmptyInputError(GraspMapError, ValueError):
    """Raised when an operation needs at least one item (pixel, rectangle, sample)
    and got none.
    """


class FormatError(GraspMapError):
    """Raised when a file (or a chunk of text standing in for one) cannot be parsed.
    PATH may be None for in-memory text; LINE is 1-based, or None if the problem
    is not attached to a line.
    """
    def __init__(self, reason: str,
                 path: typing.Optional[str] = None,
                 line: typing.Optional[int] = None) -> None:
        self.reason, self.path, self.line = reason, path, line
        where = ''
        if path is not None:
            where += f"{path}: "
        if line is not None:
            where += f"line {line}: "
        GraspMapError.__init__(self, where + reason)


class ChecksumError(FormatError):
    """Raised when a weight stream's checksum does not match its contents."""


class FormatVersionError(FormatError):
    """Raised when a weight stream was written by an incompatible format version."""


class NumericalError(GraspMapError, ArithmeticError):
    """Raised when a non-finite value turns up where it cannot be tolerated. WHERE
    describes the location (parameter name, epoch/batch coordinates ...).
    """
    def __init__(self, where: str,
                 details: str = 'non-finite value') -> None:
        self.where, self.details = where, details
        GraspMapError.__init__(self, f"{details} at {where}")
