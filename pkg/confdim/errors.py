"""Exceptions raised by confdim. Each one knows the exit code the CLI reports."""

from typing import Optional


class ConfdimError(Exception):
    exit_code = 1


class InvalidInputError(ConfdimError, ValueError):
    """Rejected input: violated preconditions, malformed JSON, bad parameters"""
    exit_code = 2


class ResolutionError(ConfdimError):
    """A requested level lies below the sample's resolution floor"""
    exit_code = 3


class BudgetError(ConfdimError):
    """A point budget or an instance size limit was exceeded

    Args:
        message (str): the error message
        depth (int, optional): the minimal offending depth, when known
    """
    exit_code = 3

    def __init__(self, message: str, depth: Optional[int] = None):
        super().__init__(message)
        self.depth = depth


class InconclusiveError(ConfdimError):
    exit_code = 4
