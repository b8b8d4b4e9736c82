import csv
import json
import logging
import math
import os
from typing import Any, Iterable, Union

import numpy as np

from .errors import InvalidInputError

SIGNIFICANT_DIGITS = 12
SUMMARY_WIDTH = 200
LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)

Number = Union[int, float]


def setup_logging(verbosity: int) -> None:
    """Configures the root logger from the -v count of the CLI

    Args:
        verbosity (int): 0 for warnings only, 1 for info, 2 or more for debug
    """
    level = LOG_LEVELS[min(verbosity, len(LOG_LEVELS)-1)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def fmt(value: Number) -> str:
    """Renders a number with 12 significant digits

    Args:
        value (int|float): the number

    Returns:
        str: the formatted number; 'inf', '-inf' and 'nan' for non finite values
    """
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return 'nan'
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    # avoid '-0' in outputs
    if value == 0:
        return '0'
    return f'{value:.{SIGNIFICANT_DIGITS}g}'


def jsonable(obj: Any) -> Any:
    """Converts numpy values, tuples and dataclass dicts into plain JSON data.
    Floats are passed through fmt and parsed back so every written number
    carries at most 12 significant digits.
    """
    if isinstance(obj, dict):
        return {str(key): jsonable(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(val) for val in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(val) for val in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        text = fmt(obj)
        if text in ('inf', '-inf', 'nan'):
            return text
        return float(text)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2)


def write_json(obj: Any, path: str) -> str:
    """Writes <obj> as JSON with sorted keys and 12 significant digits

    Args:
        obj (Any): the document, made of dicts, lists, numbers and strings
        path (str): destination file, '-' for stdout

    Returns:
        str: the written text
    """
    text = dumps(obj) + '\n'
    if path == '-':
        print(text, end='')
    else:
        with open(path, 'w', encoding='utf-8') as file:
            file.write(text)
    return text


def read_json(path: str) -> Any:
    """Loads a JSON document, converting I/O and syntax failures into InvalidInputError"""
    try:
        with open(path, 'r', encoding='utf-8') as file:
            return json.load(file)
    except (OSError, json.JSONDecodeError) as err:
        raise InvalidInputError(f"cannot read JSON from {path}: {err}") from err


def write_csv(header: list[str], rows: Iterable[Iterable[Any]], path: str) -> None:
    """Writes rows to a CSV file, numbers rendered by fmt

    Args:
        header (list[str]): column names
        rows (Iterable[Iterable[Any]]): the rows, in order
        path (str): destination file
    """
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(val) if isinstance(val, (int, float, np.number)) and not isinstance(val, bool) else val
                             for val in row])


def output_path(out: str, name: str, extension: str) -> str:
    """Composes <out>/<name>.<extension>, creating <out> if needed"""
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, f'{name}.{extension}')


def summarize(data: Any, verbosity: int) -> str:
    """One-line rendering of a command result for the -v summary on stderr.
    Structured data goes through jsonable, so numbers carry 12 significant
    digits; below -vv the line stops at SUMMARY_WIDTH characters.
    """
    line = data if isinstance(data, str) else json.dumps(jsonable(data), sort_keys=True)
    if verbosity < 2 and len(line) > SUMMARY_WIDTH:
        line = line[:SUMMARY_WIDTH] + " (...)"
    return line
