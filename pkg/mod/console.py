#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Console and problem-logging utilities shared by the rest of the grasp-map
toolkit: thread-safe printing, verbosity-gated progress chatter, and JSON
post-mortem files for situations that need a closer look after a run.

This module is part of the graspmap toolkit. It is released under the GPL,
either version 3 or (at your option) any later version. See the file LICENSE
for a copy of this license.
"""


import datetime
import json
import pprint
import shlex
import threading
import traceback
import typing

from pathlib import Path


# Definitions of debugging verbosity levels:
# 0         Only print "regular things": results, reports, fatal errors
# 1         Also display warnings.
# 2         Also display chatty messages about large-scale progress (epochs, files).
# 3         Also display each batch processed.
# 4         Also chatter extensively about individual layers and steps.
verbosity = 2  # How chatty are we being about our progress?
maximum_verbosity_level = 4


print_mutex = threading.Lock()
def safe_print(*args, **kwargs) -> None:
    """Print safely, i.e. in a way that ensures multiple threads aren't trying to print
    at the same time and stepping on each other's output.
    """
    with print_mutex:
        print(*args, **kwargs)


def safe_pprint(*args, **kwargs) -> None:
    """Same as safe_print, but safely pprints instead of printing.
    """
    with print_mutex:
        pprint.pprint(*args, **kwargs)


def debug_print(what: str, min_level: int = 1) -> None:
    """Print WHAT, if the global VERBOSITY is at least MIN_LEVEL.
    """
    if verbosity >= min_level:
        safe_print(" " * min_level + what)       # Indent according to unimportance level.


def set_verbosity(level: int) -> None:
    """Set the global VERBOSITY, clamped to the legal range.
    """
    global verbosity
    verbosity = max(0, min(maximum_verbosity_level, int(level)))


def validate_directory(p: Path,
                       desc: str) -> Path:
    """Checks to make sure that directory with path P and textual description DESC
    does in fact exist and is in fact a directory, creating it (and its parents)
    if it does not exist yet. Returns P.
    """
    p = Path(p)
    if p.exists():
        if not p.is_dir():
            raise NotADirectoryError(f"ERROR: {desc} path {shlex.quote(str(p))} exists, but is not a directory!")
    else:
        p.mkdir(parents=True)
        debug_print(f"(successfully created {desc} directory {shlex.quote(str(p))})", 2)
    return p


def document_problem(problem_type: str,
                     data: typing.Dict[str, typing.Any],
                     logs_directory: typing.Optional[Path] = None,
                     also_print: bool = True) -> typing.Optional[Path]:
    """Document the fact that a problem situation arose.

    PROBLEM_TYPE is a short string indicating what type of problem arose; it should
    be chosen from a small list of short standard strings ('nonfinite_loss',
    'convert_failure', ...). DATA is the data to be stored about the problem.

    If LOGS_DIRECTORY is given, a filename for the log file is automatically
    determined and the data, plus a summary of the current stack, is written there
    as JSON. Returns the path written, or None if nothing was written.

    If ALSO_PRINT is True (the default), also dumps the complaint to the terminal.
    """
    data = dict(data)
    data['traceback'] = [str(frame) for frame in traceback.extract_stack()[:-1]]
    ret = None
    if logs_directory is not None:
        validate_directory(Path(logs_directory), 'logs')
        found = False
        while not found:
            ret = Path(logs_directory) / (problem_type + '_' + datetime.datetime.now().isoformat().replace(':', '_') + '.json')
            found = not ret.exists()
        ret.write_text(json.dumps(data, indent=2, default=str, sort_keys=True))
    if also_print and verbosity >= 1:
        safe_print("PROBLEM TYPE: " + problem_type + '\n\nData:\n')
        safe_pprint({k: v for k, v in data.items() if k != 'traceback'})
    return ret
