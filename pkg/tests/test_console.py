#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Tests for mod.console."""


import json

import pytest

from mod import console


def test_debug_print_respects_verbosity(capsys):
    console.set_verbosity(2)
    console.debug_print("epoch done", 2)
    console.debug_print("batch done", 3)
    assert capsys.readouterr().out == "  epoch done\n"


def test_verbosity_is_clamped():
    console.set_verbosity(99)
    assert console.verbosity == console.maximum_verbosity_level
    console.set_verbosity(-3)
    assert console.verbosity == 0


def test_validate_directory(tmp_path):
    target = tmp_path / 'a' / 'b'
    assert console.validate_directory(target, 'test') == target
    assert target.is_dir()
    assert console.validate_directory(target, 'test') == target
    (tmp_path / 'file').write_text('x')
    with pytest.raises(NotADirectoryError):
        console.validate_directory(tmp_path / 'file', 'test')


def test_document_problem(tmp_path, capsys):
    path = console.document_problem('nonfinite_loss', {'epoch': 3, 'loss': float('nan')}, tmp_path / 'logs')
    assert path.parent == tmp_path / 'logs'
    assert path.name.startswith('nonfinite_loss_') and path.suffix == '.json'
    data = json.loads(path.read_text())
    assert data['epoch'] == 3 and data['traceback']
    assert capsys.readouterr().out == ''                    # verbosity 0 in tests


def test_document_problem_without_directory(capsys):
    console.set_verbosity(1)
    assert console.document_problem('convert_failure', {'image': '0100'}) is None
    out = capsys.readouterr().out
    assert 'PROBLEM TYPE: convert_failure' in out and '0100' in out
