#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Quick setuptools script to build the _scatter.pyx Cython kernel into a Python
extension module. Run build.sh from this directory.
"""

from setuptools import setup
from Cython.Build import cythonize

setup(ext_modules=cythonize("_scatter.pyx"))
