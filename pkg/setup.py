#!/usr/bin/env python

import os
import sys
from setuptools import setup

# Tests and docs go through tox (tox -e test, tox -e slow, tox -e docbuild).
if {'test', 'build_docs', 'build_sphinx'} & set(sys.argv):
    print("subtok: run 'tox -e test' or 'tox -e docbuild' instead of setup.py commands")
    sys.exit(1)

setup(use_scm_version={'write_to': os.path.join('subtok', 'version.py')})
