# Licensed under a 3-clause BSD style license - see LICENSE.md
#
# Sphinx configuration for the subtok docs. Defaults come from sphinx-astropy;
# project metadata is read from setup.cfg.

import datetime
import os
import sys
from configparser import ConfigParser

try:
    from sphinx_astropy.conf.v1 import *  # noqa
except ImportError:
    print('ERROR: building the subtok docs requires sphinx-astropy')
    sys.exit(1)

sys.path.insert(0, os.path.abspath('../'))

setup_cfg = ConfigParser()
setup_cfg.read([os.path.join(os.path.dirname(__file__), '..', 'setup.cfg')])
metadata = dict(setup_cfg.items('metadata'))

project = metadata['name']
author = metadata['author']
copyright = '{0}, {1}'.format(datetime.datetime.now().year, author)

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx_automodapi.automodapi',
]
numpydoc_show_class_members = False
automodapi_toctreedirnm = 'api'
highlight_language = 'python3'
exclude_patterns += ['_templates', '_build']

intersphinx_mapping.update({
    'scipy': ('https://docs.scipy.org/doc/scipy/', None),
    'matplotlib': ('https://matplotlib.org/stable/', None),
})

import subtok  # noqa: E402

release = getattr(subtok, '__version__', 'dev')
version = release.split('+', 1)[0]

html_theme = 'sphinx_rtd_theme'
html_title = '{0} v{1}'.format(project, release)
htmlhelp_basename = project + 'doc'
