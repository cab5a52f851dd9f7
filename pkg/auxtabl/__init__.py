import os

try:
    from auxtabl.version import version as __version__
except ImportError:
    __version__ = 'unknown'

basedir = os.path.abspath(os.path.dirname(__file__))
