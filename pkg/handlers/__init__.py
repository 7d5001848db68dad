"""
Handlers Package
Command-line configuration and the experiment commands it dispatches to
"""

from . import commands
from . import config

__all__ = ['commands', 'config']
