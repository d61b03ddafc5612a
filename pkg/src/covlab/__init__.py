"""Covering-property laboratory for metric spaces."""

from .metrics import *  # noqa: F401,F403
