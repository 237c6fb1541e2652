"""Worst-case subset selection from pre-generated augmentation pools."""

__version__ = "0.1.0"
