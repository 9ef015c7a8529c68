"""Cox regression for left-, right- and doubly truncated survival data."""

__version__ = "0.1.0"
