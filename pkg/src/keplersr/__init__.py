"""Physics-biased symbolic regression for planetary orbit equations."""

__version__ = "0.1.0"
