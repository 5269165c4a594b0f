"""Render-free rearrangement task generation and agent benchmarking."""

__version__ = "0.1.0"
TOOL_NAME = "rearrangekit"
