"""Behaviour trees with multimodal fused conditions for lab-task automation."""

__version__ = "0.1.0"
