"""Capacity planning for prefill/decoding-disaggregated LLM serving."""

__version__ = "0.1.0"
