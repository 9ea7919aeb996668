"""Harness for generating, repairing, and runtime-optimizing candidate programs.

The package wires an LLM backend, a sandboxed test executor, and a trimmed-mean
runtime profiler into a batch pipeline that reports %Opt / %Correct / Speedup
over a benchmark corpus.
"""

__version__ = "0.1.0"
