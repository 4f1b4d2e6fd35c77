"""Simulators for superconducting optoelectronic networks.

Modules
-------
core      domain types, source-function tables, interpolation, file I/O
oracle    SQUID circuit integration and source-function generation
engine    phenomenological forward-Euler network integrator
spiking   reference model with somas, refractory feedback and synapses
analysis  chi-squared, steady states, energy, comparison experiments
cli       configuration parsing and the ``soen`` command
"""

import os

# numba fixes its thread pool size at import; allow SOEN_WORKERS above the core count
if "NUMBA_NUM_THREADS" not in os.environ and os.environ.get("SOEN_WORKERS", "").isdigit():
    os.environ["NUMBA_NUM_THREADS"] = str(max(int(os.environ["SOEN_WORKERS"]), os.cpu_count() or 1))

# the bundled TBB is too old for numba; the portable pool is deterministic anyway
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
