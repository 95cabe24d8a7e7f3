"""Deterministic simulator of a speculative out-of-order core, with
bounds-check-bypass and branch-target-injection attacks, cache covert
channels and mitigations."""
from .attacks import AttackReport, ScenarioConfig, run_scenario, sweep_speculation_window
from .isa import Program, assemble, disassemble
from .mitigations import MitigationOptions, insert_fences
from .pipeline import SimConfig, interpret_in_order, run

__version__ = "0.1.0"

__all__ = ["AttackReport", "MitigationOptions", "Program", "ScenarioConfig", "SimConfig",
           "assemble", "disassemble", "insert_fences", "interpret_in_order", "run",
           "run_scenario", "sweep_speculation_window"]
