"""Offline Galerkin policy iteration with an online CBF-QP safety layer."""

from hjbsafe.cbf import IntegratorBox, GenericR1, HocbfR2, pointing_barrier
from hjbsafe.controller import GhjbCbfController
from hjbsafe.dynamics import ControlAffineModel, hovercraft_model, spacecraft_model
from hjbsafe.polyalgebra import Basis, Polynomial, generate_even_basis
from hjbsafe.qpsolver import QuadraticProgram, solve_active_set
from hjbsafe.sga import PolynomialPolicy, ValueFunction, policy_iteration
from hjbsafe.sim import SimulationConfig, accumulate_cost, constraint_audit, simulate

__version__ = "0.1.0"

__all__ = [
    "Basis",
    "ControlAffineModel",
    "GenericR1",
    "GhjbCbfController",
    "HocbfR2",
    "IntegratorBox",
    "Polynomial",
    "PolynomialPolicy",
    "QuadraticProgram",
    "SimulationConfig",
    "ValueFunction",
    "accumulate_cost",
    "constraint_audit",
    "generate_even_basis",
    "hovercraft_model",
    "pointing_barrier",
    "policy_iteration",
    "simulate",
    "solve_active_set",
    "spacecraft_model",
]
