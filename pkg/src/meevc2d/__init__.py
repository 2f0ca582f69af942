"""Mimetic spectral element solver for the 2D incompressible Navier-Stokes
equations in velocity-vorticity-total-pressure form."""
from .mesh import Mesh, MeshConfig, build_mesh, graded_nodes
from .derham import Field, FunctionSpace, build_complex, build_space
from .assembly import QuadConfig, assemble_operators
from .solver import BCConfig, FlowState, MidpointSolver, SolverConfig, run_transient

__all__ = [
    "Mesh", "MeshConfig", "build_mesh", "graded_nodes",
    "Field", "FunctionSpace", "build_complex", "build_space",
    "QuadConfig", "assemble_operators",
    "BCConfig", "FlowState", "MidpointSolver", "SolverConfig", "run_transient",
]
