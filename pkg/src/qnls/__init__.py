"""Numerical laboratory for the quasilinear Schrödinger equation with a Hartree term."""
__version__ = "0.1.0"

from .model import (BoxTooSmall, DegenerateExponent, ExponentReport, FieldState, GaussianPotential,
                    GaussianRecipe, GridSpec, InsufficientData, Model, NoPotential,
                    NonlinearitySpec, PowerLawPotential, RingRecipe, TablePotential,
                    UnsupportedDimension, check_C1, check_C2, critical_mass, exponents,
                    make_initial_data)
from .spectral import RadialWorkspace, SpectralWorkspace, direct_convolution_oracle, make_workspace
from .dynamics import IntegratorConfig, RunOutcome, evolve, rhs, step
from .functionals import DiagnosticsRecord, DIEstimate, workspace_for
