"""Compound lens design by joint continuous-discrete optimization."""

from .baselines import MHConfig, brute_force_search, rjmh_run_lens
from .core import (BlockReason, ElementKind, LensInvariantError, LensSystem,
                   Ray, SurfaceSpec, TraceOutcome, from_vector, to_vector)
from .loss import LossBreakdown, LossWeights, grad_total_loss, total_loss
from .mutate import MutationKind, MutationTag, applicable_mutations, mutate_lens
from .paraxial import (paraxial_equal, paraxial_project, paraxial_state,
                       system_matrix)
from .prescription import (PrescriptionError, PrescriptionMeta,
                           load_prescription, parse_prescription,
                           save_prescription, serialize_prescription)
from .presets import preset
from .render import render_svg
from .restore import GlobalBounds, RestoreConfig, lens_problem, run
from .trace import sample_cone, trace, trace_batch

__all__ = [
    "BlockReason", "ElementKind", "GlobalBounds", "LensInvariantError",
    "LensSystem", "LossBreakdown", "LossWeights", "MHConfig", "MutationKind",
    "MutationTag", "PrescriptionError", "PrescriptionMeta", "Ray",
    "RestoreConfig", "SurfaceSpec", "TraceOutcome", "applicable_mutations",
    "brute_force_search", "from_vector", "grad_total_loss", "lens_problem",
    "load_prescription", "mutate_lens", "paraxial_equal", "paraxial_project",
    "paraxial_state", "parse_prescription", "preset", "render_svg",
    "rjmh_run_lens", "run", "sample_cone", "save_prescription",
    "serialize_prescription", "system_matrix", "to_vector", "total_loss",
    "trace", "trace_batch",
]

__version__ = "0.1.0"
