"""Mixture-of-PDEs inference for spatiotemporal image sequences."""

from .pde import (PdeParams, ReactionKind, Trajectory, SensitivityBundle,
                  StepFailure, NonFinite, integrate,
                  integrate_with_sensitivities, laplacian_neumann,
                  reaction_term, rhs)
from .variational import (ComponentSpec, FitDiverged, PriorSpec,
                          VariationalState, elbo, gaussian_nll,
                          kl_categorical_uniform, kl_normal,
                          mixture_recon_loss, sample_reparameterized)
from .datagen import Dataset, GenConfig, SampleRecord, generate_dataset
from .dataio import read_dataset, write_dataset
from .engine import (FitConfig, FitReport, assign_component, degeneracy_probe,
                     evaluate_assignments, fit_many, fit_sample,
                     model_evidence, predict)

__version__ = "0.1.0"
