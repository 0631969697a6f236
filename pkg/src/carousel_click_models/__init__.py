"""Click models for carousel interfaces: cascade (CM, TCM, CCM) and
position-based (CPBM, RCPBM, OEPBM) variants with MLE, EM and gradient
ascent fitting, likelihood evaluation and a ground-truth simulator."""
from .core import (
    EPS,
    REFERENCE_LAYOUT,
    CarouselLayout,
    Dataset,
    InteractionRecord,
    ItemAttraction,
    PositionGrid,
    RowCol,
    Termination,
    clip,
)
from .data import AttractionInit, ExaminationInit, SplitSpec, load_interactions, prepare, split_dataset
from .likelihoods import click_log_likelihood, dummy_baseline, evaluate, observed_examination_log_likelihood
from .models import ClickModel, ModelKind, click_prob
from .optimizers import Algorithm, FitConfig, fit
from .simulator import GroundTruth, random_ground_truth, recovery_report, simulate

__version__ = "0.1.0"

__all__ = [
    "EPS", "REFERENCE_LAYOUT", "CarouselLayout", "Dataset", "InteractionRecord", "ItemAttraction",
    "PositionGrid", "RowCol", "Termination", "clip", "AttractionInit", "ExaminationInit", "SplitSpec",
    "load_interactions", "prepare", "split_dataset", "click_log_likelihood", "dummy_baseline",
    "evaluate", "observed_examination_log_likelihood", "ClickModel", "ModelKind", "click_prob",
    "Algorithm", "FitConfig", "fit", "GroundTruth", "random_ground_truth", "recovery_report", "simulate",
]
