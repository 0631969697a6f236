"""Click log-likelihood, observed-examination log-likelihood (OELL) and the
"1% click" dummy baseline, reported per session."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .models import ClickModel

LOG_FLOOR = 1e-12
"""Smallest argument passed to log; hitting it marks the report as clamped."""

CLICK = "click"
OELL = "oell"


class OELLUndefinedError(ValueError):
    """Cascade models have no per-position examination to score against gaze."""


@dataclass(frozen=True)
class LikelihoodReport:
    kind: str
    total: float
    record_count: int
    session_count: int
    clamped: bool = False

    @property
    def per_session_normalized(self) -> float:
        return self.total / self.session_count if self.session_count else math.nan

    @property
    def per_record(self) -> float:
        return self.total / self.record_count if self.record_count else math.nan

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "total": self.total,
            "per_session_normalized": self.per_session_normalized,
            "record_count": self.record_count,
            "session_count": self.session_count,
            "clamped": self.clamped,
        }


def _safe_log(x: np.ndarray) -> tuple[np.ndarray, bool]:
    clamped = bool((x < LOG_FLOOR).any())
    return np.log(np.maximum(x, LOG_FLOOR)), clamped


def _report(kind: str, terms: np.ndarray, dataset: Dataset, clamped: bool) -> LikelihoodReport:
    # fsum keeps the total independent of summation order
    return LikelihoodReport(kind, math.fsum(terms.tolist()), len(dataset), dataset.n_sessions, clamped)


def click_terms(click: np.ndarray, p_click: np.ndarray) -> tuple[np.ndarray, bool]:
    c = click.astype(float)
    log_p, clamp_a = _safe_log(np.where(c == 1, p_click, 1.0))
    log_q, clamp_b = _safe_log(np.where(c == 1, 1.0, 1.0 - p_click))
    return c * log_p + (1 - c) * log_q, clamp_a or clamp_b


def oell_terms(click: np.ndarray, examined: np.ndarray, w: np.ndarray,
               theta: np.ndarray) -> tuple[np.ndarray, bool]:
    c = click.astype(float)
    e = examined.astype(float)
    clicked = c == 1
    seen = (c == 0) & (e == 1)
    unseen = (c == 0) & (e == 0)
    arg = np.ones_like(w)
    arg[clicked] = (w * theta)[clicked]
    arg[seen] = (w * (1.0 - theta))[seen]
    arg[unseen] = (1.0 - w)[unseen]
    return _safe_log(arg)


def click_log_likelihood(dataset: Dataset, model: ClickModel) -> LikelihoodReport:
    p = model.click_per_record(dataset)
    terms, clamped = click_terms(dataset.click, p)
    return _report(CLICK, terms, dataset, clamped)


def observed_examination_log_likelihood(dataset: Dataset, model: ClickModel) -> LikelihoodReport:
    if model.kind.is_cascade:
        raise OELLUndefinedError(
            f"OELL is undefined for cascade model {model.kind.value}: its examination "
            "probabilities collapse towards zero"
        )
    w = model.examination_per_record(dataset)
    theta = model.attraction_per_record(dataset)
    terms, clamped = oell_terms(dataset.click, dataset.examined, w, theta)
    return _report(OELL, terms, dataset, clamped)


def dummy_baseline(dataset: Dataset) -> tuple[LikelihoodReport, LikelihoodReport]:
    """Score the constant model giving every record a 1% click chance.

    For the OELL the constant model puts 1% on click, 1% on seen-but-not-clicked
    and 98% on not examined.
    """
    if not len(dataset):
        raise ValueError("dummy baseline needs a non-empty dataset")
    c = dataset.click.astype(float)
    e = dataset.examined.astype(float)
    click_ll = c * math.log(0.01) + (1 - c) * math.log(0.99)
    oell = c * math.log(0.01) + (1 - c) * e * math.log(0.01) + (1 - c) * (1 - e) * math.log(0.98)
    return _report(CLICK, click_ll, dataset, False), _report(OELL, oell, dataset, False)


def evaluate(dataset: Dataset, model: ClickModel) -> dict[str, LikelihoodReport]:
    """Both likelihoods where defined; cascade models get only the click one."""
    out = {CLICK: click_log_likelihood(dataset, model)}
    if not model.kind.is_cascade:
        out[OELL] = observed_examination_log_likelihood(dataset, model)
    return out
