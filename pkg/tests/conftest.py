import numpy as np
import pytest

from carousel_click_models.core import CarouselLayout, Dataset

SMALL = CarouselLayout(rows=3, cols=4, visible_set_size=2, swipe_sets=2)


def random_dataset(rng, n_records=50, layout=SMALL, n_items=6, per_session=5,
                   p_exam=0.6, p_click=0.4, impressed=None):
    """Random records with distinct cells per session and click => examined."""
    n_sessions = -(-n_records // per_session)
    rows = []
    for s in range(n_sessions):
        cells = rng.choice(layout.n_cells, size=per_session, replace=False)
        for k in cells:
            e = int(rng.random() < p_exam)
            c = int(e and rng.random() < p_click)
            m = 1 if impressed is None or c else int(rng.random() < impressed)
            rows.append((f"s{s:03d}", f"u{rng.integers(n_items)}", int(k) // layout.cols + 1,
                         int(k) % layout.cols + 1, c, e, m))
    return Dataset.from_records(rows[:n_records], layout)


@pytest.fixture
def small_layout():
    return SMALL


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
