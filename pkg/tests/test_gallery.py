from __future__ import annotations

import time

import pytest

from taps.gallery import GalleryError, list_gallery, run_gallery

ENTRIES = {e.id: e for e in list_gallery()}


def test_gallery_lists_every_experiment():
    assert set(ENTRIES) == {"magnetostatics", "elasticity", "nonlinear_reaction", "heat", "heterogeneous_diffusivity"}
    for e in ENTRIES.values():
        assert e.description and e.kind in {"study", "parametric"}


@pytest.mark.parametrize("entry_id", sorted(ENTRIES))
def test_gallery_entry_meets_expectations(entry_id):
    t0 = time.perf_counter()
    outcome = run_gallery(entry_id)
    assert outcome.passed and outcome.converged
    assert time.perf_counter() - t0 < 300


def test_unknown_entry():
    with pytest.raises(KeyError):
        run_gallery("no_such_entry")


def test_failed_expectation_raises():
    entry = ENTRIES["heat"]
    data = {**entry.data, "config": {**entry.data["config"], "study": {"levels": [4, 8],
                                                                      "hyperparameters": [{"p": 1}]}},
            "expect": {"rate_tolerance": 1e-6}}
    with pytest.raises(GalleryError, match="rate"):
        run_gallery(type(entry)(entry.id, entry.description, entry.kind, data))
