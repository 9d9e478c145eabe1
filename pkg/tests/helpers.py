"""Shared builders for the tests."""

from __future__ import annotations

import numpy as np

from lobe_moe import ensemble as ens
from lobe_moe.core_data import Cohort, ScanRecord


def fake_cohort(n_patients: int, rng: np.random.Generator, scans_max: int = 3) -> Cohort:
    """Manifest-only cohort (no files) for split tests."""
    records = []
    for p in range(n_patients):
        label = int(rng.random() < 0.5)
        for s in range(int(rng.integers(1, scans_max + 1))):
            records.append(ScanRecord(f"P{p:03d}", f"P{p:03d}_S{s}", label, "v", "m"))
    return Cohort(tuple(records), root=".")


def stage4_data(table, split):
    """Standardized (train, val, test) MoE inputs for one fold."""
    def data(patients):
        rows = table.rows_for(patients)
        return ens.MoEData(table.global_descriptors[rows], table.descriptors[rows],
                           table.labels[rows].astype(float))
    tr, va, te = data(split.train), data(split.val), data(split.test)
    std = ens.MoEStandardizer.fit(tr)
    return std(tr), std(va), std(te)


# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE: list[str] = []
