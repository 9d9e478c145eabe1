"""Registry of feature names; the only place the column order is defined."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import first_order, shape, texture

SCHEMA_ID = "lobe-radiomics-v1"

FAMILIES = (
    ("firstorder", first_order.NAMES),
    ("shape", shape.NAMES),
    ("glcm", texture.GLCM_NAMES),
    ("glrlm", texture.GLRLM_NAMES),
    ("glszm", texture.GLSZM_NAMES),
    ("gldm", texture.GLDM_NAMES),
    ("ngtdm", texture.NGTDM_NAMES),
)
FEATURE_NAMES: tuple[str, ...] = tuple(n for _, names in FAMILIES for n in names)


def schema_lines() -> list[str]:
    return [f"# {SCHEMA_ID} {len(FEATURE_NAMES)}", *FEATURE_NAMES]


def dump_schema(path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(schema_lines()) + "\n")


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_id: str = SCHEMA_ID

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite feature value")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def names(self) -> tuple[str, ...]:
        return FEATURE_NAMES

    def items(self):
        return zip(FEATURE_NAMES, self.values.tolist())

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    @classmethod
    def from_mapping(cls, mapping: dict[str, float]) -> "FeatureVector":
        return cls(np.array([mapping[n] for n in FEATURE_NAMES]))
