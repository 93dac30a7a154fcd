"""Reference fin/material measurements shipped with the package (documentation data only)."""
from __future__ import annotations

import csv
from importlib import resources

MATERIALS_HEADER = ("material_width_mm", "fin_design", "mean_generated_force", "swim_ability")


def material_table() -> list[dict]:
    """Rows of the fin material study, values kept as the original strings."""
    with resources.files("finthrust").joinpath("data/materials.csv").open(newline="") as fh:
        return list(csv.DictReader(fh))
