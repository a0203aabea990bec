"""ICD-9-CM to SNOMED CT resolution over UMLS-style crosswalk releases.

Two tab-delimited map files share one structure: the one-to-one file holds
a single row per ICD code, the one-to-many file repeats the ICD code once
per candidate concept. Resolution precedence: one-to-one, then
one-to-many, then the ICD dictionary description (NoMap), else NoDesc.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import clean_text

logger = logging.getLogger(__name__)

ONE_TO_ONE = "one_to_one"
ONE_TO_MANY = "one_to_many"
NO_MAP = "no_map"
NO_DESC = "no_desc"

CATEGORIES = (ONE_TO_ONE, ONE_TO_MANY, NO_MAP, NO_DESC)

# console/report names, matching the crosswalk evaluation convention
DISPLAY_NAMES = {
    ONE_TO_ONE: "1-to-1",
    ONE_TO_MANY: "1-to-M",
    NO_MAP: "No Map",
    NO_DESC: "No DESC",
}

REQUIRED_COLUMNS = ("ICD_CODE", "ICD_NAME", "SNOMED_CID", "SNOMED_FSN")


class SnomedError(ValueError):
    pass


@dataclass
class MapEntry:
    icd_code: str
    icd_name: str
    snomed_cid: str
    snomed_fsn: str

    def __post_init__(self):
        if not self.icd_code or not self.snomed_cid:
            raise SnomedError("map entry needs an ICD code and a SNOMED cid")


@dataclass
class SnomedResolution:
    icd_code: str
    category: str
    candidates: list[MapEntry] = field(default_factory=list)
    fallback_description: str | None = None

    def __post_init__(self):
        n = len(self.candidates)
        ok = (
            (self.category == ONE_TO_ONE and n == 1)
            or (self.category == ONE_TO_MANY and n >= 2)
            or (self.category == NO_MAP and n == 0 and self.fallback_description)
            or (self.category == NO_DESC and n == 0 and not self.fallback_description)
        )
        if not ok:
            raise SnomedError(
                f"{self.icd_code}: category {self.category} inconsistent with "
                f"{n} candidates / description={self.fallback_description!r}"
            )


@dataclass
class MappingStats:
    counts: dict[str, int]
    percentages: dict[str, float]
    useful_rate: float
    total: int

    def to_table(self) -> str:
        head = "  ".join(f"{DISPLAY_NAMES[c]:>8}" for c in CATEGORIES)
        row_n = "  ".join(f"{self.counts[c]:>8}" for c in CATEGORIES)
        row_p = "  ".join(f"{self.percentages[c]:>7.2f}%" for c in CATEGORIES)
        return (f"{head}\n{row_n}\n{row_p}\n"
                f"useful responses: {self.useful_rate * 100:.2f}%")


def parse_map_file(path: str | Path, kind: str) -> dict[str, list[MapEntry]]:
    """Load one crosswalk TSV; columns beyond the required four are ignored."""
    if kind not in (ONE_TO_ONE, ONE_TO_MANY):
        raise SnomedError(f"kind must be one_to_one or one_to_many, got {kind}")
    table: dict[str, list[MapEntry]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f, delimiter="\t")
        header = reader.fieldnames or []
        for column in REQUIRED_COLUMNS:
            if column not in header:
                raise SnomedError(f"{path}: missing required column {column}")
        for row in reader:
            entry = MapEntry(
                icd_code=row["ICD_CODE"].strip(),
                icd_name=row["ICD_NAME"].strip(),
                snomed_cid=row["SNOMED_CID"].strip(),
                snomed_fsn=row["SNOMED_FSN"].strip(),
            )
            if kind == ONE_TO_ONE and entry.icd_code in table:
                raise SnomedError(
                    f"{path}: duplicate ICD code {entry.icd_code} in a "
                    "one-to-one map"
                )
            table.setdefault(entry.icd_code, []).append(entry)
    return table


def load_icd_dictionary(path: str | Path) -> dict[str, str]:
    """D_ICD_* CSV -> code to description (LONG_TITLE preferred)."""
    out: dict[str, str] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        if "ICD9_CODE" not in header:
            raise SnomedError(f"{path}: missing required column ICD9_CODE")
        for row in reader:
            desc = (row.get("LONG_TITLE") or "").strip() or (row.get("SHORT_TITLE") or "").strip()
            if desc:
                out[row["ICD9_CODE"].strip()] = desc
    return out


def order_parent_first(candidates: list[MapEntry]) -> list[MapEntry]:
    """Surface the least specific candidate: one whose FSN tokens are a
    subset of every other candidate's tokens. Approximate by construction;
    file order is kept otherwise."""
    tokens = [set(clean_text(c.snomed_fsn).split()) for c in candidates]

    def parent_like(i: int) -> bool:
        return all(tokens[i] <= tokens[j] for j in range(len(candidates)) if j != i)

    order = sorted(range(len(candidates)), key=lambda i: (not parent_like(i), i))
    return [candidates[i] for i in order]


def resolve(
    icd_code: str,
    one_to_one: dict[str, list[MapEntry]],
    one_to_many: dict[str, list[MapEntry]],
    icd_dictionaries: list[dict[str, str]],
    parent_first: bool = False,
) -> SnomedResolution:
    """Strict-precedence resolution of one ICD code."""
    direct = one_to_one.get(icd_code)
    if direct:
        if icd_code in one_to_many:
            logger.warning("ICD %s present in both map files; using the "
                           "one-to-one entry", icd_code)
        return SnomedResolution(icd_code=icd_code, category=ONE_TO_ONE,
                                candidates=list(direct))
    multi = one_to_many.get(icd_code)
    if multi:
        if len(multi) == 1:
            # a one-row group in the one-to-many file is still a single map
            return SnomedResolution(icd_code=icd_code, category=ONE_TO_ONE,
                                    candidates=list(multi))
        ordered = order_parent_first(multi) if parent_first else list(multi)
        return SnomedResolution(icd_code=icd_code, category=ONE_TO_MANY,
                                candidates=ordered)
    for dictionary in icd_dictionaries:
        description = dictionary.get(icd_code)
        if description:
            return SnomedResolution(icd_code=icd_code, category=NO_MAP,
                                    fallback_description=description)
    return SnomedResolution(icd_code=icd_code, category=NO_DESC)


def mapping_stats(resolutions: list[SnomedResolution]) -> MappingStats:
    if not resolutions:
        raise SnomedError("need at least one resolution")
    counts = {c: 0 for c in CATEGORIES}
    for r in resolutions:
        counts[r.category] += 1
    total = len(resolutions)
    percentages = {c: 100.0 * counts[c] / total for c in CATEGORIES}
    useful = (total - counts[NO_DESC]) / total
    return MappingStats(counts=counts, percentages=percentages,
                        useful_rate=useful, total=total)


def format_resolution(resolution: SnomedResolution, probability: float | None = None) -> str:
    """One console line per code, in the shape the review output uses."""
    prefix = resolution.icd_code
    if probability is not None:
        prefix += f" ({probability:.3f})"
    tag = DISPLAY_NAMES[resolution.category]
    if resolution.category == ONE_TO_ONE:
        c = resolution.candidates[0]
        return f"{prefix} -> {tag}: {c.snomed_cid} {c.snomed_fsn}"
    if resolution.category == ONE_TO_MANY:
        options = "; ".join(f"{c.snomed_cid} {c.snomed_fsn}"
                            for c in resolution.candidates)
        return f"{prefix} -> {tag}: {options}"
    if resolution.category == NO_MAP:
        return f"{prefix} -> {tag}: {resolution.fallback_description}"
    return f"{prefix} -> {tag}: no mapping and no description found"
