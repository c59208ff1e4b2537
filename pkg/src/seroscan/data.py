"""Built-in study datasets, dataset combination, and file ingestion."""

from __future__ import annotations

import json

from .model import Dataset, PositiveCounts, StudyDesign

# The la-county and new-york entries reuse the santa-clara calibration arms:
# the published analyses assume the same test characteristics for all three
# studies. The notes record that assumption next to the data.
_CALIBRATION_NOTE = (
    "calibration arms (401 negatives with 2 positive, 197 positives with 178 "
    "positive) are shared with santa-clara; the source analysis assumes the "
    "same test for all studies"
)

_BUILTINS = {
    "santa-clara": Dataset(
        label="santa-clara",
        design=StudyDesign(n_cal_neg=401, n_cal_pos=197, n_main=3330),
        observed=PositiveCounts(s_cal_neg=2, s_cal_pos=178, s_main=50),
        notes="serology survey with its own validation study",
    ),
    "la-county": Dataset(
        label="la-county",
        design=StudyDesign(n_cal_neg=401, n_cal_pos=197, n_main=846),
        observed=PositiveCounts(s_cal_neg=2, s_cal_pos=178, s_main=35),
        notes=_CALIBRATION_NOTE,
    ),
    "new-york": Dataset(
        label="new-york",
        design=StudyDesign(n_cal_neg=401, n_cal_pos=197, n_main=3000),
        observed=PositiveCounts(s_cal_neg=2, s_cal_pos=178, s_main=420),
        notes=_CALIBRATION_NOTE
        + "; the original study's test details were not published",
    ),
}

_REQUIRED_FLAT = (
    "n_cal_neg",
    "s_cal_neg",
    "n_cal_pos",
    "s_cal_pos",
    "n_main",
    "s_main",
)


def builtin_names() -> tuple[str, ...]:
    return tuple(_BUILTINS)


def builtin_dataset(name: str) -> Dataset:
    """Fetch a built-in dataset by identifier."""
    try:
        return _BUILTINS[name]
    except KeyError:
        available = ", ".join(sorted(_BUILTINS))
        raise KeyError(f"unknown dataset {name!r}; available: {available}") from None


def catalog() -> dict[str, Dataset]:
    """All built-in datasets keyed by identifier."""
    return dict(_BUILTINS)


def combine(datasets: list[Dataset], share_calibration: bool) -> Dataset:
    """Merge studies that used the same test.

    Main-study sizes and positives are always summed. With share_calibration
    set, all calibration designs and counts must be identical and are counted
    once; otherwise calibration arms are summed as independent data.
    """
    if len(datasets) < 2:
        raise ValueError("combine needs at least two datasets")
    first = datasets[0]
    n_main = sum(d.design.n_main for d in datasets)
    s_main = sum(d.observed.s_main for d in datasets)
    if share_calibration:
        for d in datasets[1:]:
            same = (
                d.design.n_cal_neg == first.design.n_cal_neg
                and d.design.n_cal_pos == first.design.n_cal_pos
                and d.observed.s_cal_neg == first.observed.s_cal_neg
                and d.observed.s_cal_pos == first.observed.s_cal_pos
            )
            if not same:
                raise ValueError(
                    f"shared calibration requested but {d.label!r} and "
                    f"{first.label!r} have different calibration data"
                )
        n_cal_neg, n_cal_pos = first.design.n_cal_neg, first.design.n_cal_pos
        s_cal_neg, s_cal_pos = first.observed.s_cal_neg, first.observed.s_cal_pos
    else:
        n_cal_neg = sum(d.design.n_cal_neg for d in datasets)
        n_cal_pos = sum(d.design.n_cal_pos for d in datasets)
        s_cal_neg = sum(d.observed.s_cal_neg for d in datasets)
        s_cal_pos = sum(d.observed.s_cal_pos for d in datasets)
    return Dataset(
        label="+".join(d.label for d in datasets),
        design=StudyDesign(n_cal_neg=n_cal_neg, n_cal_pos=n_cal_pos, n_main=n_main),
        observed=PositiveCounts(
            s_cal_neg=s_cal_neg, s_cal_pos=s_cal_pos, s_main=s_main
        ),
        notes="shared calibration arms counted once"
        if share_calibration
        else "calibration arms summed as independent data",
    )


def _require_count(obj: dict, field: str) -> int:
    if field not in obj:
        raise ValueError(f"missing field {field!r}")
    value = obj[field]
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"field {field!r} must be a nonnegative integer")
    return value


def parse_dataset(source: str) -> Dataset:
    """Parse a dataset document (JSON text).

    Two layouts are accepted: a flat object with the six count fields, or a
    structured object with nested "design" and "observed" objects. Both may
    carry "label" and "notes".
    """
    try:
        obj = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ValueError(
            f"malformed dataset document at line {exc.lineno}, column "
            f"{exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(obj, dict):
        raise ValueError("dataset document must be a JSON object")

    label = obj.get("label", "user-dataset")
    notes = obj.get("notes", "")
    if not isinstance(label, str) or not isinstance(notes, str):
        raise ValueError("fields 'label' and 'notes' must be strings")

    if "design" in obj or "observed" in obj:
        design_obj = obj.get("design")
        observed_obj = obj.get("observed")
        if not isinstance(design_obj, dict) or not isinstance(observed_obj, dict):
            raise ValueError("structured form needs 'design' and 'observed' objects")
        design = StudyDesign(
            n_cal_neg=_require_count(design_obj, "n_cal_neg"),
            n_cal_pos=_require_count(design_obj, "n_cal_pos"),
            n_main=_require_count(design_obj, "n_main"),
        )
        observed = PositiveCounts(
            s_cal_neg=_require_count(observed_obj, "s_cal_neg"),
            s_cal_pos=_require_count(observed_obj, "s_cal_pos"),
            s_main=_require_count(observed_obj, "s_main"),
        )
    else:
        fields = {name: _require_count(obj, name) for name in _REQUIRED_FLAT}
        design = StudyDesign(
            n_cal_neg=fields["n_cal_neg"],
            n_cal_pos=fields["n_cal_pos"],
            n_main=fields["n_main"],
        )
        observed = PositiveCounts(
            s_cal_neg=fields["s_cal_neg"],
            s_cal_pos=fields["s_cal_pos"],
            s_main=fields["s_main"],
        )
    # bound violations (e.g. s_main > n_main) surface from the constructor
    # with the offending field named
    return Dataset(label=label, design=design, observed=observed, notes=notes)


def serialize_dataset(dataset: Dataset) -> str:
    """Emit the structured JSON form; parse_dataset round-trips it."""
    obj = {
        "label": dataset.label,
        "design": {
            "n_cal_neg": dataset.design.n_cal_neg,
            "n_cal_pos": dataset.design.n_cal_pos,
            "n_main": dataset.design.n_main,
        },
        "observed": {
            "s_cal_neg": dataset.observed.s_cal_neg,
            "s_cal_pos": dataset.observed.s_cal_pos,
            "s_main": dataset.observed.s_main,
        },
    }
    if dataset.notes:
        obj["notes"] = dataset.notes
    return json.dumps(obj, indent=2) + "\n"
