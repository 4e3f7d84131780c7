"""Lens prescription files: a small JSON schema that maps one-to-one
onto :class:`~lensmc.core.LensSystem`.

Schema::

    {
      "name": "example",
      "focal_length_mm": 50.0,
      "sensor_format": "full-frame",
      "target_z_mm": 500.0,
      "elements": ["singlet", "doublet", ...],
      "surfaces": [[curvature, extent, gap, index_after], ...]
    }

Serialization uses ``repr``-style floats, so parse/serialize round-trips
are bit-exact for any finite value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .core import ElementKind, LensInvariantError, LensSystem, SurfaceSpec

_KIND_NAMES = {"singlet": ElementKind.SINGLET,
               "doublet": ElementKind.CEMENTED_DOUBLET}
_NAMES_KIND = {v: k for k, v in _KIND_NAMES.items()}


class PrescriptionError(ValueError):
    """Parse or validation failure, located as precisely as possible."""

    def __init__(self, message, line=None, column=None, field=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        if field is not None:
            loc.append(f"field {field}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)
        self.line = line
        self.column = column
        self.field = field


@dataclass(frozen=True)
class PrescriptionMeta:
    name: str = ""
    focal_length_mm: float | None = None
    sensor_format: str = "full-frame"


def parse_prescription(text: str):
    """Parse a prescription document; returns (LensSystem, meta).

    Raises PrescriptionError with a location on malformed input.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PrescriptionError(f"invalid JSON: {exc.msg}",
                                line=exc.lineno, column=exc.colno) from exc
    if not isinstance(doc, dict):
        raise PrescriptionError("top level must be an object")

    for key in ("elements", "surfaces"):
        if key not in doc:
            raise PrescriptionError("missing required key", field=key)

    elements = []
    for i, tag in enumerate(doc["elements"]):
        if tag not in _KIND_NAMES:
            raise PrescriptionError(f"unknown element kind {tag!r}",
                                    field=f"elements[{i}]")
        elements.append(_KIND_NAMES[tag])

    surfaces = []
    for i, row in enumerate(doc["surfaces"]):
        if not isinstance(row, (list, tuple)) or len(row) != 4:
            raise PrescriptionError(
                "surface row must be [curvature, extent, gap, index_after]",
                field=f"surfaces[{i}]")
        try:
            values = [float(v) for v in row]
        except (TypeError, ValueError):
            raise PrescriptionError("non-numeric surface entry",
                                    field=f"surfaces[{i}]") from None
        try:
            surfaces.append(SurfaceSpec(*values))
        except LensInvariantError as exc:
            raise PrescriptionError(str(exc), field=f"surfaces[{i}]") from exc

    target_z = float(doc.get("target_z_mm", 500.0))
    try:
        lens = LensSystem(tuple(surfaces), tuple(elements), target_z)
    except LensInvariantError as exc:
        field = (f"surfaces[{exc.surface}]" if exc.surface is not None
                 else "surfaces")
        raise PrescriptionError(str(exc), field=field) from exc

    meta = PrescriptionMeta(
        name=str(doc.get("name", "")),
        focal_length_mm=(float(doc["focal_length_mm"])
                         if "focal_length_mm" in doc else None),
        sensor_format=str(doc.get("sensor_format", "full-frame")))
    return lens, meta


def serialize_prescription(lens: LensSystem,
                           meta: PrescriptionMeta | None = None) -> str:
    """Canonical document for a lens; parse(serialize(x)) == x bit-exactly."""
    meta = meta or PrescriptionMeta()
    doc = {
        "name": meta.name,
        "sensor_format": meta.sensor_format,
        "target_z_mm": lens.target_z,
        "elements": [_NAMES_KIND[k] for k in lens.elements],
        "surfaces": [[s.curvature, s.extent, s.gap, s.index_after]
                     for s in lens.surfaces],
    }
    if meta.focal_length_mm is not None:
        doc["focal_length_mm"] = meta.focal_length_mm
    return json.dumps(doc, indent=2) + "\n"


def load_prescription(path):
    with open(path, encoding="utf-8") as fh:
        return parse_prescription(fh.read())


def save_prescription(path, lens: LensSystem,
                      meta: PrescriptionMeta | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_prescription(lens, meta))
