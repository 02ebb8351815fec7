from dataclasses import dataclass
from typing import Any, Callable

from src.config import POLYGON_POINTS
from src.errors import PreconditionError, SchemaError
from src.representations import (
    mask_to_bounding_box,
    mask_to_ellipse,
    mask_to_oriented_box,
    mask_to_polar_polygon,
)
from src.schemas import (
    BoundingBox,
    Ellipse,
    InstanceMask,
    OrientedBox,
    PolarPolygon,
    Representation,
    Shape,
)


@dataclass(frozen=True)
class RepresentationKind:
    """
    One detector output geometry and everything needed to handle it by name.

    Attributes
    ----------
    name : str
        CLI name and JSON ``type`` tag.
    column : str
        Table column label.
    rep_type : type
        Concrete representation class.
    convert : callable
        ``convert(mask, points) -> Representation``; ``points`` is only used
        by polar polygons.
    encode : callable
        Representation to its JSON field dict (without the ``type`` tag).
    decode : callable
        JSON field dict back to a representation.
    """

    name: str
    column: str
    rep_type: type
    convert: Callable[[InstanceMask, int | None], Representation]
    encode: Callable[[Any], dict]
    decode: Callable[[dict], Representation]


def create_box_kind() -> RepresentationKind:
    """Create the axis-aligned bounding box kind."""
    return RepresentationKind(
        name="box",
        column="BoundingBox",
        rep_type=BoundingBox,
        convert=lambda mask, points: mask_to_bounding_box(mask),
        encode=lambda r: {"cx": r.cx, "cy": r.cy, "w": r.w, "h": r.h},
        decode=lambda d: BoundingBox(d["cx"], d["cy"], d["w"], d["h"]),
    )


def create_oriented_box_kind() -> RepresentationKind:
    """Create the oriented (rotated) box kind."""
    return RepresentationKind(
        name="obox",
        column="RotatedBox",
        rep_type=OrientedBox,
        convert=lambda mask, points: mask_to_oriented_box(mask),
        encode=lambda r: {"cx": r.cx, "cy": r.cy, "w": r.w, "h": r.h, "theta": r.theta},
        decode=lambda d: OrientedBox(d["cx"], d["cy"], d["w"], d["h"], d["theta"]),
    )


def create_ellipse_kind() -> RepresentationKind:
    """Create the ellipse kind."""
    return RepresentationKind(
        name="ellipse",
        column="Ellipse",
        rep_type=Ellipse,
        convert=lambda mask, points: mask_to_ellipse(mask),
        encode=lambda r: {
            "cx": r.cx,
            "cy": r.cy,
            "semiMajor": r.semi_major,
            "semiMinor": r.semi_minor,
            "theta": r.theta,
        },
        decode=lambda d: Ellipse(
            d["cx"], d["cy"], d["semiMajor"], d["semiMinor"], d["theta"]
        ),
    )


def _convert_polygon(mask: InstanceMask, points: int | None) -> PolarPolygon:
    if points is None:
        raise PreconditionError("Polygon conversion needs a point count R")
    return mask_to_polar_polygon(mask, points)


def create_polygon_kind() -> RepresentationKind:
    """Create the dense polar polygon kind."""
    return RepresentationKind(
        name="polygon",
        column="P",
        rep_type=PolarPolygon,
        convert=_convert_polygon,
        encode=lambda r: {"cx": r.cx, "cy": r.cy, "radii": list(r.radii)},
        decode=lambda d: PolarPolygon(d["cx"], d["cy"], tuple(d["radii"])),
    )


REPRESENTATION_REGISTRY: dict[str, RepresentationKind] = {
    "box": create_box_kind(),
    "obox": create_oriented_box_kind(),
    "ellipse": create_ellipse_kind(),
    "polygon": create_polygon_kind(),
}

# Instance masks take part in occupancy studies as the reference geometry.
MASK_KIND_NAME = "mask"


def get_kind(name: str) -> RepresentationKind:
    kind = REPRESENTATION_REGISTRY.get(name)
    if kind is None:
        raise PreconditionError(
            f"Unknown representation: {name} (expected one of "
            f"{', '.join(REPRESENTATION_REGISTRY)})"
        )
    return kind


def kind_of(rep: Representation) -> RepresentationKind:
    for kind in REPRESENTATION_REGISTRY.values():
        if isinstance(rep, kind.rep_type):
            return kind
    raise PreconditionError(f"Not a representation: {type(rep).__name__}")


def kind_name_of(shape: Shape) -> str:
    return MASK_KIND_NAME if isinstance(shape, InstanceMask) else kind_of(shape).name


def representation_to_dict(rep: Representation) -> dict:
    kind = kind_of(rep)
    return {"type": kind.name, **kind.encode(rep)}


def representation_from_dict(data: dict, path: str = "rep") -> Representation:
    if not isinstance(data, dict) or "type" not in data:
        raise SchemaError(path, "representation must be an object with a 'type'")
    kind = REPRESENTATION_REGISTRY.get(data["type"])
    if kind is None:
        raise SchemaError(f"{path}.type", f"unknown representation {data['type']!r}")
    try:
        return kind.decode(data)
    except KeyError as exc:
        raise SchemaError(f"{path}.{exc.args[0]}", "missing field") from exc
    except (TypeError, ValueError) as exc:
        raise SchemaError(path, str(exc)) from exc


@dataclass(frozen=True)
class RepresentationSpec:
    """A kind plus its point count, e.g. ``polygon`` at R = 24."""

    kind: str
    points: int | None = None

    def __post_init__(self):
        get_kind(self.kind)
        if self.kind == "polygon" and (self.points is None or self.points < 3):
            raise PreconditionError(f"Polygon spec needs R >= 3, got {self.points}")

    @property
    def column(self) -> str:
        kind = get_kind(self.kind)
        return f"{kind.column}{self.points}" if self.kind == "polygon" else kind.column

    def convert(self, mask: InstanceMask) -> Representation:
        return get_kind(self.kind).convert(mask, self.points)

    @classmethod
    def parse(cls, text: str) -> "RepresentationSpec":
        """Parse ``box``, ``obox``, ``ellipse``, ``polygon:24`` or ``P24``."""
        text = text.strip()
        if text.upper().startswith("P") and text[1:].isdigit():
            return cls("polygon", int(text[1:]))
        name, _, points = text.partition(":")
        return cls(name, int(points) if points else None)


def table_specs(points: tuple[int, ...] = POLYGON_POINTS) -> list[RepresentationSpec]:
    """Box, rotated box and one polygon column per R, in table order."""
    return [RepresentationSpec("box"), RepresentationSpec("obox")] + [
        RepresentationSpec("polygon", r) for r in points
    ]
