"""
YOLO-style regression losses for the four detection heads.

Predictions and targets are stored as tensors indexed ``[row, col, anchor]``
(``row`` = g_y, ``col`` = g_x), so every reduction sums row-major then by
anchor index. All sub-losses are sums of independent per-cell terms; the
finite-difference audit relies on that separability.
"""

import math
from dataclasses import dataclass, fields
from typing import Iterator, Sequence

import numpy as np

from src.config import (
    AUDIT_ANCHORS,
    AUDIT_ERROR_FLOOR,
    AUDIT_GRID_SIZE,
    AUDIT_POLYGON_POINTS,
    AUDIT_STEP,
    AUDIT_TOLERANCE,
    AUDIT_TRIALS,
    LAMBDA_COORD,
    LITERAL_CENTER_DECODE,
    LITERAL_OBJECTNESS,
    LOG_EPSILON,
)
from src.errors import NumericRangeError, PreconditionError
from src.random_seed import make_rng
from src.schemas import BoundingBox, Head

_SIMPLEX_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GridSpec:
    """
    Detection grid: ``size`` x ``size`` cells with one prediction per anchor.

    ``stride`` converts grid units to pixels (1.0 keeps the decoded center in
    grid units).
    """

    size: int
    anchors: tuple[tuple[float, float], ...]
    stride: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "anchors", tuple((float(w), float(h)) for w, h in self.anchors)
        )
        if self.size < 1 or not self.anchors:
            raise PreconditionError("GridSpec needs S >= 1 and B >= 1")
        if any(w <= 0 or h <= 0 for w, h in self.anchors):
            raise PreconditionError("Anchor dimensions must be positive")
        if self.stride <= 0:
            raise PreconditionError("GridSpec stride must be positive")

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.size, self.size, self.num_anchors)

    def anchor_array(self) -> tuple[np.ndarray, np.ndarray]:
        anchors = np.array(self.anchors)
        return anchors[:, 0], anchors[:, 1]


@dataclass(frozen=True)
class LossWeights:
    lambda_coord: float = LAMBDA_COORD

    def __post_init__(self):
        if self.lambda_coord <= 0:
            raise PreconditionError("lambda_coord must be positive")


@dataclass(frozen=True)
class LossConfig:
    """
    Attributes
    ----------
    epsilon : float
        Clamp for every logarithm argument.
    literal_objectness : bool
        Use only the positive half ``-C log Ĉ`` of the objectness cross-entropy.
    literal_center_decode : bool
        Decode the vertical center as ``g_y * f_y`` instead of ``g_y + f_y``.
    """

    epsilon: float = LOG_EPSILON
    literal_objectness: bool = LITERAL_OBJECTNESS
    literal_center_decode: bool = LITERAL_CENTER_DECODE


@dataclass(frozen=True)
class CellPrediction:
    f_x: float
    f_y: float
    f_w: float
    f_h: float
    objectness: float
    class_scores: tuple[float, ...]
    theta: float | None = None
    radii: tuple[float, ...] | None = None


@dataclass(frozen=True)
class CellTarget:
    has_object: bool
    x: float = 0.0
    y: float = 0.0
    w: float = 0.0
    h: float = 0.0
    confidence: float = 0.0
    class_onehot: tuple[float, ...] = ()
    theta: float | None = None
    radii: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.has_object and (self.w <= 0 or self.h <= 0):
            raise PreconditionError(f"Object cell needs w, h > 0, got {self.w} x {self.h}")


@dataclass(eq=False)
class PredictionGrid:
    """
    Network outputs for a whole grid. Also used to hold gradients, field by field.

    Shapes: ``offsets`` (S, S, B, 4) as f_x, f_y, f_w, f_h; ``objectness``
    (S, S, B); ``class_scores`` (S, S, B, C); ``theta`` (S, S, B);
    ``radii`` (S, S, B, R).
    """

    offsets: np.ndarray
    objectness: np.ndarray
    class_scores: np.ndarray
    theta: np.ndarray | None = None
    radii: np.ndarray | None = None

    @classmethod
    def from_cells(cls, grid: GridSpec, cells: Sequence[CellPrediction]) -> "PredictionGrid":
        """Build from ``S*S*B`` cells ordered row-major, then by anchor."""
        _check_cell_count(grid, cells)
        shape = grid.shape
        first = cells[0]
        return cls(
            offsets=np.array([(c.f_x, c.f_y, c.f_w, c.f_h) for c in cells]).reshape(*shape, 4),
            objectness=np.array([c.objectness for c in cells]).reshape(shape),
            class_scores=np.array([c.class_scores for c in cells]).reshape(*shape, -1),
            theta=None
            if first.theta is None
            else np.array([c.theta for c in cells]).reshape(shape),
            radii=None
            if first.radii is None
            else np.array([c.radii for c in cells]).reshape(*shape, -1),
        )

    def cell(self, row: int, col: int, anchor: int) -> CellPrediction:
        f_x, f_y, f_w, f_h = self.offsets[row, col, anchor]
        return CellPrediction(
            float(f_x),
            float(f_y),
            float(f_w),
            float(f_h),
            float(self.objectness[row, col, anchor]),
            tuple(self.class_scores[row, col, anchor].tolist()),
            None if self.theta is None else float(self.theta[row, col, anchor]),
            None if self.radii is None else tuple(self.radii[row, col, anchor].tolist()),
        )

    def copy(self) -> "PredictionGrid":
        return PredictionGrid(
            **{
                f.name: None if getattr(self, f.name) is None else getattr(self, f.name).copy()
                for f in fields(self)
            }
        )

    def zeros_like(self) -> "PredictionGrid":
        return PredictionGrid(
            **{
                f.name: None if getattr(self, f.name) is None else np.zeros_like(getattr(self, f.name))
                for f in fields(self)
            }
        )


@dataclass(eq=False)
class TargetGrid:
    """
    Ground truth for a whole grid. ``boxes`` is (S, S, B, 4) as x, y, w, h in
    the decoded center units; ``has_object`` holds the 0/1 indicator.
    """

    has_object: np.ndarray
    boxes: np.ndarray
    confidence: np.ndarray
    class_onehot: np.ndarray
    theta: np.ndarray | None = None
    radii: np.ndarray | None = None

    @classmethod
    def from_cells(cls, grid: GridSpec, cells: Sequence[CellTarget]) -> "TargetGrid":
        _check_cell_count(grid, cells)
        shape = grid.shape
        classes = max(len(c.class_onehot) for c in cells)
        onehot = np.zeros((len(cells), classes))
        for index, c in enumerate(cells):
            if c.class_onehot:
                onehot[index, : len(c.class_onehot)] = c.class_onehot
        with_theta = [c for c in cells if c.theta is not None]
        with_radii = [c for c in cells if c.radii is not None]
        theta = None
        if with_theta:
            theta = np.array([0.0 if c.theta is None else c.theta for c in cells]).reshape(shape)
        radii = None
        if with_radii:
            points = len(with_radii[0].radii)
            radii = np.array(
                [c.radii if c.radii is not None else (0.0,) * points for c in cells]
            ).reshape(*shape, points)
        return cls(
            has_object=np.array([1.0 if c.has_object else 0.0 for c in cells]).reshape(shape),
            boxes=np.array([(c.x, c.y, c.w, c.h) for c in cells]).reshape(*shape, 4),
            confidence=np.array([c.confidence for c in cells]).reshape(shape),
            class_onehot=onehot.reshape(*shape, classes),
            theta=theta,
            radii=radii,
        )


def _check_cell_count(grid: GridSpec, cells: Sequence) -> None:
    expected = grid.size * grid.size * grid.num_anchors
    if len(cells) != expected:
        raise PreconditionError(f"Expected {expected} cells, got {len(cells)}")


def decode_anchor(
    pred: CellPrediction,
    cell: tuple[int, int],
    anchor: tuple[float, float],
    stride: float = 1.0,
    cfg: LossConfig | None = None,
) -> BoundingBox:
    """
    Decode one prediction against its anchor and grid cell.

    ``w = a_w * exp(f_w)``, ``h = a_h * exp(f_h)``, ``x = g_x + f_x``,
    ``y = g_y + f_y`` (all centers scaled by ``stride``).

    Raises
    ------
    NumericRangeError
        If the exponentials overflow or underflow to a non-positive size.
    """
    cfg = cfg or LossConfig()
    a_w, a_h = anchor
    if a_w <= 0 or a_h <= 0:
        raise PreconditionError(f"Anchor dimensions must be positive: {anchor}")
    g_x, g_y = cell
    try:
        w = a_w * math.exp(pred.f_w)
        h = a_h * math.exp(pred.f_h)
    except OverflowError as exc:
        raise NumericRangeError(f"Size decode overflowed for {pred}") from exc
    x = (g_x + pred.f_x) * stride
    y = (g_y * pred.f_y if cfg.literal_center_decode else g_y + pred.f_y) * stride
    if not all(math.isfinite(v) for v in (x, y, w, h)) or w <= 0 or h <= 0:
        raise NumericRangeError(f"Decoded box is not finite and positive: {(x, y, w, h)}")
    return BoundingBox(x, y, w, h)


def encode_box(
    box: BoundingBox,
    cell: tuple[int, int],
    anchor: tuple[float, float],
    stride: float = 1.0,
    cfg: LossConfig | None = None,
) -> tuple[float, float, float, float]:
    """Inverse of :func:`decode_anchor`: the ``(f_x, f_y, f_w, f_h)`` that decode to ``box``."""
    cfg = cfg or LossConfig()
    g_x, g_y = cell
    f_x = box.cx / stride - g_x
    if cfg.literal_center_decode:
        if g_y == 0:
            raise PreconditionError("Literal center decode cannot encode row 0")
        f_y = box.cy / stride / g_y
    else:
        f_y = box.cy / stride - g_y
    return f_x, f_y, math.log(box.w / anchor[0]), math.log(box.h / anchor[1])


def normalize_angle(degrees: float) -> float:
    """Map [-180, 180] degrees onto [-1, 1]."""
    return degrees / 180.0


def denormalize_angle(value: float) -> float:
    return value * 180.0


def normalize_radii(radii, image_size: tuple[int, int]) -> np.ndarray:
    """Divide pixel radii by the image diagonal."""
    return np.asarray(radii, dtype=float) / math.hypot(*image_size)


def denormalize_radii(radii, image_size: tuple[int, int]) -> np.ndarray:
    return np.asarray(radii, dtype=float) * math.hypot(*image_size)


def _cell_indices(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    g_x = np.arange(grid.size, dtype=float)[np.newaxis, :, np.newaxis]
    g_y = np.arange(grid.size, dtype=float)[:, np.newaxis, np.newaxis]
    return g_x, g_y


def decode_grid(
    preds: PredictionGrid, grid: GridSpec, cfg: LossConfig | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`decode_anchor` over the whole grid."""
    cfg = cfg or LossConfig()
    g_x, g_y = _cell_indices(grid)
    a_w, a_h = grid.anchor_array()
    f_x, f_y, f_w, f_h = np.moveaxis(preds.offsets, -1, 0)
    with np.errstate(over="ignore"):
        w = a_w * np.exp(f_w)
        h = a_h * np.exp(f_h)
    x = (g_x + f_x) * grid.stride
    y = (g_y * f_y if cfg.literal_center_decode else g_y + f_y) * grid.stride
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(h))):
        raise NumericRangeError("Size decode overflowed")
    return x, y, w, h


def _check_shapes(preds: PredictionGrid, targets: TargetGrid, grid: GridSpec) -> None:
    shape = grid.shape
    if preds.offsets.shape != (*shape, 4) or targets.boxes.shape != (*shape, 4):
        raise PreconditionError(
            f"Box tensors must have shape {(*shape, 4)}, got "
            f"{preds.offsets.shape} and {targets.boxes.shape}"
        )
    if preds.objectness.shape != shape or targets.has_object.shape != shape:
        raise PreconditionError(f"Objectness tensors must have shape {shape}")
    if targets.confidence.shape != shape:
        raise PreconditionError(f"Target confidence must have shape {shape}")
    if preds.class_scores.shape[:3] != shape or targets.class_onehot.shape != preds.class_scores.shape:
        raise PreconditionError("Class score tensors do not match")
    if np.any(preds.objectness < 0) or np.any(preds.objectness > 1):
        raise PreconditionError("Objectness must lie in [0, 1]")
    sums = preds.class_scores.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > _SIMPLEX_TOLERANCE):
        raise PreconditionError("Class scores must sum to 1")


def _check_theta(preds: PredictionGrid, targets: TargetGrid, grid: GridSpec) -> None:
    if preds.theta is None or targets.theta is None:
        raise PreconditionError("Orientation head needs theta on predictions and targets")
    if preds.theta.shape != grid.shape or targets.theta.shape != grid.shape:
        raise PreconditionError(f"Theta tensors must have shape {grid.shape}")
    if np.any(np.abs(preds.theta) > 1) or np.any(np.abs(targets.theta) > 1):
        raise PreconditionError("Normalized theta must lie in [-1, 1]")


def _check_radii(
    preds: PredictionGrid, targets: TargetGrid, grid: GridSpec, points: int | None
) -> None:
    if preds.radii is None or targets.radii is None:
        raise PreconditionError("Polygon head needs radii on predictions and targets")
    expected = preds.radii.shape[-1] if points is None else points
    if preds.radii.shape != (*grid.shape, expected) or targets.radii.shape != (*grid.shape, expected):
        raise PreconditionError(
            f"Radii tensors must have shape {(*grid.shape, expected)}, got "
            f"{preds.radii.shape} and {targets.radii.shape}"
        )
    if np.any(preds.radii < 0) or np.any(targets.radii < 0):
        raise PreconditionError("Radii must be non-negative")


def _xy_terms(preds, targets, grid, weights, cfg) -> np.ndarray:
    x, y, _, _ = decode_grid(preds, grid, cfg)
    tx, ty = targets.boxes[..., 0], targets.boxes[..., 1]
    return weights.lambda_coord * targets.has_object * ((tx - x) ** 2 + (ty - y) ** 2)


def _wh_terms(preds, targets, grid, weights, cfg) -> np.ndarray:
    _, _, w, h = decode_grid(preds, grid, cfg)
    tw, th = targets.boxes[..., 2], targets.boxes[..., 3]
    if np.any(tw < 0) or np.any(th < 0):
        raise PreconditionError("Target width and height must be non-negative")
    return (
        weights.lambda_coord
        * targets.has_object
        * ((np.sqrt(tw) - np.sqrt(w)) ** 2 + (np.sqrt(th) - np.sqrt(h)) ** 2)
    )


def _obj_terms(preds, targets, cfg) -> np.ndarray:
    c_hat = np.clip(preds.objectness, cfg.epsilon, 1 - cfg.epsilon)
    c = targets.confidence
    if cfg.literal_objectness:
        return -c * np.log(c_hat)
    return -(c * np.log(c_hat) + (1 - c) * np.log(1 - c_hat))


def _class_terms(preds, targets, cfg) -> np.ndarray:
    p_hat = np.clip(preds.class_scores, cfg.epsilon, 1 - cfg.epsilon)
    return -targets.has_object * np.sum(targets.class_onehot * np.log(p_hat), axis=-1)


def _orientation_terms(preds, targets) -> np.ndarray:
    return targets.has_object * (targets.theta - preds.theta) ** 2


def _polygon_terms(preds, targets) -> np.ndarray:
    return targets.has_object * np.sum((targets.radii - preds.radii) ** 2, axis=-1)


def _total(terms: np.ndarray) -> float:
    return float(np.sum(terms.ravel(order="C")))


def loss_xy(preds, targets, grid, weights=None, cfg=None) -> float:
    """Center regression: λ_coord Σ l_obj [(x - x̂)² + (y - ŷ)²]."""
    _check_shapes(preds, targets, grid)
    return _total(_xy_terms(preds, targets, grid, weights or LossWeights(), cfg or LossConfig()))


def loss_wh(preds, targets, grid, weights=None, cfg=None) -> float:
    """Size regression on square roots: λ_coord Σ l_obj [(√w - √ŵ)² + (√h - √ĥ)²]."""
    _check_shapes(preds, targets, grid)
    return _total(_wh_terms(preds, targets, grid, weights or LossWeights(), cfg or LossConfig()))


def loss_obj(preds, targets, grid, cfg=None) -> float:
    """Binary cross-entropy of objectness over every cell and anchor."""
    _check_shapes(preds, targets, grid)
    return _total(_obj_terms(preds, targets, cfg or LossConfig()))


def loss_class(preds, targets, grid, cfg=None) -> float:
    """Categorical cross-entropy over object-bearing cells."""
    _check_shapes(preds, targets, grid)
    return _total(_class_terms(preds, targets, cfg or LossConfig()))


def loss_orientation(preds, targets, grid) -> float:
    """Squared difference of normalized angles, no wrap-around."""
    _check_shapes(preds, targets, grid)
    _check_theta(preds, targets, grid)
    return _total(_orientation_terms(preds, targets))


def loss_polygon(preds, targets, grid, points: int | None = None) -> float:
    """Squared error of the R normalized radii of every object-bearing cell."""
    _check_shapes(preds, targets, grid)
    _check_radii(preds, targets, grid, points)
    return _total(_polygon_terms(preds, targets))


def _check_head(preds, targets, grid, head: Head) -> None:
    _check_shapes(preds, targets, grid)
    if head in (Head.ORIENTED, Head.ELLIPSE):
        _check_theta(preds, targets, grid)
    elif head is Head.POLYGON:
        _check_radii(preds, targets, grid, None)


def loss_total(
    preds: PredictionGrid,
    targets: TargetGrid,
    grid: GridSpec,
    weights: LossWeights | None = None,
    head: Head = Head.BOX,
    cfg: LossConfig | None = None,
) -> float:
    """
    Total loss of one head.

    ``box``: xy + wh + obj + class; ``oriented`` and ``ellipse`` add the
    orientation term; ``polygon`` adds the radius term.
    """
    weights = weights or LossWeights()
    cfg = cfg or LossConfig()
    _check_head(preds, targets, grid, head)
    total = (
        loss_xy(preds, targets, grid, weights, cfg)
        + loss_wh(preds, targets, grid, weights, cfg)
        + loss_obj(preds, targets, grid, cfg)
        + loss_class(preds, targets, grid, cfg)
    )
    if head in (Head.ORIENTED, Head.ELLIPSE):
        total += loss_orientation(preds, targets, grid)
    elif head is Head.POLYGON:
        total += loss_polygon(preds, targets, grid)
    return total


def cell_losses(
    preds: PredictionGrid,
    targets: TargetGrid,
    grid: GridSpec,
    weights: LossWeights | None = None,
    head: Head = Head.BOX,
    cfg: LossConfig | None = None,
) -> np.ndarray:
    """Per-cell, per-anchor contribution to :func:`loss_total`, shape (S, S, B)."""
    weights = weights or LossWeights()
    cfg = cfg or LossConfig()
    terms = (
        _xy_terms(preds, targets, grid, weights, cfg)
        + _wh_terms(preds, targets, grid, weights, cfg)
        + _obj_terms(preds, targets, cfg)
        + _class_terms(preds, targets, cfg)
    )
    if head in (Head.ORIENTED, Head.ELLIPSE):
        terms = terms + _orientation_terms(preds, targets)
    elif head is Head.POLYGON:
        terms = terms + _polygon_terms(preds, targets)
    return terms


def loss_gradient(
    preds: PredictionGrid,
    targets: TargetGrid,
    grid: GridSpec,
    weights: LossWeights | None = None,
    head: Head = Head.BOX,
    cfg: LossConfig | None = None,
) -> PredictionGrid:
    """
    Analytic gradient of :func:`loss_total` with respect to every prediction field.

    The size partials chain through ``ŵ = a_w exp(f_w)``:
    ``d/df_w = λ (√ŵ - √w) √ŵ``. Clamped log arguments have zero gradient.
    Fields the head does not use get zero gradients.
    """
    weights = weights or LossWeights()
    cfg = cfg or LossConfig()
    _check_head(preds, targets, grid, head)
    gradient = preds.zeros_like()
    lam = weights.lambda_coord
    l_obj = targets.has_object

    x, y, w, h = decode_grid(preds, grid, cfg)
    _, g_y = _cell_indices(grid)
    tx, ty, tw, th = np.moveaxis(targets.boxes, -1, 0)
    dy_dfy = g_y * grid.stride if cfg.literal_center_decode else grid.stride
    gradient.offsets[..., 0] = lam * l_obj * 2 * (x - tx) * grid.stride
    gradient.offsets[..., 1] = lam * l_obj * 2 * (y - ty) * dy_dfy
    gradient.offsets[..., 2] = lam * l_obj * (np.sqrt(w) - np.sqrt(tw)) * np.sqrt(w)
    gradient.offsets[..., 3] = lam * l_obj * (np.sqrt(h) - np.sqrt(th)) * np.sqrt(h)

    c_hat = preds.objectness
    active = (c_hat >= cfg.epsilon) & (c_hat <= 1 - cfg.epsilon)
    c_safe = np.clip(c_hat, cfg.epsilon, 1 - cfg.epsilon)
    c = targets.confidence
    d_obj = -c / c_safe
    if not cfg.literal_objectness:
        d_obj = d_obj + (1 - c) / (1 - c_safe)
    gradient.objectness[...] = np.where(active, d_obj, 0.0)

    p_hat = preds.class_scores
    p_active = (p_hat >= cfg.epsilon) & (p_hat <= 1 - cfg.epsilon)
    p_safe = np.clip(p_hat, cfg.epsilon, 1 - cfg.epsilon)
    gradient.class_scores[...] = np.where(
        p_active, -l_obj[..., np.newaxis] * targets.class_onehot / p_safe, 0.0
    )

    if head in (Head.ORIENTED, Head.ELLIPSE):
        gradient.theta[...] = 2 * l_obj * (preds.theta - targets.theta)
    elif head is Head.POLYGON:
        gradient.radii[...] = 2 * l_obj[..., np.newaxis] * (preds.radii - targets.radii)
    return gradient


# Gradient audit -------------------------------------------------------------


@dataclass(frozen=True)
class AuditCase:
    head: Head
    field: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    relative_error: float


@dataclass(frozen=True)
class AuditResult:
    trials: int
    checked: int
    worst: AuditCase | None

    @property
    def max_relative_error(self) -> float:
        return 0.0 if self.worst is None else self.worst.relative_error

    def passed(self, tolerance: float = AUDIT_TOLERANCE) -> bool:
        return self.max_relative_error <= tolerance


def relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = AUDIT_ERROR_FLOOR
) -> np.ndarray:
    """
    ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` sits above the round-off of a central difference with step
    ``AUDIT_STEP``, so partials that vanish compare absolutely against it.
    """
    scale = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def _components(preds: PredictionGrid) -> Iterator[tuple[str, str, int | None]]:
    """(attribute, label, trailing index) for every scalar prediction field."""
    for k, name in enumerate(("f_x", "f_y", "f_w", "f_h")):
        yield "offsets", name, k
    yield "objectness", "objectness", None
    for k in range(preds.class_scores.shape[-1]):
        yield "class_scores", f"class_scores[{k}]", k
    if preds.theta is not None:
        yield "theta", "theta", None
    if preds.radii is not None:
        for k in range(preds.radii.shape[-1]):
            yield "radii", f"radii[{k}]", k


def finite_difference_gradient(
    preds: PredictionGrid,
    targets: TargetGrid,
    grid: GridSpec,
    weights: LossWeights | None = None,
    head: Head = Head.BOX,
    cfg: LossConfig | None = None,
    step: float = AUDIT_STEP,
) -> PredictionGrid:
    """
    Central finite differences of :func:`loss_total`.

    Each cell's loss depends only on that cell's fields, so one field
    component is shifted in every cell at once and the per-cell differences
    give all of its partials.
    """
    numeric = preds.zeros_like()
    for attribute, _, k in _components(preds):
        shifted = []
        for sign in (1.0, -1.0):
            probe = preds.copy()
            values = getattr(probe, attribute)
            if k is None:
                values += sign * step
            else:
                values[..., k] += sign * step
            shifted.append(cell_losses(probe, targets, grid, weights, head, cfg))
        partial = (shifted[0] - shifted[1]) / (2 * step)
        target = getattr(numeric, attribute)
        if k is None:
            target[...] = partial
        else:
            target[..., k] = partial
    return numeric


def random_configuration(
    rng: np.random.Generator,
    grid: GridSpec,
    classes: int = 2,
    points: int = AUDIT_POLYGON_POINTS,
) -> tuple[PredictionGrid, TargetGrid]:
    """Random predictions and targets kept away from the log clamps."""
    shape = grid.shape
    has_object = (rng.random(shape) < 0.5).astype(float)
    has_object.flat[rng.integers(has_object.size)] = 1.0
    g_x = np.arange(grid.size)[np.newaxis, :, np.newaxis]
    g_y = np.arange(grid.size)[:, np.newaxis, np.newaxis]
    boxes = np.stack(
        [
            (g_x + rng.random(shape)) * grid.stride,
            (g_y + rng.random(shape)) * grid.stride,
            rng.uniform(0.5, 6.0, shape),
            rng.uniform(0.5, 6.0, shape),
        ],
        axis=-1,
    )
    onehot = np.eye(classes)[rng.integers(classes, size=shape)]
    targets = TargetGrid(
        has_object=has_object,
        boxes=boxes,
        confidence=has_object.copy(),
        class_onehot=onehot,
        theta=rng.uniform(-1.0, 1.0, shape),
        radii=rng.uniform(0.0, 1.0, (*shape, points)),
    )
    scores = rng.uniform(0.1, 0.9, (*shape, classes))
    preds = PredictionGrid(
        offsets=np.stack(
            [
                rng.uniform(-0.5, 1.5, shape),
                rng.uniform(-0.5, 1.5, shape),
                rng.uniform(-1.0, 1.0, shape),
                rng.uniform(-1.0, 1.0, shape),
            ],
            axis=-1,
        ),
        objectness=rng.uniform(0.05, 0.95, shape),
        class_scores=scores / scores.sum(axis=-1, keepdims=True),
        theta=rng.uniform(-0.9, 0.9, shape),
        radii=rng.uniform(0.05, 1.0, (*shape, points)),
    )
    return preds, targets


def gradient_audit(
    seed: int | None = None,
    trials: int = AUDIT_TRIALS,
    heads: Sequence[Head] = tuple(Head),
    grid: GridSpec | None = None,
    weights: LossWeights | None = None,
    cfg: LossConfig | None = None,
    step: float = AUDIT_STEP,
) -> AuditResult:
    """
    Compare analytic and finite-difference gradients on random configurations.

    Returns the worst partial over all trials, heads and fields.
    """
    grid = grid or GridSpec(AUDIT_GRID_SIZE, AUDIT_ANCHORS)
    rng = make_rng(seed)
    worst: AuditCase | None = None
    checked = 0
    for _ in range(trials):
        preds, targets = random_configuration(rng, grid)
        for head in heads:
            analytic = loss_gradient(preds, targets, grid, weights, head, cfg)
            numeric = finite_difference_gradient(preds, targets, grid, weights, head, cfg, step)
            for attribute, label, k in _components(preds):
                a = getattr(analytic, attribute)
                n = getattr(numeric, attribute)
                if k is not None:
                    a, n = a[..., k], n[..., k]
                errors = relative_error(a, n)
                checked += errors.size
                index = np.unravel_index(int(np.argmax(errors)), errors.shape)
                error = float(errors[index])
                if worst is None or error > worst.relative_error:
                    worst = AuditCase(
                        head, label, tuple(int(i) for i in index), float(a[index]), float(n[index]), error
                    )
    return AuditResult(trials=trials, checked=checked, worst=worst)

