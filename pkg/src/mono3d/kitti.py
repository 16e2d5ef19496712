"""KITTI label/calibration parsing and the unified multi-dataset frame schema."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .geometry import Box2D, Box3D, CameraIntrinsics

logger = logging.getLogger(__name__)

KITTI_IMAGE_SIZE = (1242, 375)
DONTCARE = "DontCare"


class ParseError(ValueError):
    def __init__(self, message: str, line_no: int | None = None, source: str | None = None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if line_no is not None:
            where += f"{line_no}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line_no = line_no
        self.source = source


class MissingAnnotationError(ValueError):
    """A 3D quantity was requested from an annotation that only carries a 2D box."""


@dataclass(frozen=True)
class ObjectAnnotation:
    """One KITTI label row.

    ``dims`` keep the file order (h, w, l) and ``location`` is the bottom
    center of the box, exactly as stored. ``to_box3d`` converts to the
    geometric-center convention used everywhere else. 3D fields are None for
    DontCare rows and for annotations reduced to 2D.
    """

    cls: str
    box2d: Box2D
    truncation: float = 0.0
    occlusion: int = 0
    alpha: float | None = None
    dims: tuple[float, float, float] | None = None
    location: tuple[float, float, float] | None = None
    rotation_y: float | None = None
    score: float | None = None
    pitch: float = 0.0
    roll: float = 0.0

    @property
    def has_3d(self) -> bool:
        return self.dims is not None and self.location is not None and self.rotation_y is not None

    @property
    def height_px(self) -> float:
        return self.box2d.height

    def to_box3d(self) -> Box3D:
        if not self.has_3d:
            raise MissingAnnotationError(f"{self.cls} annotation carries no 3D box")
        h, w, l = self.dims
        x, y, z = self.location
        return Box3D((x, y - h / 2.0, z), (w, h, l), self.rotation_y)

    @classmethod
    def from_box3d(cls, name: str, box: Box3D, box2d: Box2D, alpha: float, **kw) -> "ObjectAnnotation":
        w, h, l = box.dims
        x, y, z = box.center
        return cls(
            cls=name,
            box2d=box2d,
            alpha=alpha,
            dims=(h, w, l),
            location=(x, y + h / 2.0, z),
            rotation_y=box.yaw,
            **kw,
        )

    def to_dict(self) -> dict:
        d = {
            "class": self.cls,
            "box2d": list(self.box2d.as_tuple()),
            "truncation": self.truncation,
            "occlusion": self.occlusion,
        }
        if self.has_3d:
            d.update(
                alpha=self.alpha,
                dims_hwl=list(self.dims),
                location=list(self.location),
                rotation_y=self.rotation_y,
            )
        if self.score is not None:
            d["score"] = self.score
        if self.pitch or self.roll:
            d.update(pitch=self.pitch, roll=self.roll)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectAnnotation":
        has3d = "dims_hwl" in d
        return cls(
            cls=d["class"],
            box2d=Box2D(*d["box2d"]),
            truncation=float(d.get("truncation", 0.0)),
            occlusion=int(d.get("occlusion", 0)),
            alpha=d.get("alpha") if has3d else None,
            dims=tuple(d["dims_hwl"]) if has3d else None,
            location=tuple(d["location"]) if has3d else None,
            rotation_y=d.get("rotation_y") if has3d else None,
            score=d.get("score"),
            pitch=float(d.get("pitch", 0.0)),
            roll=float(d.get("roll", 0.0)),
        )


def parse_kitti_label_line(line: str, line_no: int | None = None, source: str | None = None) -> ObjectAnnotation:
    fields = line.split()
    if len(fields) not in (15, 16):
        raise ParseError(f"expected 15 or 16 fields, got {len(fields)}", line_no, source)
    try:
        nums = [float(f) for f in fields[1:]]
    except ValueError as exc:
        raise ParseError(str(exc), line_no, source) from None
    trunc, occ, alpha = nums[0], nums[1], nums[2]
    try:
        box2d = Box2D(*nums[3:7])
    except ValueError as exc:
        raise ParseError(str(exc), line_no, source) from None
    score = nums[14] if len(nums) == 15 else None
    name = fields[0]
    h, w, l = nums[7:10]
    if name == DONTCARE or min(h, w, l) <= 0:
        return ObjectAnnotation(cls=name, box2d=box2d, truncation=trunc, occlusion=int(occ), score=score)
    return ObjectAnnotation(
        cls=name,
        box2d=box2d,
        truncation=trunc,
        occlusion=int(occ),
        alpha=alpha,
        dims=(h, w, l),
        location=tuple(nums[10:13]),
        rotation_y=nums[13],
        score=score,
    )


def format_kitti_label_line(ann: ObjectAnnotation) -> str:
    """Inverse of ``parse_kitti_label_line`` (six decimals; devkit sentinels for 2D-only rows)."""
    if ann.has_3d:
        alpha = ann.alpha if ann.alpha is not None else -10.0
        rest = [alpha, *ann.box2d.as_tuple(), *ann.dims, *ann.location, ann.rotation_y]
    else:
        rest = [-10.0, *ann.box2d.as_tuple(), -1.0, -1.0, -1.0, -1000.0, -1000.0, -1000.0, -10.0]
    parts = [ann.cls, f"{ann.truncation:.6f}", str(int(ann.occlusion))]
    parts += [f"{v:.6f}" for v in rest]
    if ann.score is not None:
        parts.append(f"{ann.score:.6f}")
    return " ".join(parts)


def parse_kitti_label_file(text: str, source: str | None = None) -> list[ObjectAnnotation]:
    return [
        parse_kitti_label_line(line, i, source)
        for i, line in enumerate(text.splitlines(), start=1)
        if line.strip()
    ]


def parse_kitti_calib(text: str, image_size: tuple[int, int] = KITTI_IMAGE_SIZE, source: str | None = None) -> CameraIntrinsics:
    """Intrinsics from the ``P2`` row of a KITTI calibration file.

    Calibration files do not record the image size; ``image_size`` (width,
    height) supplies it.
    """
    for i, line in enumerate(text.splitlines(), start=1):
        key, sep, value = line.partition(":")
        if not sep or key.strip() != "P2":
            continue
        try:
            p = [float(v) for v in value.split()]
        except ValueError as exc:
            raise ParseError(str(exc), i, source) from None
        if len(p) != 12:
            raise ParseError(f"P2 needs 12 numbers, got {len(p)}", i, source)
        width, height = image_size
        return CameraIntrinsics(f_x=p[0], f_y=p[5], c_x=p[2], c_y=p[6], width=width, height=height)
    raise ParseError("no P2 row found", source=source)


def format_kitti_calib(K: CameraIntrinsics) -> str:
    p2 = [K.f_x, 0.0, K.c_x, 0.0, 0.0, K.f_y, K.c_y, 0.0, 0.0, 0.0, 1.0, 0.0]
    return "P2: " + " ".join(f"{v:.12e}" for v in p2) + "\n"


@dataclass
class UnifiedFrame:
    frame_id: str
    dataset: str
    camera: CameraIntrinsics
    annotations: list[ObjectAnnotation] = field(default_factory=list)
    annotation_level: str = "3D"

    def to_dict(self) -> dict:
        c = self.camera
        return {
            "frame_id": self.frame_id,
            "dataset": self.dataset,
            "camera": {
                "f_x": c.f_x,
                "f_y": c.f_y,
                "c_x": c.c_x,
                "c_y": c.c_y,
                "width": c.width,
                "height": c.height,
            },
            "annotation_level": self.annotation_level,
            "annotations": [a.to_dict() for a in self.annotations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnifiedFrame":
        return cls(
            frame_id=str(d["frame_id"]),
            dataset=d["dataset"],
            camera=CameraIntrinsics(**d["camera"]),
            annotations=[ObjectAnnotation.from_dict(a) for a in d["annotations"]],
            annotation_level=d.get("annotation_level", "3D"),
        )


def frames_to_json(frames) -> str:
    return json.dumps([f.to_dict() for f in frames], indent=1, sort_keys=True) + "\n"


def frames_from_json(text: str) -> list[UnifiedFrame]:
    data = json.loads(text)
    if isinstance(data, dict):
        data = [data]
    return [UnifiedFrame.from_dict(d) for d in data]


def strip_to_2d(frame: UnifiedFrame) -> UnifiedFrame:
    if frame.annotation_level == "2D":
        return frame
    anns = [
        replace(a, alpha=None, dims=None, location=None, rotation_y=None, pitch=0.0, roll=0.0)
        for a in frame.annotations
    ]
    return replace(frame, annotations=anns, annotation_level="2D")


@dataclass
class SplitResult:
    frames: list[UnifiedFrame]
    errors: dict[str, str]
    duplicates: list[str]

    def summary(self) -> dict:
        return {
            "loaded": len(self.frames),
            "errors": len(self.errors),
            "duplicates": len(self.duplicates),
        }


def read_split_file(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def load_split(
    root,
    split,
    manifest,
    label_dir: str = "label_2",
    calib_dir: str = "calib",
) -> SplitResult:
    """Load the frames listed in ``split`` from a KITTI-layout directory.

    Missing or malformed files are recorded per frame instead of aborting.
    Duplicate ids are loaded once. Frames come back sorted by id.
    """
    root = Path(root)
    ids = read_split_file(split) if isinstance(split, (str, Path)) else list(split)
    seen, dups = set(), []
    for fid in ids:
        if fid in seen:
            dups.append(fid)
        seen.add(fid)
    if dups:
        logger.warning("split lists %d duplicate id(s); loading each once", len(dups))
    frames, errors = [], {}
    image_size = (
        (manifest.camera.width, manifest.camera.height) if manifest.camera else KITTI_IMAGE_SIZE
    )
    for fid in sorted(seen):
        try:
            label_path = root / label_dir / f"{fid}.txt"
            calib_path = root / calib_dir / f"{fid}.txt"
            anns = parse_kitti_label_file(label_path.read_text(), str(label_path))
            if calib_path.exists():
                camera = parse_kitti_calib(calib_path.read_text(), image_size, str(calib_path))
            elif manifest.camera is not None:
                camera = manifest.camera
            else:
                raise FileNotFoundError(f"missing calibration {calib_path}")
        except (OSError, ValueError) as exc:
            errors[fid] = str(exc)
            continue
        frame = UnifiedFrame(fid, manifest.name, camera, anns)
        if manifest.annotation_level == "2D":
            frame = strip_to_2d(frame)
        frames.append(frame)
    logger.info("loaded %d frame(s), %d error(s)", len(frames), len(errors))
    return SplitResult(frames, errors, dups)
