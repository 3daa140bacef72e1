"""Pedestrian track data model and manifest I/O.

A manifest is line-delimited JSON, one track per line. This is the ingestion
boundary: the synthetic generator writes manifests, and an external adapter
for a real dataset can produce the same format.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

LABEL_CROSSING = "crossing"
LABEL_NON_CROSSING = "non_crossing"
VALID_LABELS = (LABEL_CROSSING, LABEL_NON_CROSSING)
VALID_SPLITS = ("train", "test", "unassigned")


class ManifestError(ValueError):
    """Raised on parse errors or invariant violations in manifest data."""


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ManifestError(f"bounding box has non-finite coordinates: {vals}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ManifestError(f"degenerate bounding box: {vals}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def flipped(self, image_width: float) -> "BoundingBox":
        """Mirror horizontally in an image of the given width."""
        return BoundingBox(image_width - self.x2, self.y1, image_width - self.x1, self.y2)


@dataclass(frozen=True)
class FrameRef:
    frame_index: int
    image_path: str

    def __post_init__(self):
        if self.frame_index < 0:
            raise ManifestError(f"negative frame index: {self.frame_index}")


@dataclass
class PedestrianTrack:
    track_id: str
    frames: list[tuple[FrameRef, BoundingBox]]
    label: str
    event_frame: int
    source_image_size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        if self.label not in VALID_LABELS:
            raise ManifestError(f"track {self.track_id}: unknown label {self.label!r}")
        if not self.frames:
            raise ManifestError(f"track {self.track_id}: no frames")
        indices = [ref.frame_index for ref, _ in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ManifestError(f"track {self.track_id}: frame indices not strictly increasing")
        last = indices[-1]
        if self.label == LABEL_NON_CROSSING and self.event_frame < last:
            raise ManifestError(
                f"track {self.track_id}: non-crossing event_frame {self.event_frame} "
                f"precedes last frame {last}"
            )
        if self.event_frame < indices[0]:
            raise ManifestError(
                f"track {self.track_id}: event_frame {self.event_frame} precedes track start"
            )
        w, h = self.source_image_size
        if w <= 0 or h <= 0:
            raise ManifestError(f"track {self.track_id}: bad image size {self.source_image_size}")

    @property
    def frame_indices(self) -> list[int]:
        return [ref.frame_index for ref, _ in self.frames]

    def bbox_at(self, frame_index: int) -> BoundingBox:
        for ref, box in self.frames:
            if ref.frame_index == frame_index:
                return box
        raise KeyError(f"track {self.track_id} has no frame {frame_index}")

    def frame_at(self, frame_index: int) -> tuple[FrameRef, BoundingBox]:
        for ref, box in self.frames:
            if ref.frame_index == frame_index:
                return ref, box
        raise KeyError(f"track {self.track_id} has no frame {frame_index}")


@dataclass
class Manifest:
    tracks: list[PedestrianTrack]
    split_tags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ids = [t.track_id for t in self.tracks]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate track ids: {dupes}")
        for tid, tag in self.split_tags.items():
            if tag not in VALID_SPLITS:
                raise ManifestError(f"track {tid}: unknown split tag {tag!r}")

    def split_of(self, track_id: str) -> str:
        return self.split_tags.get(track_id, "unassigned")


def _track_to_record(track: PedestrianTrack, split: str) -> dict:
    return {
        "track_id": track.track_id,
        "label": track.label,
        "event_frame": track.event_frame,
        "image_size": list(track.source_image_size),
        "split": split,
        "frames": [
            {"idx": ref.frame_index, "path": ref.image_path,
             "bbox": [box.x1, box.y1, box.x2, box.y2]}
            for ref, box in track.frames
        ],
    }


def _track_from_record(rec: dict) -> tuple[PedestrianTrack, str]:
    try:
        frames = [
            (FrameRef(f["idx"], f["path"]), BoundingBox(*f["bbox"]))
            for f in rec["frames"]
        ]
        track = PedestrianTrack(
            track_id=rec["track_id"],
            frames=frames,
            label=rec["label"],
            event_frame=rec["event_frame"],
            source_image_size=tuple(rec["image_size"]),
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"malformed track record ({rec.get('track_id', '?')}): {exc}") from exc
    return track, rec.get("split", "unassigned")


def load_manifest(path: str) -> Manifest:
    """Parse a line-delimited manifest file; raises ManifestError with line numbers."""
    tracks: list[PedestrianTrack] = []
    split_tags: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                track, split = _track_from_record(rec)
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            tracks.append(track)
            if split != "unassigned":
                split_tags[track.track_id] = split
    return Manifest(tracks=tracks, split_tags=split_tags)


def write_manifest(manifest: Manifest, path: str) -> None:
    """Write atomically: either the complete file appears or nothing changes."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for track in manifest.tracks:
                rec = _track_to_record(track, manifest.split_of(track.track_id))
                fh.write(json.dumps(rec) + "\n")
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
