"""Image crop procedures: fixed-size context crops and tight pedestrian crops.

Two crop modes feed the models:

* static: a fixed (w_c, h_c) window centered on the bounding-box center, so a
  band of environment around the pedestrian stays visible;
* dynamic: the bounding box enlarged by a margin of 5% of the box height on
  all four sides, so the model sees the pedestrian only.

All window arithmetic uses round-half-away-from-zero so results are bit-exact
and reproducible by a per-pixel reference loop. Out-of-frame regions are
filled with a constant pad value. Resampling happens only in
``letterbox_to_model_input`` (bilinear, align-corners=false).
"""

from __future__ import annotations

import json
import math
import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .trackdata import BoundingBox


class CropError(ValueError):
    pass


@dataclass(frozen=True)
class CropConfig:
    mode: str = "dynamic"  # {static, dynamic}
    static_size: tuple[int, int] = (600, 600)  # (w_c, h_c)
    dynamic_margin_fraction: float = 0.05
    model_input_size: int = 224  # S
    pad_value: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if self.mode not in ("static", "dynamic"):
            raise CropError(f"unknown crop mode {self.mode!r}")
        if self.static_size[0] <= 0 or self.static_size[1] <= 0:
            raise CropError(f"static_size must be positive, got {self.static_size}")
        if self.model_input_size <= 0:
            raise CropError(f"model_input_size must be positive, got {self.model_input_size}")
        if self.dynamic_margin_fraction < 0:
            raise CropError("dynamic_margin_fraction must be >= 0")


def round_half_away(v: float) -> int:
    """Round to nearest integer, halves away from zero."""
    return int(math.floor(abs(v) + 0.5)) * (1 if v >= 0 else -1)


def _extract_window(frame: np.ndarray, left: int, top: int, width: int, height: int,
                    pad_value) -> np.ndarray:
    """Copy a window [left, left+width) x [top, top+height), padding out-of-frame pixels."""
    h, w = frame.shape[:2]
    out = np.empty((height, width, 3), dtype=np.uint8)
    out[:, :] = np.asarray(pad_value, dtype=np.uint8)
    src_x0 = max(left, 0)
    src_y0 = max(top, 0)
    src_x1 = min(left + width, w)
    src_y1 = min(top + height, h)
    if src_x0 < src_x1 and src_y0 < src_y1:
        out[src_y0 - top:src_y1 - top, src_x0 - left:src_x1 - left] = \
            frame[src_y0:src_y1, src_x0:src_x1]
    return out


def static_crop_window(bbox: BoundingBox, cfg: CropConfig) -> tuple[int, int, int, int]:
    """(left, top, width, height) of the static window, in source pixel coordinates."""
    w_c, h_c = cfg.static_size
    cx, cy = bbox.center
    left = round_half_away(cx) - w_c // 2
    top = round_half_away(cy) - h_c // 2
    return left, top, w_c, h_c


def static_crop(frame: np.ndarray, bbox: BoundingBox, cfg: CropConfig) -> np.ndarray:
    """Fixed-size window centered on the bbox center; output is (h_c, w_c, 3)."""
    h, w = frame.shape[:2]
    if bbox.x2 <= 0 or bbox.x1 >= w or bbox.y2 <= 0 or bbox.y1 >= h:
        raise CropError(f"bounding box {bbox} entirely outside {w}x{h} frame")
    w_c, h_c = cfg.static_size
    if bbox.width >= w_c or bbox.height >= h_c:
        warnings.warn(
            f"bounding box {bbox.width:.0f}x{bbox.height:.0f} exceeds static crop "
            f"size {w_c}x{h_c}; proceeding with centered window",
            stacklevel=2,
        )
    left, top, width, height = static_crop_window(bbox, cfg)
    return _extract_window(frame, left, top, width, height, cfg.pad_value)


def dynamic_crop_window(bbox: BoundingBox, cfg: CropConfig) -> tuple[int, int, int, int]:
    """(left, top, width, height) of the margin-expanded dynamic window."""
    m = cfg.dynamic_margin_fraction * bbox.height
    left = round_half_away(bbox.x1 - m)
    top = round_half_away(bbox.y1 - m)
    right = round_half_away(bbox.x2 + m)
    bottom = round_half_away(bbox.y2 + m)
    return left, top, right - left, bottom - top


def dynamic_crop(frame: np.ndarray, bbox: BoundingBox, cfg: CropConfig) -> np.ndarray:
    """Bounding box plus a margin of ``dynamic_margin_fraction * b_h`` on each side."""
    h, w = frame.shape[:2]
    if bbox.x2 <= 0 or bbox.x1 >= w or bbox.y2 <= 0 or bbox.y1 >= h:
        raise CropError(f"bounding box {bbox} entirely outside {w}x{h} frame")
    left, top, width, height = dynamic_crop_window(bbox, cfg)
    return _extract_window(frame, left, top, width, height, cfg.pad_value)


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize (align-corners=false), u8 in, u8 out."""
    t = torch.from_numpy(img.astype(np.float32)).permute(2, 0, 1).unsqueeze(0)
    r = torch.nn.functional.interpolate(
        t, size=(out_h, out_w), mode="bilinear", align_corners=False
    )
    arr = r.squeeze(0).permute(1, 2, 0).numpy()
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def letterbox_to_model_input(img: np.ndarray, cfg: CropConfig) -> np.ndarray:
    """Scale so the larger dimension equals S, center on an S x S canvas, pad the rest.

    When the split between left/right (or top/bottom) padding is odd, the
    extra pixel goes on the right (bottom).
    """
    S = cfg.model_input_size
    h, w = img.shape[:2]
    if h == 0 or w == 0:
        raise CropError("empty image")
    if h == S and w == S:
        return img.copy()
    scale = S / max(h, w)
    new_h = max(1, round_half_away(h * scale))
    new_w = max(1, round_half_away(w * scale))
    new_h, new_w = min(new_h, S), min(new_w, S)
    resized = _bilinear_resize(img, new_h, new_w)
    out = np.empty((S, S, 3), dtype=np.uint8)
    out[:, :] = np.asarray(cfg.pad_value, dtype=np.uint8)
    top = (S - new_h) // 2
    left = (S - new_w) // 2
    out[top:top + new_h, left:left + new_w] = resized
    return out


def crop_clip_frames(frames: list[np.ndarray], bboxes: list[BoundingBox],
                     cfg: CropConfig) -> list[np.ndarray]:
    """Apply the configured crop mode plus model-input sizing to each frame.

    Static crops are resized directly to S x S (the default static window is
    already square); dynamic crops are letterboxed to preserve aspect ratio.
    """
    out = []
    for frame, bbox in zip(frames, bboxes):
        if cfg.mode == "static":
            crop = static_crop(frame, bbox, cfg)
            S = cfg.model_input_size
            if crop.shape[0] != S or crop.shape[1] != S:
                crop = _bilinear_resize(crop, S, S)
            out.append(crop)
        else:
            out.append(letterbox_to_model_input(dynamic_crop(frame, bbox, cfg), cfg))
    return out


@dataclass
class CropClip:
    frames: list[np.ndarray]  # each (S, S, 3) u8
    mode: str
    track_id: str
    frame_indices: list[int]
    flipped: bool = False
    label: int | None = None
    tte: int | None = None

    def __post_init__(self):
        shapes = {f.shape for f in self.frames}
        if len(shapes) > 1:
            raise CropError(f"inconsistent frame shapes in clip: {shapes}")

    def as_array(self) -> np.ndarray:
        return np.stack(self.frames, axis=0)


# --- clip store: one binary file per observation window --------------------

_MAGIC = b"PCLP"


def save_clip(clip: CropClip, path: str) -> None:
    """Header (JSON) + raw little-endian row-major u8 payload."""
    arr = clip.as_array()
    header = {
        "track_id": clip.track_id,
        "mode": clip.mode,
        "frame_indices": clip.frame_indices,
        "S": int(arr.shape[1]),
        "t": int(arr.shape[0]),
        "dtype": "u8",
        "flipped": clip.flipped,
        "label": clip.label,
        "tte": clip.tte,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def load_clip(path: str) -> CropClip:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise CropError(f"{path}: not a clip file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        t, S = header["t"], header["S"]
        payload = fh.read(t * S * S * 3)
        if len(payload) != t * S * S * 3:
            raise CropError(f"{path}: truncated payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(t, S, S, 3)
    return CropClip(
        frames=[arr[i].copy() for i in range(t)],
        mode=header["mode"],
        track_id=header["track_id"],
        frame_indices=list(header["frame_indices"]),
        flipped=bool(header.get("flipped", False)),
        label=header.get("label"),
        tte=header.get("tte"),
    )
