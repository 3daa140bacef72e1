"""Observation-window sampling, track-level splits, and class balancing.

The timing protocol: 16-frame observation subsampled by stride 2 to 8 frames,
with the time-to-event (frames between the last observed frame and the event
frame) constrained to [30, 60]. The kept frames are the most recent ones:
indices t_last-14, t_last-12, ..., t_last.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace

from .trackdata import LABEL_CROSSING, Manifest, PedestrianTrack


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    obs_len_frames: int = 16
    stride: int = 2
    tte_min: int = 30
    tte_max: int = 60
    seed: int = 0
    windows_per_track: int | None = None  # None = all admissible

    def __post_init__(self):
        if self.obs_len_frames % self.stride != 0:
            raise SamplingError("obs_len_frames must be divisible by stride")
        if self.tte_min > self.tte_max:
            raise SamplingError("tte_min must be <= tte_max")

    @property
    def clip_len(self) -> int:
        return self.obs_len_frames // self.stride


@dataclass(frozen=True)
class ObservationWindow:
    track_id: str
    frame_indices: tuple[int, ...]
    label: int  # 1 = crossing
    tte: int
    flipped: bool = False

    @property
    def t_last(self) -> int:
        return self.frame_indices[-1]

    @property
    def sample_id(self) -> str:
        flip = "f" if self.flipped else "o"
        return f"{self.track_id}:{self.t_last}:{flip}"


def enumerate_windows(track: PedestrianTrack, cfg: SamplingConfig) -> list[ObservationWindow]:
    """All admissible windows for one track; empty when none fit.

    A last-observation frame t_last is admissible when the full 16-frame
    observation fits inside the track and event_frame - t_last is in
    [tte_min, tte_max]. All strided frame indices must exist in the track.
    """
    present = set(track.frame_indices)
    first = track.frame_indices[0]
    label = 1 if track.label == LABEL_CROSSING else 0
    out = []
    lo = track.event_frame - cfg.tte_max
    hi = track.event_frame - cfg.tte_min
    span = cfg.obs_len_frames - cfg.stride  # 14 for the default protocol
    for t_last in range(lo, hi + 1):
        if t_last - (cfg.obs_len_frames - 1) < first:
            continue
        indices = tuple(range(t_last - span, t_last + 1, cfg.stride))
        if not all(i in present for i in indices):
            continue
        out.append(ObservationWindow(
            track_id=track.track_id,
            frame_indices=indices,
            label=label,
            tte=track.event_frame - t_last,
        ))
    if cfg.windows_per_track is not None and len(out) > cfg.windows_per_track:
        rng = random.Random((cfg.seed, track.track_id).__repr__())
        out = sorted(rng.sample(out, cfg.windows_per_track), key=lambda w: w.t_last)
    return out


def split_random(manifest: Manifest, train_ratio: float = 0.7, test_ratio: float = 0.2,
                 seed: int = 0) -> tuple[list[PedestrianTrack], list[PedestrianTrack]]:
    """Random split at track granularity; the remaining fraction is held out unused."""
    if train_ratio + test_ratio > 1.0 + 1e-9:
        raise SamplingError("train_ratio + test_ratio must be <= 1")
    tracks = list(manifest.tracks)
    if len(tracks) < 2:
        raise SamplingError("need at least 2 tracks to split")
    rng = random.Random(seed)
    order = list(range(len(tracks)))
    rng.shuffle(order)
    n_train = int(len(tracks) * train_ratio)
    n_test = int(len(tracks) * test_ratio)
    train = [tracks[i] for i in sorted(order[:n_train])]
    test = [tracks[i] for i in sorted(order[n_train:n_train + n_test])]
    return train, test


def split_by_tag(manifest: Manifest) -> tuple[list[PedestrianTrack], list[PedestrianTrack]]:
    """Pass-through for manifests carrying pre-assigned split tags."""
    train = [t for t in manifest.tracks if manifest.split_of(t.track_id) == "train"]
    test = [t for t in manifest.tracks if manifest.split_of(t.track_id) == "test"]
    return train, test


def balance_training_set(windows: list[ObservationWindow], seed: int = 0
                         ) -> list[ObservationWindow]:
    """Flip-augment every window, then undersample the majority class to parity."""
    labels = {w.label for w in windows}
    if labels != {0, 1}:
        raise SamplingError(f"both classes required for balancing, got labels {sorted(labels)}")
    augmented = []
    for w in windows:
        augmented.append(w)
        augmented.append(replace(w, flipped=True))
    pos = [w for w in augmented if w.label == 1]
    neg = [w for w in augmented if w.label == 0]
    rng = random.Random(seed)
    if len(pos) > len(neg):
        pos = rng.sample(pos, len(neg))
    elif len(neg) > len(pos):
        neg = rng.sample(neg, len(pos))
    out = pos + neg
    # deterministic canonical order; trainer shuffles per epoch with its own seed
    out.sort(key=lambda w: (w.track_id, w.t_last, w.flipped))
    return out


# --- window-list file -------------------------------------------------------

def write_windows(windows: list[ObservationWindow], splits: dict[str, str], path: str) -> None:
    """Line-delimited records consumed by the trainer/evaluator."""
    with open(path, "w", encoding="utf-8") as fh:
        for w in windows:
            rec = {
                "track_id": w.track_id,
                "frame_indices": list(w.frame_indices),
                "label": w.label,
                "tte": w.tte,
                "flipped": w.flipped,
                "split": splits.get(w.track_id, "unassigned"),
            }
            fh.write(json.dumps(rec) + "\n")


def read_windows(path: str) -> list[tuple[ObservationWindow, str]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append((
                ObservationWindow(
                    track_id=rec["track_id"],
                    frame_indices=tuple(rec["frame_indices"]),
                    label=rec["label"],
                    tte=rec["tte"],
                    flipped=rec["flipped"],
                ),
                rec.get("split", "unassigned"),
            ))
    return out
