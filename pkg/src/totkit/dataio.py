"""Reading and writing frames, episodes and dataset directories.

Frame streams are JSONL (one object per line with keys ``t, foot, gaze,
hand_l, hand_r, stereo, obj_l, obj_r``) or CSV with a ``t`` column followed
by the 41 canonical feature columns.

A dataset directory holds ``manifest.json`` and ``episodes.jsonl``. Each
episode line carries its metadata, targets and frames; frames are either a
list of frame objects (``"frames"``, convenient for external data) or a
base64 float64 block of shape ``(n, 42)`` with the timestamp in column 0
(``"frames_b64"``, compact). Both are read back bit-exactly.
"""

from __future__ import annotations

import base64
import csv
import io
import json
from pathlib import Path
from typing import IO, Any, Iterable, Iterator, Sequence

import numpy as np

from .episodes import Episode
from .errors import DataError, ValidationError
from .features import FULL_DIM, FeatureFrame, column_names, ingest
from .splits import DatasetManifest

MANIFEST_FILE = "manifest.json"
EPISODES_FILE = "episodes.jsonl"


def _open_text(source: str | Path | IO[str]) -> IO[str]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8")
    return source


def iter_frames_jsonl(source: str | Path | IO[str]) -> Iterator[FeatureFrame]:
    """Parse frames line by line; blank lines are ignored."""
    fh = _open_text(source)
    try:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            try:
                yield FeatureFrame.from_json(obj)
            except ValidationError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
    finally:
        if fh is not source:
            fh.close()


def write_frames_jsonl(frames: Iterable[FeatureFrame], dest: str | Path | IO[str]) -> None:
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", encoding="utf-8") if own else dest
    try:
        for f in frames:
            fh.write(json.dumps(f.to_json()) + "\n")
    finally:
        if own:
            fh.close()


def write_frames_csv(frames: Iterable[FeatureFrame], dest: str | Path | IO[str]) -> None:
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        writer = csv.writer(fh)
        writer.writerow(["t", *column_names()])
        for f in frames:
            writer.writerow([repr(f.timestamp), *(repr(float(v)) for v in f.vector())])
    finally:
        if own:
            fh.close()


def read_frames_csv(source: str | Path | IO[str]) -> list[FeatureFrame]:
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", *column_names()]:
            raise DataError("CSV header does not match the canonical column order")
        frames = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != FULL_DIM + 1:
                raise DataError(f"CSV line {lineno}: expected {FULL_DIM + 1} fields, got {len(row)}")
            values = np.array([float(v) for v in row])
            try:
                frames.append(_ingest_vector(values[0], values[1:]))
            except ValidationError as exc:
                raise DataError(f"CSV line {lineno}: {exc}") from None
        return frames
    finally:
        if fh is not source:
            fh.close()


def _ingest_vector(t: float, vec: np.ndarray) -> FeatureFrame:
    return ingest(FeatureFrame.from_vector(t, vec))


def read_frames(path: str | Path) -> list[FeatureFrame]:
    """Frames from a ``.csv`` or JSONL file (by extension)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_frames_csv(path)
    return list(iter_frames_jsonl(path))


# Episodes

def _encode_block(ts: np.ndarray, feats: np.ndarray) -> str:
    block = np.column_stack([ts, feats]).astype("<f8")
    return base64.b64encode(block.tobytes()).decode("ascii")


def _decode_block(text: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except ValueError as exc:
        raise DataError(f"corrupt frame block: {exc}") from None
    if len(raw) % (8 * (FULL_DIM + 1)):
        raise DataError("frame block size is not a multiple of the row size")
    block = np.frombuffer(raw, dtype="<f8").reshape(-1, FULL_DIM + 1).astype(np.float64)
    return block[:, 0], block[:, 1:]


def episode_to_json(ep: Episode, frame_encoding: str = "b64") -> dict[str, Any]:
    obj: dict[str, Any] = {
        "episode_id": ep.episode_id,
        "rate": ep.rate,
        "tor_index": ep.tor_index,
        "activity": None if ep.activity is None else int(ep.activity),
        "targets": None if ep.targets is None else list(ep.targets),
        "provenance": ep.provenance,
        "source_id": ep.source_id,
        "shift": ep.shift,
    }
    if frame_encoding == "b64":
        obj["frames_b64"] = _encode_block(ep.timestamps, ep.features)
    elif frame_encoding == "json":
        obj["frames"] = [ep.frame(k).to_json() for k in range(ep.n_frames)]
    else:
        raise ValueError(f"unknown frame encoding {frame_encoding!r}")
    return obj


def episode_from_json(obj: dict[str, Any]) -> Episode:
    try:
        if "frames_b64" in obj:
            ts, feats = _decode_block(obj["frames_b64"])
        else:
            frames = [FeatureFrame.from_json(f) for f in obj["frames"]]
            ts = np.array([f.timestamp for f in frames])
            feats = np.array([f.vector() for f in frames]).reshape(len(frames), FULL_DIM)
        targets = obj.get("targets")
        return Episode(
            episode_id=str(obj["episode_id"]),
            features=feats,
            timestamps=ts,
            tor_index=int(obj["tor_index"]),
            rate=float(obj["rate"]),
            targets=None if targets is None else tuple(float(t) for t in targets),
            activity=obj.get("activity"),
            provenance=obj.get("provenance", "real"),
            source_id=obj.get("source_id"),
            shift=float(obj.get("shift", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed episode record: {exc!r}") from None


def write_episodes(episodes: Iterable[Episode], dest: str | Path | IO[str], frame_encoding: str = "b64") -> None:
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", encoding="utf-8") if own else dest
    try:
        for ep in episodes:
            fh.write(json.dumps(episode_to_json(ep, frame_encoding)) + "\n")
    finally:
        if own:
            fh.close()


def read_episodes(source: str | Path | IO[str]) -> list[Episode]:
    fh = _open_text(source)
    try:
        out = []
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{EPISODES_FILE} line {lineno}: invalid JSON ({exc.msg})") from None
            out.append(episode_from_json(obj))
        return out
    finally:
        if fh is not source:
            fh.close()


def save_dataset(directory: str | Path, episodes: Sequence[Episode], manifest: DatasetManifest,
                 frame_encoding: str = "b64") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / MANIFEST_FILE, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    write_episodes(episodes, directory / EPISODES_FILE, frame_encoding)
    return directory


def load_dataset(directory: str | Path) -> tuple[list[Episode], DatasetManifest]:
    """Load a dataset directory; every episode must appear in the manifest."""
    directory = Path(directory)
    try:
        with open(directory / MANIFEST_FILE, encoding="utf-8") as fh:
            manifest = DatasetManifest.from_json(json.load(fh))
    except FileNotFoundError:
        raise DataError(f"{directory} has no {MANIFEST_FILE}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{MANIFEST_FILE}: invalid JSON ({exc.msg})") from None
    episodes = read_episodes(directory / EPISODES_FILE)
    missing = [ep.episode_id for ep in episodes if ep.episode_id not in manifest.splits]
    if missing:
        raise DataError(f"{len(missing)} episode(s) missing from the manifest, e.g. {missing[0]}")
    return episodes, manifest


def dumps_episodes(episodes: Iterable[Episode], frame_encoding: str = "b64") -> str:
    buf = io.StringIO()
    write_episodes(episodes, buf, frame_encoding)
    return buf.getvalue()
