"""On-disk interchange formats.

Matrix container (extension .vkm by convention):

    bytes 0..15   magic "VKDETMATRIX00001"
    bytes 16..19  little-endian u32 header length L
    bytes 20..    UTF-8 JSON header with at least
                  {"dim", "rows", "kind", "version", "keys"}
    then          rows * dim little-endian float32, row-major
    then          if keys: one UTF-8 key per row, newline-delimited

Attention maps reuse the container with rows = grid height (H_a) and
dim = grid width (W_a) plus image_w / image_h in the header.

Record files are UTF-8, newline-delimited, tab-separated:

    proposals   image_id x1 y1 x2 y2 objectness [proposal_id role]
    ground truth image_id class x1 y1 x2 y2
    detections  image_id class x1 y1 x2 y2 score_s score_d score_p score_l
    pseudo      proposal_id unknown_index distance

The two trailing proposal columns are written by this package so that
subset files keep stable ids; plain six-field files are accepted and get
ids "<image_id>#<ordinal>" by per-image order of appearance.

Floats are written with repr() and round-trip exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .evaluation import GroundTruthBox
from .geometry import BBox, Proposal, ROLE_RAW
from .infer import Detection
from .pseudolabel import PseudoLabel
from .util import FormatVersionError, MissingInputError, VkdetError

MAGIC = b"VKDETMATRIX00001"
FORMAT_VERSION = 1


class WireError(VkdetError):
    """Malformed file content."""


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingInputError(str(p))
    return p


def write_matrix(path, values, kind: str, *, keys=None, extra: dict | None = None) -> None:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise WireError(f"matrix payload must be 2-d, got shape {arr.shape}")
    header = {
        "dim": int(arr.shape[1]),
        "rows": int(arr.shape[0]),
        "kind": str(kind),
        "version": FORMAT_VERSION,
        "keys": keys is not None,
    }
    if extra:
        header.update(extra)
    if keys is not None:
        keys = [str(k) for k in keys]
        if len(keys) != arr.shape[0]:
            raise WireError("one key per row required")
        for k in keys:
            if "\n" in k or "\t" in k:
                raise WireError(f"key contains forbidden whitespace: {k!r}")
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes())
        if keys is not None:
            fh.write(("\n".join(keys) + "\n").encode("utf-8"))


def read_matrix(path, *, expect_kind: str | None = None):
    """Returns (float32 array (rows, dim), header dict, keys list or None)."""
    p = _require(path)
    raw = p.read_bytes()
    if len(raw) < 20 or raw[:16] != MAGIC:
        raise WireError(f"{p}: not a matrix container (bad magic)")
    (hlen,) = struct.unpack("<I", raw[16:20])
    if 20 + hlen > len(raw):
        raise WireError(f"{p}: truncated header")
    try:
        header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"{p}: unreadable header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise FormatVersionError(
            f"{p}: format version {header.get('version')!r}, expected {FORMAT_VERSION}"
        )
    rows, dim = int(header["rows"]), int(header["dim"])
    if rows < 0 or dim < 0:
        raise WireError(f"{p}: negative shape in header")
    body = 20 + hlen
    nbytes = rows * dim * 4
    if body + nbytes > len(raw):
        raise WireError(f"{p}: truncated payload")
    arr = np.frombuffer(raw[body : body + nbytes], dtype="<f4").reshape(rows, dim)
    keys = None
    if header.get("keys"):
        tail = raw[body + nbytes :].decode("utf-8")
        keys = tail.splitlines()
        if len(keys) != rows:
            raise WireError(f"{p}: key list has {len(keys)} entries for {rows} rows")
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise WireError(f"{p}: kind {header.get('kind')!r}, expected {expect_kind!r}")
    return np.array(arr), header, keys


def write_attention(path, grid, image_width: int, image_height: int) -> None:
    grid = np.asarray(grid)
    write_matrix(
        path,
        grid,
        "attention",
        extra={
            "H_a": int(grid.shape[0]),
            "W_a": int(grid.shape[1]),
            "image_w": int(image_width),
            "image_h": int(image_height),
        },
    )


def read_attention(path):
    """Returns (grid float array, image_width, image_height)."""
    arr, header, _ = read_matrix(path, expect_kind="attention")
    try:
        return np.asarray(arr, dtype=np.float64), int(header["image_w"]), int(header["image_h"])
    except KeyError as exc:
        raise WireError(f"{path}: attention header missing {exc}") from exc


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_float(field: str, path, lineno: int) -> float:
    try:
        return float(field)
    except ValueError as exc:
        raise WireError(f"{path}:{lineno}: bad number {field!r}") from exc


def write_proposals(path, proposals: list[Proposal]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in proposals:
            b = p.box
            fh.write(
                "\t".join(
                    [
                        p.image_id,
                        _fmt(b.x1),
                        _fmt(b.y1),
                        _fmt(b.x2),
                        _fmt(b.y2),
                        _fmt(p.objectness),
                        p.proposal_id,
                        p.role,
                    ]
                )
                + "\n"
            )


def read_proposals(path) -> list[Proposal]:
    p = _require(path)
    out: list[Proposal] = []
    counters: dict[str, int] = {}
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            f = line.split("\t")
            if len(f) not in (6, 8):
                raise WireError(f"{p}:{lineno}: expected 6 or 8 fields, got {len(f)}")
            image_id = f[0]
            box = BBox(*(_parse_float(v, p, lineno) for v in f[1:5]))
            objectness = _parse_float(f[5], p, lineno)
            if len(f) == 8:
                pid, role = f[6], f[7]
            else:
                n = counters.get(image_id, 0)
                counters[image_id] = n + 1
                pid, role = f"{image_id}#{n}", ROLE_RAW
            out.append(
                Proposal(
                    image_id=image_id,
                    box=box,
                    objectness=objectness,
                    proposal_id=pid,
                    role=role,
                )
            )
    return out


def write_ground_truth(path, gts: list[GroundTruthBox]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in gts:
            b = g.box
            fh.write(
                "\t".join(
                    [g.image_id, g.class_name, _fmt(b.x1), _fmt(b.y1), _fmt(b.x2), _fmt(b.y2)]
                )
                + "\n"
            )


def read_ground_truth(path) -> list[GroundTruthBox]:
    p = _require(path)
    out: list[GroundTruthBox] = []
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            f = line.split("\t")
            if len(f) != 6:
                raise WireError(f"{p}:{lineno}: expected 6 fields, got {len(f)}")
            out.append(
                GroundTruthBox(
                    image_id=f[0],
                    class_name=f[1],
                    box=BBox(*(_parse_float(v, p, lineno) for v in f[2:6])),
                )
            )
    return out


def write_detections(path, detections: list[Detection]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in detections:
            b = d.box
            fh.write(
                "\t".join(
                    [
                        d.image_id,
                        d.class_name,
                        _fmt(b.x1),
                        _fmt(b.y1),
                        _fmt(b.x2),
                        _fmt(b.y2),
                        _fmt(d.score_s),
                        _fmt(d.score_d),
                        _fmt(d.score_p),
                        _fmt(d.score_l),
                    ]
                )
                + "\n"
            )


def read_detections(path) -> list[Detection]:
    p = _require(path)
    out: list[Detection] = []
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            f = line.split("\t")
            if len(f) != 10:
                raise WireError(f"{p}:{lineno}: expected 10 fields, got {len(f)}")
            nums = [_parse_float(v, p, lineno) for v in f[2:]]
            out.append(
                Detection(
                    image_id=f[0],
                    class_name=f[1],
                    box=BBox(*nums[:4]),
                    score=nums[4],
                    score_d=nums[5],
                    score_p=nums[6],
                    score_l=nums[7],
                    score_s=nums[4],
                )
            )
    return out


def write_pseudo_labels(path, records: list[PseudoLabel]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.proposal_id}\t{r.unknown_index}\t{_fmt(r.distance)}\n")


def read_pseudo_labels(path) -> list[PseudoLabel]:
    p = _require(path)
    out: list[PseudoLabel] = []
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            f = line.split("\t")
            if len(f) != 3:
                raise WireError(f"{p}:{lineno}: expected 3 fields, got {len(f)}")
            try:
                idx = int(f[1])
            except ValueError as exc:
                raise WireError(f"{p}:{lineno}: bad unknown index {f[1]!r}") from exc
            out.append(
                PseudoLabel(
                    proposal_id=f[0],
                    unknown_index=idx,
                    distance=_parse_float(f[2], p, lineno),
                )
            )
    return out


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path) -> dict:
    p = _require(path)
    with open(p, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise WireError(f"{p}: invalid JSON: {exc}") from exc
