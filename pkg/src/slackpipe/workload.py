"""Workload traces: one JSON object per line, frame id plus content attributes."""

from __future__ import annotations

import json
from typing import Mapping, Sequence

import numpy as np

Frame = tuple[int, dict[str, int]]


def load_trace(path: str) -> list[Frame]:
    frames: list[Frame] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if "frame_id" not in obj:
                raise ValueError(f"{path}:{lineno}: missing frame_id")
            attrs = obj.get("attributes", {})
            clean: dict[str, int] = {}
            for k, v in attrs.items():
                if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                    raise ValueError(
                        f"{path}:{lineno}: attribute {k!r} must be a non-negative integer"
                    )
                clean[k] = v
            frames.append((int(obj["frame_id"]), clean))
    return frames


def write_trace(path: str, frames: Sequence[Frame]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fid, attrs in frames:
            fh.write(json.dumps({"frame_id": fid, "attributes": dict(attrs)}) + "\n")


def generate_trace(
    count: int,
    seed: int,
    attribute_rates: Mapping[str, float] | None = None,
    max_per_attribute: int = 4,
) -> list[Frame]:
    """Synthesize frames with Poisson-ish attribute counts.

    ``attribute_rates`` maps attribute name to the mean count per frame;
    counts are clipped to ``max_per_attribute`` so fan-out stays bounded.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(seed)
    rates = dict(attribute_rates or {})
    frames: list[Frame] = []
    for fid in range(count):
        attrs = {
            name: int(min(rng.poisson(rate), max_per_attribute))
            for name, rate in sorted(rates.items())
        }
        frames.append((fid, attrs))
    return frames
