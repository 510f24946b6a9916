#!/usr/bin/env python3
"""Writes the replay scenarios under fixtures/.

Each replay scenario pairs a mock chat script with an embedding table. The
reference statement embeds to (1, 0) and the response of trial k embeds to
(s_k, sqrt(1 - s_k^2)), so its cosine similarity to the reference is s_k.
The s_k series are four-decimal values chosen to hit fixed per-method means and
extrema exactly. Re-running this script reproduces the files
byte for byte.
"""

import json
import math
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent

TEMPORAL_REFERENCE = (
    "The red car is closing in on the vehicle in front and traffic ahead is getting denser. "
    "The driver should brake now to restore a safe gap."
)
SPATIAL_REFERENCE = (
    "The carriages are not all the same length because their seating differs: some use rows facing forward and "
    "others use facing benches, which changes the interior space. Trains built this way typically serve "
    "airport shuttle lines."
)

N = 20


def series(rng, total, pinned, lo, hi):
    """20 values in units of 1e-4 summing to `total`, with `pinned` {index: value}
    fixed and every other value strictly inside (lo, hi)."""
    free = [i for i in range(N) if i not in pinned]
    for _ in range(100000):
        vals = {i: v for i, v in pinned.items()}
        for i in free[:-1]:
            vals[i] = rng.randint(lo + 1, hi - 1)
        last = total - sum(vals.values())
        if lo < last < hi:
            vals[free[-1]] = last
            return [vals[i] for i in range(N)]
    raise RuntimeError("no series found")


def temporal_series(rng):
    diff = series(rng, 115200, {8: 6491, 14: 5110}, 5110, 6491)
    direct = series(rng, 85520, {15: 5858, 12: 2733}, 2733, 5858)
    return diff, direct


def spatial_series(rng):
    # The difference method beats the direct method on every trial but the first.
    for _ in range(100000):
        diff = series(rng, 139840, {8: 7735, 0: 5775}, 5775, 7735)
        direct = series(rng, 108960, {0: 6012}, 4300, 6012)
        if all(direct[i] < diff[i] for i in range(1, N)):
            return diff, direct
    raise RuntimeError("no spatial series found")


def response_text(scenario, method, trial):
    k = trial + 1
    if scenario == "temporal":
        if method == "difference":
            return (f"[{k:02d}] In the second picture the red car is closer to the vehicle ahead and more vehicles "
                    f"appear in front, so the driver should slow down to keep a safe distance.")
        return (f"[{k:02d}] A red car drives along a road lined with trees and buildings on a clear day, "
                f"with other vehicles further ahead.")
    if method == "difference":
        return (f"[{k:02d}] Yes, the carriages differ in length because their seating layouts differ: "
                f"some have forward-facing rows and others face-to-face seats.")
    return f"[{k:02d}] A simple drawing of a train with several carriages running on a track."


def embedding(s):
    return [s, math.sqrt(1.0 - s * s)]


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, separators=(",", ":"), ensure_ascii=False) + "\n")


def write_scenario(name, reference, templates, attachments, diff, direct, extra_context=""):
    out = HERE / name
    out.mkdir(exist_ok=True)
    script, table = [], [{"text": reference, "embedding": [1.0, 0.0]}]
    for method, vals in (("direct", direct), ("difference", diff)):
        for t, v in enumerate(vals):
            text = response_text(name, method, t)
            script.append({"template": templates[method], "trial": t, "response": text})
            table.append({"text": text, "embedding": embedding(v / 10000.0)})
    write_jsonl(out / "script.jsonl", script)
    write_jsonl(out / "embeddings.jsonl", table)
    atts = ", ".join(json.dumps(a) for a in attachments)
    (out / "scenario.toml").write_text(
        f'''name = "{name}"
reference = {json.dumps(reference)}
trials = {N}
alpha = 0.05

[[methods]]
method = "direct"
template = "{templates["direct"]}"

[[methods]]
method = "difference"
template = "{templates["difference"]}"

[context]
attachments = [{atts}]
{extra_context}
[backend]
kind = "mock"
script = "script.jsonl"

[provider]
kind = "table"
table = "embeddings.jsonl"
''',
        encoding="utf-8",
    )
    (out / "expected_similarities.json").write_text(
        json.dumps({"difference": [v / 10000.0 for v in diff], "direct": [v / 10000.0 for v in direct]}) + "\n",
        encoding="utf-8",
    )


def main():
    rng = random.Random(20251019)
    t_diff, t_direct = temporal_series(rng)
    s_diff, s_direct = spatial_series(rng)
    write_scenario("temporal", TEMPORAL_REFERENCE,
                   {"direct": "temporal_direct", "difference": "temporal_difference"},
                   ["road_t0.png", "road_t1.png"], t_diff, t_direct)
    write_scenario("spatial", SPATIAL_REFERENCE,
                   {"direct": "spatial_direct", "difference": "spatial_difference"},
                   ["metro_schematic.png"], s_diff, s_direct,
                   extra_context='states = "carriages.jsonl"\n')
    carriages = [("car 1", 10.2), ("car 2", 12.6), ("car 3", 12.6), ("car 4", 10.2)]
    write_jsonl(HERE / "spatial" / "carriages.jsonl", [
        {"id": f"carriage-{i + 1}", "timestamp": None, "region_label": label, "extractor_id": "passthrough",
         "raw_ref": {"uri": "metro_schematic.png"}, "dims": [{"name": "length_m", "value": length, "unit": "m"}]}
        for i, (label, length) in enumerate(carriages)
    ])


if __name__ == "__main__":
    main()
