"""Synthetic fixture corpus for running the whole pipeline without network access.

:func:`build_corpus` writes a small catalog of regulatory sign classes with
placeholder PNG images, perturbed field queries, out-of-scope objects, two
scripted scenes, the matching manifests, a mock script and a mock-mode
config. Everything is a deterministic function of ``seed``.
"""
from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image

from .catalog import SignClass, write_manifest
from .descriptor import MockDescriptor, ScriptedSign, SignDescription, write_mock_script
from .evaluation import LabeledExample, write_dataset
from .scope_filter import IN_SCOPE, OUT_OF_SCOPE

FIXTURE_CLASSES: Tuple[Tuple[str, str], ...] = (
    ("R1-1", "Stop"),
    ("R1-2", "Yield"),
    ("R1-3P", "All Way"),
    ("R2-1", "Speed Limit 50"),
    ("R2-4P", "Minimum Speed 40"),
    ("R3-1", "No Right Turn"),
    ("R3-2", "No Left Turn"),
    ("R3-3", "No Turns"),
    ("R3-4", "No U-Turn"),
    ("R3-5L", "Left Lane Must Turn Left"),
    ("R4-1", "Do Not Pass"),
    ("R4-7", "Keep Right"),
    ("R4-16", "Keep Right Except To Pass"),
    ("R5-1", "Do Not Enter"),
    ("R5-1a", "Wrong Way"),
    ("R6-1", "One Way"),
    ("R7-1", "No Parking Any Time"),
    ("R7-2", "No Parking 8 AM - 6 PM"),
    ("R10-6", "Stop Here On Red"),
    ("R10-11", "No Turn On Red"),
)

OUT_OF_SCOPE_TEXTS = (
    "A yellow diamond warning panel showing a curved arrow bending sharply.",
    "A green rectangular guide panel listing exit destinations and mileage.",
    "A large billboard advertising fresh coffee and warm donuts.",
    "A brown recreational marker depicting a tent beside pine trees.",
    "An orange construction barrel with reflective white stripes.",
    "A yellow diamond warning panel depicting a leaping deer silhouette.",
    "A blue hospital marker with a bold white letter H.",
    "A yellow pentagon school crossing panel with two walking children.",
    "A storefront banner announcing a weekend furniture sale.",
    "A green street blade mounted above an intersection corner.",
    "A yellow diamond panel warning about slippery pavement when wet.",
    "A political campaign poster stapled onto a wooden utility pole.",
    "A traffic signal head with glowing red, amber and green lamps.",
    "An orange diamond panel announcing road work ahead for workers.",
    "A blue rest area marker showing a picnic table icon.",
    "A gas station price board listing fuel prices per gallon.",
    "A yellow diamond panel showing a truck descending a steep hill.",
    "A railroad crossbuck made of two crossed white boards.",
    "A pizza restaurant menu painted across a shop window.",
    "A mile marker post carrying small green reflective plates.",
    "A yellow diamond panel showing a merging lane from the right.",
    "A white billboard promoting a downtown jazz festival concert.",
    "A brown historical marker describing a nearby battlefield monument.",
    "A yellow rectangular chevron panel pointing drivers around a bend.",
    "An orange flagger ahead panel depicting a worker holding a flag.",
    "A green airport guide panel showing an airplane symbol.",
    "A real estate board offering a house for rent.",
    "A blue telephone service marker with a handset icon.",
    "A yellow cattle crossing panel showing a cow silhouette.",
    "A neon motel vacancy light glowing pink over a doorway.",
    "A green bicycle route marker showing a cyclist pictogram.",
    "A yellow low clearance panel reporting overhead bridge height.",
    "A cardboard yard notice announcing a garage sale this weekend.",
    "A blue lodging marker depicting a bed symbol.",
    "A yellow tractor crossing panel showing farm machinery.",
    "A brown state park entrance marker carved from wood.",
    "A digital billboard displaying a smartphone advertisement.",
    "A yellow pedestrian crossing panel with a walking person figure.",
    "A green distance panel listing upcoming towns and their mileage.",
    "An orange detour panel with a bent arrow pointing away.",
)

NOISE_WORDS = (
    "faded", "weathered", "tilted", "partially", "occluded", "dirty", "reflective",
    "glare", "shadowed", "worn", "scratched", "distant", "blurry", "bent",
)
SWAPS = {"right": "left", "left": "right", "turn": "turns", "turns": "turn", "no": "do",
         "stop": "step", "pass": "passing", "way": "lane", "parking": "park", "red": "light"}
LOCATIONS = (
    "in the upper right quadrant",
    "in the upper left quadrant",
    "to the right of the roadway",
    "to the left of the traffic light",
    "in the center of the image",
    "on an overhead gantry",
    "on the median to the left",
    "mounted on a pole at the right edge",
)

CONFUSERS = ("TURN", "LEFT", "RIGHT", "NO", "PARKING", "WAY", "DO", "KEEP", "STOP", "SPEED")
CONFUSION_RATE = 0.7
CONFUSION_MAX = 3
CALIBRATION_FORMAT = "signrag-calibration"
_WORD_RE = re.compile(r"<[^<>]+>|[^\s<]+")


def make_image(tag: str, seed: int = 0, size: int = 16) -> bytes:
    """Deterministic PNG whose bytes are unique to ``(tag, seed)``."""
    digest = np.frombuffer(tag.encode("utf-8"), dtype=np.uint8).sum() if tag else 0
    rng = np.random.default_rng([seed, int(digest), len(tag)] + [ord(c) for c in tag])
    pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def perturb(text: str, rng: np.random.Generator) -> str:
    """Simulate a field description: drop, swap or add a few words, sometimes misreading
    legend words that belong to look-alike classes."""
    words = _WORD_RE.findall(text.rstrip("."))
    op = rng.integers(4)
    lower = [w.lower() for w in words]
    legend_start = lower.index("legend") + 1 if "legend" in lower else 0
    if legend_start < len(words) and lower[legend_start] == "reads":
        legend_start += 1
    legend = list(range(legend_start, len(words)))
    if op == 0 and len(legend) > 1:
        del words[int(rng.choice(legend))]
    elif op == 1 and legend:
        i = int(rng.choice(legend))
        swap = SWAPS.get(words[i].lower())
        if swap:
            words[i] = swap.upper()
    # a misread legend word pulls the query toward a look-alike class
    for _ in range(int(rng.binomial(CONFUSION_MAX, CONFUSION_RATE))):
        words.append(str(rng.choice(CONFUSERS)))
    n_noise = int(rng.integers(1, 3))
    for _ in range(n_noise):
        words.insert(int(rng.integers(1, len(words) + 1)), str(rng.choice(NOISE_WORDS)))
    return " ".join(words) + "."


@dataclass
class FixtureCorpus:
    root: Path
    catalog: Path
    script: Path
    ideal: Path
    real_world: Path
    calibration: Path
    out_of_scope_test: Path
    config: Path
    scene_two_signs: Path
    scene_empty: Path
    n_classes: int = len(FIXTURE_CLASSES)


def _write_calibration(path: Path, items: List[Tuple[Path, str]]):
    base = path.parent.resolve()
    lines = [json.dumps({"format": CALIBRATION_FORMAT, "version": 1})]
    for image, label in items:
        lines.append(json.dumps({"image": image.resolve().relative_to(base).as_posix(), "label": label}))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_corpus(root, seed: int = 0, queries_per_class: int = 5, dimension: int = 64,
                 classes=FIXTURE_CLASSES) -> FixtureCorpus:
    root = Path(root)
    for sub in ("ref", "query", "oos", "scenes"):
        (root / "images" / sub).mkdir(parents=True, exist_ok=True)

    def put(rel, data):
        p = root / "images" / rel
        p.write_bytes(data)
        return p

    signs = []
    for code, name in classes:
        img = put(f"ref/{code}.png", make_image(f"ref:{code}", seed))
        signs.append(SignClass(code, name, img, "regulatory"))
    catalog = root / "catalog.jsonl"
    write_manifest(catalog, signs)

    describer = MockDescriptor(seed=seed)
    rng = np.random.default_rng(seed)
    scenes, real_world, calibration = [], [], []
    for sign in signs:
        reference = describer.reference_text(sign.name, sign.category)
        for q in range(queries_per_class):
            img = put(f"query/{sign.code}_{q}.png", make_image(f"query:{sign.code}:{q}", seed))
            desc = SignDescription(perturb(reference, rng), str(rng.choice(LOCATIONS)))
            scenes.append((img, [ScriptedSign(desc, sign.code)]))
            real_world.append(LabeledExample(img, sign.code, "real-world"))
            if q == 0:
                calibration.append((img, IN_SCOPE))

    half = len(OUT_OF_SCOPE_TEXTS) // 2
    oos_test = []
    for i, text in enumerate(OUT_OF_SCOPE_TEXTS):
        img = put(f"oos/{i:02d}.png", make_image(f"oos:{i}", seed))
        scenes.append((img, [ScriptedSign(SignDescription(text, str(rng.choice(LOCATIONS))))]))
        (calibration if i < half else oos_test).append((img, OUT_OF_SCOPE))

    by_code = {s.code: s for s in signs}
    two = put("scenes/two_signs.png", make_image("scene:two", seed))
    scenes.append((two, [
        ScriptedSign(SignDescription(describer.reference_text(by_code["R1-1"].name, "regulatory"),
                                     "in the upper right quadrant"), "R1-1"),
        ScriptedSign(SignDescription(describer.reference_text(by_code["R6-1"].name, "regulatory"),
                                     "to the left of the traffic light"), "R6-1"),
    ]))
    empty = put("scenes/empty.png", make_image("scene:empty", seed))
    scenes.append((empty, []))

    script = root / "mock_script.jsonl"
    write_mock_script(script, scenes)
    ideal = root / "dataset_ideal.jsonl"
    write_dataset(ideal, [LabeledExample(s.reference_image, s.code, "ideal") for s in signs])
    real = root / "dataset_real.jsonl"
    write_dataset(real, real_world)
    calib = root / "calibration.jsonl"
    _write_calibration(calib, calibration)
    oos_path = root / "oos_test.jsonl"
    _write_calibration(oos_path, oos_test)

    config = root / "config.json"
    config.write_text(json.dumps({
        "descriptor": "mock",
        "embedder": "mock",
        "generator": "oracle",
        "dimension": dimension,
        "seed": seed,
        "mock_catalog": "catalog.jsonl",
        "mock_script": "mock_script.jsonl",
    }, indent=2) + "\n", encoding="utf-8")
    return FixtureCorpus(root, catalog, script, ideal, real, calib, oos_path, config, two, empty, len(signs))


_WORDS_A = ("NO", "KEEP", "DO NOT", "ONLY", "ALL", "END", "BEGIN")
_WORDS_B = ("TRUCKS", "BICYCLES", "PARKING", "STOPPING", "STANDING", "PEDESTRIANS", "HORSES")
_WORDS_C = ("LEFT", "RIGHT", "AHEAD", "HERE", "ON BRIDGE", "IN TUNNEL", "AT SIGNAL")


def synthetic_classes(n: int) -> List[Tuple[str, str]]:
    """``n`` distinct (code, name) pairs for scale tests, up to 343."""
    out = []
    for a in _WORDS_A:
        for b in _WORDS_B:
            for c in _WORDS_C:
                i = len(out)
                out.append((f"R{i // 10 + 1}-{i % 10 + 1}", f"{a} {b} {c}".title()))
                if len(out) == n:
                    return out
    raise ValueError(f"at most {len(out)} synthetic classes available")
