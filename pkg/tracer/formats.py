"""File formats for Vessel Tracer: images, seeds, run configuration, trees and outputs.

Coordinates in every file are ``[x, y]`` with the origin at the top-left
corner, x rightward and y downward.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from tracer.clustering import MeanShiftParams
from tracer.embedder import OracleParams
from tracer.errors import InvalidArgumentError, ParseError
from tracer.loss import LossParams
from tracer.synthetic import Scene, SceneSpec, TreeSpec
from tracer.tracing import SeedVector, TraceConfig, TraceResult
from tracer.tree import VesselTree

logger = logging.getLogger(__name__)

MASK_SUFFIX = "_mask.png"
MANIFEST_NAME = "manifest.json"

# composite colours, one per tree in seed order
PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
)


# -- images ---------------------------------------------------------------

def read_image(path: Path) -> np.ndarray:
    """Read a PNG as floats in [0, 1]: (H, W) for gray, (H, W, 3) for colour."""
    with Image.open(path) as img:
        if img.mode in ("I;16", "I;16B", "I"):
            return np.asarray(img, dtype=np.float64) / 65535.0
        if img.mode in ("1", "L", "LA"):
            return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def read_mask(path: Path) -> np.ndarray:
    """Read a PNG mask; any nonzero sample is foreground."""
    with Image.open(path) as img:
        data = np.asarray(img)
    if data.ndim == 3:
        data = data[..., :3].max(axis=-1)
    return data > 0


def read_label_map(path: Path) -> np.ndarray:
    """Read an instance label PNG; each distinct nonzero gray level or colour is one instance.

    Labels are renumbered 1..C in ascending order of the stored value.
    """
    with Image.open(path) as img:
        data = np.asarray(img)
    if data.ndim == 3:
        rgb = data[..., :3].astype(np.int64)
        data = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    values, inverse = np.unique(data, return_inverse=True)
    inverse = inverse.reshape(data.shape)
    if values[0] == 0:
        return inverse.astype(np.int32)
    return (inverse + 1).astype(np.int32)


def _save(image: Image.Image, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        image.save(path, format="PNG")
    except OSError as e:
        raise OSError(f"Cannot write {path}: {e}") from e
    return path


def write_mask(path: Path, mask: np.ndarray) -> Path:
    return _save(Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)), path)


def write_gray8(path: Path, values: np.ndarray) -> Path:
    """Values in [0, 1] quantized to 8 bits."""
    data = np.rint(np.clip(values, 0.0, 1.0) * 255).astype(np.uint8)
    return _save(Image.fromarray(data), path)


def quantize16(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * 65535).astype(np.uint16)


def write_gray16(path: Path, values: np.ndarray) -> Path:
    """Values in [0, 1] quantized to 16 bits."""
    return _save(Image.fromarray(quantize16(values)), path)


def write_rgb(path: Path, image: np.ndarray) -> Path:
    data = np.asarray(image)
    if data.dtype != np.uint8:
        data = np.rint(np.clip(data, 0.0, 1.0) * 255).astype(np.uint8)
    return _save(Image.fromarray(data), path)


def write_json(path: Path, data: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"Cannot write {path}: {e}") from e
    return path


# -- seeds ----------------------------------------------------------------

def _array_items(text: str) -> Iterator[tuple[int, Any]]:
    """Top-level items of a JSON array with the line each one starts on."""
    decoder = json.JSONDecoder()
    index = text.index("[") + 1
    while True:
        while text[index] in " \t\r\n,":
            index += 1
        if text[index] == "]":
            return
        item, end = decoder.raw_decode(text, index)
        yield text.count("\n", 0, index) + 1, item
        index = end


def _point(value: Any, name: str, line: int) -> tuple[int, int]:
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(c, int) and not isinstance(c, bool) for c in value)
    ):
        raise ParseError(f"{name} must be [x, y] integers, got {value!r}", line)
    return value[0], value[1]


def parse_seed_file(data: bytes | str, shape: Optional[Sequence[int]] = None) -> list[SeedVector]:
    """Parse and validate a seed file; ``shape`` (H, W) enables bounds checks."""
    try:
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    except UnicodeDecodeError as e:
        raise ParseError(f"Seed file is not UTF-8: {e}") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed JSON: {e.msg}", e.lineno) from e
    if not isinstance(document, list):
        raise ParseError("Seed file must hold a JSON array", 1)

    seeds: list[SeedVector] = []
    seen: set[str] = set()
    for line, item in _array_items(text):
        if not isinstance(item, dict) or set(item) != {"tree_id", "p1", "p2"}:
            raise ParseError("Each seed needs exactly tree_id, p1 and p2", line)
        tree_id = item["tree_id"]
        if not isinstance(tree_id, str) or not tree_id:
            raise ParseError(f"tree_id must be a non-empty string, got {tree_id!r}", line)
        if tree_id in seen:
            raise ParseError(f"Duplicate tree_id {tree_id!r}", line)
        seen.add(tree_id)
        p1 = _point(item["p1"], "p1", line)
        p2 = _point(item["p2"], "p2", line)
        if shape is not None:
            height, width = shape[0], shape[1]
            for name, (x, y) in (("p1", p1), ("p2", p2)):
                if not (0 <= x < width and 0 <= y < height):
                    raise ParseError(
                        f"{name} {[x, y]} of {tree_id!r} lies outside the {width}x{height} image", line
                    )
        seeds.append(SeedVector(tree_id=tree_id, p1=p1, p2=p2))
    return seeds


def format_seed_file(seeds: Sequence[SeedVector]) -> str:
    items = [
        {"tree_id": s.tree_id, "p1": [int(s.p1[0]), int(s.p1[1])], "p2": [int(s.p2[0]), int(s.p2[1])]}
        for s in seeds
    ]
    return json.dumps(items, indent=2) + "\n"


# -- run configuration ----------------------------------------------------

@dataclass
class RunConfig:
    """Parameters read from a run configuration file."""

    trace: TraceConfig = field(default_factory=TraceConfig)
    loss: LossParams = field(default_factory=LossParams)
    oracle: OracleParams = field(default_factory=OracleParams)


_CONFIG_SECTIONS = {
    "trace": TraceConfig,
    "mean_shift": MeanShiftParams,
    "loss": LossParams,
    "oracle": OracleParams,
}


def _config_keys() -> dict[str, tuple[str, Any]]:
    keys = {}
    for section, cls in _CONFIG_SECTIONS.items():
        for f in dataclasses.fields(cls):
            if f.name == "mean_shift":
                continue
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            keys[f.name] = (section, default)
    return keys


def _parse_shifts(text: str) -> tuple[tuple[int, int], ...]:
    shifts = []
    for pair in text.split(","):
        dx, sep, dy = pair.strip().partition(":")
        if not sep:
            raise ValueError(f"shift {pair.strip()!r} is not dx:dy")
        shifts.append((int(dx), int(dy)))
    return tuple(shifts)


def _convert(name: str, raw: str, default: Any) -> Any:
    if name == "shifts":
        return _parse_shifts(raw)
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return lowered in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if default is None and raw.lower() in ("none", ""):
        return None
    return float(raw)


def parse_config(text: str) -> RunConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    known = _config_keys()
    values: dict[str, dict[str, Any]] = {section: {} for section in _CONFIG_SECTIONS}
    seen: dict[str, int] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ParseError(f"Expected key = value, got {raw_line.strip()!r}", number)
        if key not in known:
            raise ParseError(f"Unknown key {key!r}", number)
        if key in seen:
            raise ParseError(f"Duplicate key {key!r} (first set on line {seen[key]})", number)
        seen[key] = number
        section, default = known[key]
        try:
            values[section][key] = _convert(key, raw, default)
        except ValueError as e:
            raise ParseError(f"Bad value for {key}: {e}", number) from e

    try:
        mean_shift = MeanShiftParams(**values["mean_shift"])
        return RunConfig(
            trace=TraceConfig(mean_shift=mean_shift, **values["trace"]),
            loss=LossParams(**values["loss"]),
            oracle=OracleParams(**values["oracle"]),
        )
    except InvalidArgumentError as e:
        raise ParseError(f"Invalid configuration: {e}") from e


# -- scene specs ----------------------------------------------------------

_SCENE_KEYS = {"width", "height", "trees", "tree_count", "noise_sigma", "rng_seed", "force_crossing", "max_attempts"}
_TREE_KEYS = {f.name for f in dataclasses.fields(TreeSpec)}


def parse_scene_spec(text: str, rng_seed: Optional[int] = None) -> SceneSpec:
    """Scene spec from JSON; ``tree_count`` repeats a default tree."""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed JSON: {e.msg}", e.lineno) from e
    if not isinstance(document, dict):
        raise ParseError("Scene spec must be a JSON object")
    unknown = set(document) - _SCENE_KEYS
    if unknown:
        raise ParseError(f"Unknown scene keys: {sorted(unknown)}")

    try:
        if "trees" in document:
            trees = []
            for entry in document["trees"]:
                bad = set(entry) - _TREE_KEYS
                if bad:
                    raise ParseError(f"Unknown tree keys: {sorted(bad)}")
                entry = {k: tuple(v) if isinstance(v, list) else v for k, v in entry.items()}
                trees.append(TreeSpec(**entry))
        else:
            trees = [TreeSpec()] * int(document.get("tree_count", 1))
        options = {k: v for k, v in document.items() if k not in ("trees", "tree_count")}
        if rng_seed is not None:
            options["rng_seed"] = rng_seed
        return SceneSpec(trees=tuple(trees), **options)
    except (InvalidArgumentError, TypeError) as e:
        raise ParseError(f"Invalid scene spec: {e}") from e


def write_scene(out_dir: Path, scene: Scene) -> list[Path]:
    """Image, semantic mask, seeds and per-tree ground truth under ``out_dir``."""
    out_dir = Path(out_dir)
    written = [
        write_rgb(out_dir / "image.png", scene.image),
        write_mask(out_dir / "semantic.png", scene.semantic),
    ]
    seeds_path = out_dir / "seeds.json"
    try:
        seeds_path.write_text(format_seed_file(scene.seeds), encoding="utf-8")
    except OSError as e:
        raise OSError(f"Cannot write {seeds_path}: {e}") from e
    written.append(seeds_path)
    for tree_id, mask in scene.instance_masks.items():
        written.append(write_mask(out_dir / "truth" / f"{tree_id}{MASK_SUFFIX}", mask))
        written.append(write_json(out_dir / "truth" / f"{tree_id}_tree.json", scene.trees[tree_id].to_dict()))
    logger.info(f"Wrote scene with {len(scene.trees)} tree(s) to {out_dir}")
    return written


# -- trees and trace outputs ----------------------------------------------

def read_tree(path: Path) -> VesselTree:
    try:
        return VesselTree.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: malformed JSON: {e.msg}", e.lineno) from e
    except (KeyError, TypeError) as e:
        raise ParseError(f"{path}: not a tree file: {e}") from e


def read_instance_dir(directory: Path) -> dict[str, np.ndarray]:
    """``<id>_mask.png`` files of a directory keyed by tree id, sorted by id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"No such directory: {directory}")
    return {
        path.name[: -len(MASK_SUFFIX)]: read_mask(path)
        for path in sorted(directory.glob(f"*{MASK_SUFFIX}"))
    }


def composite_instances(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Colour each mask with its palette entry; overlapping colours are averaged."""
    shape = masks[0].shape
    total = np.zeros(shape + (3,), dtype=np.float64)
    count = np.zeros(shape, dtype=np.int64)
    for index, mask in enumerate(masks):
        total[mask] += PALETTE[index % len(PALETTE)]
        count += mask
    safe = np.maximum(count, 1)[..., None]
    return np.rint(total / safe).astype(np.uint8)


def write_outputs(out_dir: Path, results: Sequence[TraceResult]) -> list[Path]:
    """Per-tree mask, probability, tree and hierarchy files plus a composite and manifest."""
    out_dir = Path(out_dir)
    written: list[Path] = []
    entries = []
    for result in results:
        tree_id = result.tree_id
        files = {
            "mask": write_mask(out_dir / f"{tree_id}{MASK_SUFFIX}", result.mask),
            "prob": write_gray16(out_dir / f"{tree_id}_prob.png", result.probability.value()),
            "tree": write_json(out_dir / f"{tree_id}_tree.json", result.tree.to_dict()),
            "hier": write_gray8(out_dir / f"{tree_id}_hier.png", result.colormap),
        }
        written.extend(files.values())
        entries.append({
            "tree_id": tree_id,
            "files": {kind: path.name for kind, path in files.items()},
            "patches": result.patches,
            "truncated": result.truncated,
            "census": result.tree.census(),
        })

    composite = None
    if results:
        composite = write_rgb(out_dir / "instances.png", composite_instances([r.mask for r in results]))
        written.append(composite)
    manifest = {"trees": entries, "composite": composite.name if composite else None}
    written.append(write_json(out_dir / MANIFEST_NAME, manifest))
    logger.info(f"Wrote {len(written)} file(s) to {out_dir}")
    return written
