import sys
from pathlib import Path

import pytest

from pipevolve.imagecore import write_image, write_mask
from pipevolve.operators import PluginSpec

import synth

PLUGIN_DIR = Path(__file__).parent / "plugins"


def plugin(name: str, script: str, timeout: float = 120.0) -> PluginSpec:
    return PluginSpec(name, (sys.executable, str(PLUGIN_DIR / f"{script}.py")), timeout)


def plugin_command(script: str) -> str:
    return f"{sys.executable} {PLUGIN_DIR / f'{script}.py'}"


@pytest.fixture
def scene_dir(tmp_path):
    """Content images, per-image masks, styles and a config file on disk."""
    root = tmp_path / "data"
    (root / "content").mkdir(parents=True)
    (root / "masks").mkdir()
    (root / "styles").mkdir()
    conditions = list(synth.CONDITIONS)
    for i in range(5):
        img, mask = synth.scene(i, 32)
        write_image(img, root / "content" / f"img{i}.ppm")
        write_mask(mask, root / "masks" / f"img{i}.pgm")
        style, smask = synth.style_pair(conditions[i], i, 32)
        write_image(style, root / "styles" / f"{conditions[i]}.ppm")
        write_mask(smask, root / "styles" / f"{conditions[i]}.pgm")
    return root


def write_config(root: Path, extra: str = "", **overrides) -> Path:
    conditions = list(synth.CONDITIONS)
    values = {
        "seed": "4",
        "population_size": "8",
        "offspring_size": "8",
        "generations": "3",
        "operators": "darken, sharpen, adain, cacti",
        "content": ", ".join(f"content/img{i}.ppm" for i in range(5)),
        "styles": ", ".join(f"{c}:styles/{c}.ppm" for c in conditions),
        "masks": ", ".join(f"masks/img{i}.pgm" for i in range(5)),
        "style_masks": ", ".join(f"styles/{c}.pgm" for c in conditions),
        "out_dir": "out",
    }
    values.update(overrides)
    lines = [f"{k} = {v}" for k, v in values.items() if v is not None]
    path = root / "run.cfg"
    path.write_text("# test run\n" + "\n".join(lines) + "\n" + extra)
    return path
