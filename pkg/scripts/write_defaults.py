"""Write the default tracker config and scene spec as editable text files.

    python3 scripts/write_defaults.py configs/
"""
import sys
from pathlib import Path

from vlunitrack.config import TrackerConfig, save_config
from vlunitrack.synthdata import SceneSpec, spec_to_text

out = Path(sys.argv[1] if len(sys.argv) > 1 else "configs")
out.mkdir(parents=True, exist_ok=True)
save_config(TrackerConfig(), out / "toy.txt")
(out / "scene.txt").write_text(spec_to_text(SceneSpec()), encoding="utf-8")
print(f"wrote {out / 'toy.txt'} and {out / 'scene.txt'}")
