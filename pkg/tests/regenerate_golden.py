"""Rewrite tests/golden/<config>/*.csv from the shipped configs.

Run after a deliberate numerical change:  python tests/regenerate_golden.py
"""

import shutil
import sys
import tempfile
from pathlib import Path

from dirac_spectral.cli import load_config, run

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"
PREFIXES = {
    "fundamental": "fundamental",
    "asymptotics": "verify-asymptotics",
    "lemma1": "lemma1-sweep",
    "eigs": "eigs",
    "expansion": "expansion-audit",
}


def command_for(config: Path) -> str:
    return PREFIXES[config.stem.split("_")[0]]


def main() -> int:
    for config in sorted((ROOT / "configs").glob("*.toml")):
        with tempfile.TemporaryDirectory() as tmp:
            files = run(command_for(config), load_config(config), Path(tmp))
        target = GOLDEN / config.stem
        shutil.rmtree(target, ignore_errors=True)
        target.mkdir(parents=True)
        for name, text in files.items():
            if name.endswith(".csv"):
                (target / name).write_text(text)
        print(f"{config.stem}: {sorted(n for n in files if n.endswith('.csv'))}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
