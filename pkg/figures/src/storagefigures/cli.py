"""Command-line entry point: render a named figure preset from a run directory.

    storagefigures --artifact-dir runs/all_20240101T000000 --figure fig2 --out figs/

reads the solver CLI's CSV artifacts from the run directory (never
modifying them) and writes the preset's PNG images plus one sidecar CSV
per image into the output directory.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import PRESETS, render_preset
from .tables import ArtifactError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="storagefigures",
        description="Render figures from storage-control solver artifacts.",
    )
    parser.add_argument(
        "--artifact-dir", required=True,
        help="run directory holding the solver CLI's CSV artifacts",
    )
    parser.add_argument(
        "--figure", required=True, choices=sorted(PRESETS),
        help="named figure preset to render",
    )
    parser.add_argument(
        "--out", required=True,
        help="directory the images and sidecar CSVs are written into",
    )
    args = parser.parse_args(argv)

    artifact_dir = Path(args.artifact_dir)
    if not artifact_dir.is_dir():
        print(f"figure error: artifact directory not found: {artifact_dir}",
              file=sys.stderr)
        return 2
    try:
        written = render_preset(args.figure, artifact_dir, Path(args.out))
    except (ArtifactError, FileNotFoundError, ValueError) as exc:
        print(f"figure error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
        print(path.with_suffix(".csv"))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
