#!/usr/bin/env python3
"""Cross-validate Mambular and the linear baseline on every dataset directory."""

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from mambular.cli import main as cli_main
from mambular.reports import write_json


def find_datasets(root: Path) -> list:
    """Directories holding both schema.json and data.csv."""
    return sorted(p for p in root.iterdir() if (p / "schema.json").exists() and (p / "data.csv").exists())


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", type=Path, help="Directory of dataset directories")
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--config", type=Path, help="Run config applied to every dataset")
    parser.add_argument("--folds", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    datasets = find_datasets(args.root)
    if not datasets:
        print(f"No datasets found under {args.root}")
        return 1
    print(f"Running {len(datasets)} datasets...\n")

    completed = []
    errors = []
    for directory in datasets:
        print(f"[{directory.name}] Starting...")
        command = [
            "cv",
            "--schema", str(directory / "schema.json"),
            "--data", str(directory / "data.csv"),
            "--out", str(args.out),
            "--folds", str(args.folds),
            "--seed", str(args.seed),
            "--baseline",
        ]
        if args.config:
            command += ["--config", str(args.config)]
        code = cli_main(command)
        if code == 0:
            completed.append(directory.name)
            print(f"[{directory.name}] Success\n")
        else:
            errors.append((directory.name, f"exit code {code}"))
            print(f"[{directory.name}] Error: exit code {code}\n")

    manifest = {
        "version": "1.0.0",
        "generated": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
        "datasets": completed,
        "folds": args.folds,
        "seed": args.seed,
    }
    manifest_path = write_json(str(args.out / "manifest.json"), manifest)

    print("=" * 50)
    print(f"Generated manifest: {manifest_path}")
    print(f"Datasets: {len(completed)}, Errors: {len(errors)}")

    if errors:
        print("\nErrors:")
        for name, error in errors:
            print(f"  {name}: {error}")
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
