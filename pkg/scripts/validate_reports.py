#!/usr/bin/env python3
"""Validate every aggregate, comparison and ablation report under a results root."""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from mambular.reports import validate_report

REPORT_FILES = ("aggregate.json", "comparison.json", "ablation.json")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    root = Path(argv[0]) if argv else Path("results")
    errors = []

    report_files = sorted(p for name in REPORT_FILES for p in root.rglob(name))
    if not report_files:
        print(f"No report files found in {root}")
        return 1

    for report_file in report_files:
        print(f"Validating {report_file.relative_to(root)}...")

        try:
            data = json.loads(report_file.read_text())
        except json.JSONDecodeError as e:
            print(f"  -> Invalid JSON: {e}")
            errors.append((report_file.name, f"Invalid JSON: {e}"))
            continue

        problems = validate_report(data)
        if problems:
            for problem in problems:
                print(f"  -> {problem}")
            errors.append((report_file.name, "; ".join(problems)))
        else:
            print("  -> Valid")

    if errors:
        print(f"\n{len(errors)} validation errors")
        return 1

    print("\nAll files valid")
    return 0


if __name__ == "__main__":
    sys.exit(main())
