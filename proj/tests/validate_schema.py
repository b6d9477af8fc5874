"""Run `analyze` with defaults on the bundled dataset and validate the report against the schema."""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def main() -> int:
    cli, root = sys.argv[1], Path(sys.argv[2])
    schema = json.loads((root / "schemas" / "analysis_report.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    with tempfile.TemporaryDirectory() as out:
        subprocess.run([cli, "analyze", "--data", str(root / "data" / "delayed_effect.csv"), "--out", out], check=True)
        report = json.loads((Path(out) / "analysis.json").read_text())
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(report), key=lambda e: list(e.path))
    for e in errors:
        print(f"{'/'.join(map(str, e.path))}: {e.message}")
    names = [e["name"] for e in report["effects"]]
    duplicates = {n for n in names if names.count(n) > 1}
    if duplicates:
        print(f"effects listed more than once: {sorted(duplicates)}")
    ok = not errors and not duplicates
    print("schema: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
