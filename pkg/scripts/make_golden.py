"""Regenerate the golden end-to-end traces in tests/golden/ from configs/golden.json.

Only rerun this after an intentional behaviour change; the determinism test
compares fresh runs against these files byte for byte.
"""
import gzip
import tempfile
from pathlib import Path

from querybandits.pipeline import ExperimentConfig, run_experiment

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "tests" / "golden"


def main():
    config = ExperimentConfig.load(ROOT / "configs" / "golden.json")
    OUT.mkdir(parents=True, exist_ok=True)
    for old in OUT.glob("*.jsonl.gz"):
        old.unlink()
    with tempfile.TemporaryDirectory() as tmp:
        run_experiment(config, out=tmp)
        for trace in sorted((Path(tmp) / "traces").glob("*.jsonl")):
            target = OUT / (trace.name + ".gz")
            # mtime=0 keeps the archive bytes stable across regenerations
            with open(target, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
                gz.write(trace.read_bytes())
            print("wrote", target)


if __name__ == "__main__":
    main()
