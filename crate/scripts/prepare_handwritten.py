#!/usr/bin/env python3
"""Convert the UCI Multiple Features (handwritten digits) data into the
evifuse dataset directory layout.

Reads the six ``mfeat-*.csv`` tables shipped inside the ``mvlearn`` wheel
(header row, label in the last column) and writes ``view_<v>.csv`` plus
``labels.csv``. Usage:

    pip download mvlearn==0.5.0 --no-deps -d /tmp/mvl
    python3 scripts/prepare_handwritten.py /tmp/mvl/mvlearn-0.5.0-py3-none-any.whl data/handwritten
"""
import csv
import io
import pathlib
import sys
import zipfile

# pixel averages, Fourier, profile correlations, Zernike, Karhunen-Loeve, morphological
VIEWS = ["pix", "fou", "fac", "zer", "kar", "mor"]


def main(wheel, out):
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    labels = None
    with zipfile.ZipFile(wheel) as zf:
        for v, name in enumerate(VIEWS):
            raw = zf.read(f"mvlearn/datasets/UCImultifeature/mfeat-{name}.csv").decode()
            rows = list(csv.reader(io.StringIO(raw)))[1:]
            view_labels = [str(int(float(r[-1]))) for r in rows]
            if labels is None:
                labels = view_labels
            elif labels != view_labels:
                sys.exit(f"label column of mfeat-{name} disagrees with previous views")
            with open(out / f"view_{v}.csv", "w", newline="") as fh:
                for r in rows:
                    fh.write(",".join(r[:-1]) + "\n")
            print(f"view_{v}.csv <- mfeat-{name}: {len(rows)} x {len(rows[0]) - 1}")
    with open(out / "labels.csv", "w") as fh:
        fh.write("\n".join(labels) + "\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
