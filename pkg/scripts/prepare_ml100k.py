"""Materialize MovieLens 100K as ``u.data`` / ``u.item`` under data/ml-100k.

Sources, first match wins:

* ``--from-dir DIR``: an existing GroupLens ``ml-100k`` directory (copied);
* ``--from-atomic DIR``: RecBole atomic files ``ml-100k.inter`` / ``ml-100k.item``;
* default: download the ``recbole`` wheel with pip (it bundles the atomic
  files) and convert those.

The atomic interaction rows are the ``u.data`` rows in the original order.
Titles are rebuilt as ``"<title> (<year>)"``; release dates and genre flags
are not reconstructed.
"""

from __future__ import annotations

import argparse
import shutil
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
ATOMIC = "recbole/dataset_example/ml-100k/"


def convert_atomic(src: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    inter = (src / "ml-100k.inter").read_text(encoding="utf-8").splitlines()[1:]
    with open(out / "u.data", "w", encoding="latin-1", newline="\n") as fh:
        for line in inter:
            user, item, rating, ts = line.split("\t")
            fh.write(f"{user}\t{item}\t{int(float(rating))}\t{int(float(ts))}\n")

    rows = (src / "ml-100k.item").read_text(encoding="utf-8").splitlines()[1:]
    with open(out / "u.item", "w", encoding="latin-1", newline="\n") as fh:
        for line in rows:
            item, title, year, _genres = line.split("\t")
            if year.isdigit():
                fh.write(f"{item}|{title} ({year})|01-Jan-{year}|\n")
            else:
                # item 267 has no title or date upstream
                fh.write(f"{item}|unknown||\n")


def fetch_recbole_atomic(workdir: Path) -> Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(workdir), "recbole==1.2.1"],
        check=True,
    )
    wheel = next(workdir.glob("recbole-*.whl"))
    with zipfile.ZipFile(wheel) as zf:
        for name in zf.namelist():
            if name.startswith(ATOMIC):
                zf.extract(name, workdir)
    return workdir / ATOMIC


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=ROOT / "data" / "ml-100k")
    group = ap.add_mutually_exclusive_group()
    group.add_argument("--from-dir", type=Path)
    group.add_argument("--from-atomic", type=Path)
    args = ap.parse_args(argv)

    if args.from_dir:
        args.out.mkdir(parents=True, exist_ok=True)
        for name in ("u.data", "u.item"):
            shutil.copyfile(args.from_dir / name, args.out / name)
    elif args.from_atomic:
        convert_atomic(args.from_atomic, args.out)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            convert_atomic(fetch_recbole_atomic(Path(tmp)), args.out)
    print(f"wrote {args.out / 'u.data'} and {args.out / 'u.item'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
