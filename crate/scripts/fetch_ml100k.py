#!/usr/bin/env python3
"""Fetch MovieLens-100K into data/ml-100k/ (u.data and u.item).

Tries the GroupLens archive first. When that host is unreachable, rebuilds
both files from the copy bundled in the RecBole wheel on PyPI: its
`ml-100k.inter` body is byte-identical to `u.data`, and `u.item` is
reconstructed in the pipe-separated layout (release date and URL left empty,
19 genre flags in the published order).
"""
import io
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens(out):
    with urllib.request.urlopen(URL, timeout=30) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    for name in ("u.data", "u.item"):
        with open(os.path.join(out, name), "wb") as fh:
            fh.write(archive.read(f"ml-100k/{name}"))


def from_recbole(out):
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "recbole==1.2.1",
             "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = next(f for f in os.listdir(tmp) if f.endswith(".whl"))
        archive = zipfile.ZipFile(os.path.join(tmp, wheel))
        base = "recbole/dataset_example/ml-100k/ml-100k"
        inter = archive.read(base + ".inter").decode("ascii").splitlines()[1:]
        items = archive.read(base + ".item").decode("latin-1").splitlines()[1:]
    with open(os.path.join(out, "u.data"), "w", newline="\n") as fh:
        for line in inter:
            fh.write(line + "\n")
    with open(os.path.join(out, "u.item"), "w", encoding="latin-1", newline="\n") as fh:
        for line in items:
            item_id, title, year, classes = line.split("\t")
            tokens = set(classes.split(" "))
            flags = "|".join("1" if g in tokens else "0" for g in GENRES)
            full_title = f"{title} ({year})" if year else title
            fh.write(f"{item_id}|{full_title}|||{flags}\n")


def main():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out = os.path.join(root, "data", "ml-100k")
    os.makedirs(out, exist_ok=True)
    try:
        from_grouplens(out)
        print("fetched from grouplens")
    except Exception as err:  # noqa: BLE001
        print(f"grouplens unavailable ({err}); rebuilding from the RecBole wheel")
        from_recbole(out)
    print(f"wrote {out}/u.data and {out}/u.item")


if __name__ == "__main__":
    main()
