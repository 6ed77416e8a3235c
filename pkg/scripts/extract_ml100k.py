"""Write MovieLens-100k ratings in ``u.data`` layout.

The GroupLens site is the canonical source. Offline, the RecBole wheel carries
the same 100,000 ratings as ``ml-100k.inter`` (tab separated, one header line)::

    pip download --no-deps -d /tmp/whl recbole
    python scripts/extract_ml100k.py /tmp/whl/recbole-*.whl data/ml-100k/u.data
"""
import sys
import zipfile
from pathlib import Path

INTER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main(src, dst):
    src = Path(src)
    if src.suffix == ".whl":
        with zipfile.ZipFile(src) as zf:
            text = zf.read(INTER).decode()
    else:
        text = src.read_text()
    lines = text.splitlines()
    if lines and not lines[0].split("\t")[0].isdigit():
        lines = lines[1:]
    dst = Path(dst)
    dst.parent.mkdir(parents=True, exist_ok=True)
    dst.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} records to {dst}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit("usage: extract_ml100k.py <recbole wheel | ml-100k.inter> <out u.data>")
    main(sys.argv[1], sys.argv[2])
