"""Write the MNIST IDX files used by the acceptance suite into data/mnist.

Usage:
    python3 tools/fetch_mnist.py <mnist-data tarball> [out_dir]

The tarball is the npm package `mnist-data` 1.2.6 (`npm pack mnist-data@1.2.6`), which
ships the four original uncompressed IDX files under package/data/. Each file is
checked against the MD5 of the original distribution and written gzipped.
"""
import gzip
import hashlib
import pathlib
import sys
import tarfile

FILES = {
    "train-images-idx3-ubyte": "6bbc9ace898e44ae57da46a324031adb",
    "train-labels-idx1-ubyte": "a25bea736e30d166cdddb491f175f624",
    "t10k-images-idx3-ubyte": "2646ac647ad5339dbf082846283269ea",
    "t10k-labels-idx1-ubyte": "27ae3e4e09519cfbb04c329615203637",
}


def main():
    if len(sys.argv) not in (2, 3):
        sys.exit(__doc__)
    out = pathlib.Path(sys.argv[2] if len(sys.argv) == 3 else "data/mnist")
    out.mkdir(parents=True, exist_ok=True)
    with tarfile.open(sys.argv[1]) as tar:
        for name, md5 in FILES.items():
            raw = tar.extractfile(f"package/data/{name}").read()
            digest = hashlib.md5(raw).hexdigest()
            if digest != md5:
                sys.exit(f"{name}: md5 {digest}, expected {md5}")
            # mtime=0 keeps the output byte-identical across runs.
            with open(out / f"{name}.gz", "wb") as f, gzip.GzipFile(fileobj=f, mode="wb", mtime=0, filename="") as gz:
                gz.write(raw)
            print(f"{out / name}.gz: {len(raw)} bytes, md5 ok")


if __name__ == "__main__":
    main()
