"""Smoke test for the pyiinr extension.

Build and run from the repository root:

    cargo build -p pyiinr --features extension-module
    cp target/debug/libpyiinr.so python/pyiinr.so
    python3 python/smoke_test.py
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pyiinr  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURE = os.path.join(ROOT, "crates", "core", "tests", "fixtures", "astronaut64.ppm")


def grid(n):
    c = [(2 * i + 1) / n - 1 for i in range(n)]
    return [[x, y] for y in c for x in c]


def main():
    model = pyiinr.IinrModel(2, 3, 300, 3, "siren", omega=52.0, latent_resolution=[8, 8])
    assert model.backbone_parameter_count == 272_703, model.backbone_parameter_count
    ratio = model.added_parameter_count / model.backbone_parameter_count
    print(f"backbone {model.backbone_parameter_count} params, added {ratio:.2%}")

    coords = grid(8)
    out = model.reconstruct(coords, steps=4)
    assert len(out) == 64 and len(out[0]) == 3
    assert model.backbone_passes == 1

    z = [[0.1, 0.2, 0.3]] * 64
    assert model.reconstruct(coords, steps=1, init=z) == model.forward(coords, z, 1.0)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.bin")
        model.save(path)
        again = pyiinr.IinrModel.load(path)
        assert again.reconstruct(coords, steps=4) == out

        w, h, c, data = pyiinr.read_image(FIXTURE)
        assert (w, h, c) == (64, 64, 3)
        img = [data[i * 3:(i + 1) * 3] for i in range(w * h)]
        assert pyiinr.psnr(img, img) == 100.0
        assert abs(pyiinr.ssim(img, img, h, w) - 1.0) < 1e-12

        cfg = {
            "task": "fit",
            "image": FIXTURE,
            "crop": 16,
            "width": 16,
            "hidden_layers": 1,
            "iterations": 30,
            "eval_every": 10,
            "output_dir": os.path.join(tmp, "runs"),
        }
        records = [json.loads(r) for r in pyiinr.run_experiment(json.dumps(cfg))]
        assert [r["label"] for r in records] == ["siren", "i-siren"]
        for r in records:
            print(f"{r['label']}: PSNR {r['finals'][0]['report']['psnr']:.2f} dB")
        assert os.path.exists(os.path.join(tmp, "runs", "i-siren-seed0", "checkpoint.bin"))

        try:
            pyiinr.IinrModel(2, 3, 8, 1, "nope")
        except ValueError:
            pass
        else:
            raise AssertionError("bad activation accepted")

    print("ok")


if __name__ == "__main__":
    main()
